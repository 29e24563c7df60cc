#pragma once

#include <filesystem>

#include "merv/toytrain/model.hpp"

namespace merv {

/// One 64-bit feature container per parameter plus manifest.json listing
/// names, groups, files, shapes and the model config.
void save_checkpoint(const std::filesystem::path& dir, const ToyModel& model);

/// Loads parameters saved by save_checkpoint into a model built from the
/// same config. Missing, extra or mis-shaped tensors are FormatError.
void load_checkpoint(const std::filesystem::path& dir, ToyModel& model);

}  // namespace merv

#include "merv/toytrain/checkpoint.hpp"

#include <fstream>
#include <map>
#include <set>

#include "merv/config.hpp"
#include "merv/errors.hpp"

namespace merv {

void save_checkpoint(const std::filesystem::path& dir, const ToyModel& model) {
  std::filesystem::create_directories(dir);
  Json params = Json::array();
  model.visit([&](ParamGroup g, const std::string& name, const Tensor64& t) {
    const std::string file = name + ".mervt";
    write_feature(dir / file, t);
    params.push_back({{"name", name}, {"group", to_string(g)}, {"file", file}, {"shape", t.shape()}});
  });
  Json manifest{{"format", "MERVFTR1"}, {"dtype", "f64"}, {"config", to_json(model.config)}, {"params", params}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

void load_checkpoint(const std::filesystem::path& dir, ToyModel& model) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("checkpoint has no manifest: " + dir.string());
  Json manifest;
  try {
    manifest = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  std::map<std::string, std::string> files;
  for (const auto& p : manifest.at("params")) files[p.at("name").get<std::string>()] = p.at("file").get<std::string>();
  std::set<std::string> used;
  model.visit([&](ParamGroup, const std::string& name, Tensor64& t) {
    auto it = files.find(name);
    if (it == files.end()) throw FormatError("checkpoint lacks parameter '" + name + "'");
    Tensor64 loaded = read_feature64(dir / it->second);
    if (loaded.shape() != t.shape()) {
      throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_str(loaded.shape()) + ", expected " +
                        shape_str(t.shape()));
    }
    t = std::move(loaded);
    used.insert(name);
  });
  if (used.size() != files.size()) throw FormatError("checkpoint has parameters this model does not");
}

}  // namespace merv

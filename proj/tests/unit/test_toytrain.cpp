#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>

#include "doctest.h"
#include "merv/errors.hpp"
#include "merv/toytrain/checkpoint.hpp"
#include "merv/toytrain/model.hpp"
#include "merv/toytrain/trainer.hpp"

using namespace merv;
namespace fs = std::filesystem;

namespace {

std::vector<Example> micro_examples(const ToyModel& model, std::size_t n, std::uint64_t seed) {
  const auto task = make_synth_task(TaskKind::temporal_direction, n, seed, {model.source_frames(), 8});
  return encode_task(model, task);
}

Sample sample_of(const Example& ex) { return {ex.features, kQuestionToken, kLabelToken + ex.label}; }

std::vector<std::pair<ParamGroup, Tensor64>> snapshot(const ToyModel& m) {
  std::vector<std::pair<ParamGroup, Tensor64>> out;
  m.visit([&](ParamGroup g, const std::string&, const Tensor64& t) { out.emplace_back(g, t); });
  return out;
}

RecipeConfig short_recipe(Recipe r, std::size_t steps = 4) {
  RecipeConfig c;
  c.recipe = r;
  c.stage1_steps = c.stage2_steps = steps;
  c.batch_size = 2;
  return c;
}

std::vector<double> smoothed(const std::vector<MetricsRow>& rows, std::size_t window) {
  std::vector<double> out;
  for (std::size_t i = window; i <= rows.size(); ++i) {
    double s = 0;
    for (std::size_t j = i - window; j < i; ++j) s += rows[j].loss;
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

// Metrics of the first `steps` steps of a default run, shared between cases.
const std::vector<MetricsRow>& first_steps(TaskKind kind, std::size_t steps) {
  static std::map<std::pair<TaskKind, std::size_t>, std::vector<MetricsRow>> cache;
  auto [it, fresh] = cache.try_emplace({kind, steps});
  if (!fresh) return it->second;
  auto& rows = it->second;
  auto model = build_pipeline(default_toy_config(0));
  const auto data = encode_task(model, make_synth_task(kind, 256, 0));
  try {
    train(model, data, RecipeConfig{}, 0, [&](const MetricsRow& row) {
      rows.push_back(row);
      if (rows.size() == steps) throw steps;
    });
  } catch (std::size_t) {
  }
  return rows;
}

}  // namespace

TEST_SUITE("toytrain") {

TEST_CASE("pipeline shapes") {
  auto cfg = micro_toy_config(1);
  const auto model = build_pipeline(cfg);
  const auto data = micro_examples(model, 3, 2);
  const std::size_t l = model.visual_tokens();
  CHECK(l == 8u);
  const auto logits = batch_logits(model, {sample_of(data[0]), sample_of(data[1]), sample_of(data[2])});
  CHECK(logits.shape() == Shape{3, l + 2, cfg.llm.vocab});
  const double loss = sample_loss(model, sample_of(data[0]));
  CHECK(std::isfinite(loss));
  CHECK(loss > 0);

  cfg.fusion.strategy = FusionStrategy::concat_seq;
  cfg.llm.context = 0;
  const auto seq = build_pipeline(cfg);
  CHECK(seq.visual_tokens() == 2 * l);
  Graph g;
  CHECK(forward(g, seq, sample_of(data[0])).sequence == 2 * l + 2);
  CHECK(std::isfinite(sample_loss(seq, sample_of(data[0]))));
}

TEST_CASE("pipeline is deterministic in its seed") {
  const auto a = build_pipeline(micro_toy_config(3)), b = build_pipeline(micro_toy_config(3));
  const auto sa = snapshot(a), sb = snapshot(b);
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].second == sb[i].second);
}

TEST_CASE("parameter names are unique and grouped") {
  const auto m = build_pipeline(micro_toy_config());
  std::vector<std::string> names;
  std::size_t llm = 0, proj = 0, fus = 0;
  m.visit([&](ParamGroup g, const std::string& n, const Tensor64&) {
    names.push_back(n);
    llm += g == ParamGroup::llm;
    proj += g == ParamGroup::projector;
    fus += g == ParamGroup::fusion;
  });
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK(llm > 0);
  CHECK(proj > 0);
  CHECK(fus >= 1);
  for (auto g : {ParamGroup::llm, ParamGroup::projector, ParamGroup::fusion})
    CHECK(param_group_from_string(to_string(g)) == g);
}

TEST_CASE("frozen groups get no gradient") {
  const auto model = build_pipeline(micro_toy_config(4));
  const auto data = micro_examples(model, 1, 5);
  auto grads = Gradients::zeros_like(model);
  Graph g;
  const auto out = forward(g, model, sample_of(data[0]), &grads, {ParamGroup::projector});
  g.backward(out.loss);
  std::size_t i = 0;
  double proj_norm = 0;
  model.visit([&](ParamGroup group, const std::string& name, const Tensor64&) {
    const auto& s = grads.slots[i++];
    double n = 0;
    for (double v : s.values()) n += v * v;
    CAPTURE(name);
    if (group == ParamGroup::projector)
      proj_norm += n;
    else
      CHECK(n == 0.0);
  });
  CHECK(proj_norm > 0);
}

TEST_CASE("gradients match finite differences on the micro model") {
  auto model = build_pipeline(micro_toy_config(6));
  const auto data = micro_examples(model, 1, 7);
  const auto report = grad_check(model, sample_of(data[0]), {ParamGroup::fusion, ParamGroup::projector});
  CHECK(report.max_relative_error < 1e-4);
  bool saw_query = false, saw_projection = false;
  for (const auto& e : report.params) {
    CAPTURE(e.name);
    CHECK(e.coordinates > 0);
    saw_query |= e.name.find("query") != std::string::npos;
    saw_projection |= e.name.find("projection") != std::string::npos;
  }
  CHECK(saw_query);
  CHECK(saw_projection);

  const auto llm = grad_check(model, sample_of(data[0]), {ParamGroup::llm}, {"lm_head", "layer0.wq"});
  CHECK(llm.max_relative_error < 1e-4);
}

TEST_CASE("zero learning rate changes nothing") {
  auto model = build_pipeline(micro_toy_config(8));
  const auto data = micro_examples(model, 4, 9);
  const auto before = snapshot(model);
  auto r = short_recipe(Recipe::full, 3);
  r.stage1_lr = r.stage2_lr = 0;
  train(model, data, r, 1);
  const auto after = snapshot(model);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].second == after[i].second);
}

TEST_CASE("each recipe updates exactly its groups") {
  for (auto recipe : {Recipe::frozen, Recipe::full, Recipe::two_stage_frozen_llm, Recipe::mixed_single_stage}) {
    CAPTURE(to_string(recipe));
    auto base = short_recipe(recipe);
    base.stage1_lr = 1e-3;
    base.stage2_lr = 2e-3;
    const auto stages = base.stages();
    const auto model = build_pipeline(micro_toy_config(10));
    const auto data = micro_examples(model, 6, 11);
    const auto before = snapshot(model);
    for (const auto& stage : stages) {
      CAPTURE(stage.name);
      // silence every other stage through its learning rate
      auto r = base;
      if (stage.lr != base.stage1_lr) r.stage1_lr = 0;
      if (stage.lr != base.stage2_lr) r.stage2_lr = 0;
      auto copy = model;
      train(copy, data, r, 2);
      const auto after = snapshot(copy);
      for (std::size_t i = 0; i < before.size(); ++i) {
        const bool trainable =
            std::find(stage.trainable.begin(), stage.trainable.end(), before[i].first) != stage.trainable.end();
        CHECK((before[i].second == after[i].second) != trainable);
      }
    }
  }
}

TEST_CASE("recipe stage tables") {
  RecipeConfig r;
  r.recipe = Recipe::frozen;
  auto s = r.stages();
  REQUIRE(s.size() == 1);
  CHECK(s[0].trainable == std::vector<ParamGroup>{ParamGroup::projector, ParamGroup::fusion});
  CHECK(s[0].prompt == PromptMode::question);
  r.recipe = Recipe::full;
  s = r.stages();
  REQUIRE(s.size() == 2);
  CHECK(s[0].prompt == PromptMode::caption);
  CHECK(s[0].trainable.size() == 3);
  CHECK(s[1].trainable.size() == 3);
  r.recipe = Recipe::two_stage_frozen_llm;
  s = r.stages();
  REQUIRE(s.size() == 2);
  CHECK(s[0].trainable.size() == 2);
  CHECK(s[1].trainable.size() == 3);
  r.recipe = Recipe::mixed_single_stage;
  s = r.stages();
  REQUIRE(s.size() == 1);
  CHECK(s[0].prompt == PromptMode::mixed);
  for (auto x : {Recipe::frozen, Recipe::full, Recipe::two_stage_frozen_llm, Recipe::mixed_single_stage})
    CHECK(recipe_from_string(to_string(x)) == x);
  CHECK_THROWS_AS(recipe_from_string("lora"), ConfigError);
}

TEST_CASE("learning rate schedule") {
  RecipeConfig r;
  // 100 steps: 3 warmup steps reaching base at step 2, then cosine to 0
  CHECK(scheduled_lr(r, 1.0, 0, 100) == doctest::Approx(1.0 / 3));
  CHECK(scheduled_lr(r, 1.0, 2, 100) == doctest::Approx(1.0));
  CHECK(scheduled_lr(r, 1.0, 99, 100) < 1e-3);
  double prev = 2;
  for (std::size_t s = 2; s < 100; ++s) {
    const double lr = scheduled_lr(r, 1.0, s, 100);
    CHECK(lr <= prev);
    CHECK(lr >= 0);
    prev = lr;
  }
  r.schedule = "constant";
  CHECK(scheduled_lr(r, 0.5, 50, 100) == 0.5);
}

TEST_CASE("divergence is reported with its step") {
  auto model = build_pipeline(micro_toy_config(12));
  const auto data = micro_examples(model, 4, 13);
  model.llm.lm_head[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(model, data, short_recipe(Recipe::frozen), 1);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("at step 0") != std::string::npos);
  }
}

TEST_CASE("training is deterministic") {
  auto a = build_pipeline(micro_toy_config(14)), b = build_pipeline(micro_toy_config(14));
  const auto data = micro_examples(a, 6, 15);
  const auto ra = train(a, data, short_recipe(Recipe::full), 3), rb = train(b, data, short_recipe(Recipe::full), 3);
  REQUIRE(ra.history.size() == 8);
  for (std::size_t i = 0; i < ra.history.size(); ++i) CHECK(ra.history[i].loss == rb.history[i].loss);
  const auto sa = snapshot(a), sb = snapshot(b);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].second == sb[i].second);
}

TEST_CASE("checkpoint round trip") {
  auto model = build_pipeline(micro_toy_config(16));
  const auto data = micro_examples(model, 4, 17);
  train(model, data, short_recipe(Recipe::full, 2), 4);
  const fs::path dir = fs::temp_directory_path() / "merv_unit_ckpt";
  fs::remove_all(dir);
  save_checkpoint(dir, model);
  CHECK(fs::exists(dir / "manifest.json"));
  auto fresh = build_pipeline(micro_toy_config(16));
  load_checkpoint(dir, fresh);
  const auto a = snapshot(model), b = snapshot(fresh);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second == b[i].second);
  CHECK(sample_loss(model, sample_of(data[0])) == sample_loss(fresh, sample_of(data[0])));

  auto other = micro_toy_config(16);
  other.llm.vocab = 12;
  auto wrong = build_pipeline(other);
  CHECK_THROWS_AS(load_checkpoint(dir, wrong), FormatError);
}

TEST_CASE("synthetic tasks") {
  const auto task = make_synth_task(TaskKind::temporal_direction, 1000, 18);
  std::size_t ones = 0;
  for (const auto& it : task.items) ones += it.label == 1;
  CHECK(std::fabs(static_cast<double>(ones) / 1000.0 - 0.5) <= 0.02);
  const auto mixed = make_synth_task(TaskKind::mixed, 1000, 19);
  CHECK(mixed.classes == 4);
  std::vector<std::size_t> counts(4);
  for (const auto& it : mixed.items) ++counts.at(static_cast<std::size_t>(it.label));
  for (auto c : counts) CHECK(std::fabs(static_cast<double>(c) / 1000.0 - 0.25) <= 0.02);

  Rng rng(20);
  for (int i = 0; i < 20; ++i) {
    const bool left = i % 2;
    auto v = make_direction_video(rng, left);
    const int label = left ? 1 : 0;
    CHECK(reversed_label(label) == 1 - label);
    // the bar in the reversed clip moves the other way
    auto centroid = [](const VideoTensor& clip, std::size_t f) {
      const Tensor t = clip.pixels();
      const std::size_t h = clip.height(), w = clip.width();
      // the bar differs from the background; find its column from row 0
      const float bg = t.at({f, 0, w - 1, 0}) == t.at({f, 0, 0, 0}) ? t.at({f, 0, 0, 0}) : -1.0f;
      (void)h;
      double col = 0, n = 0;
      for (std::size_t x = 0; x < w; ++x)
        if (bg >= 0 && t.at({f, 0, x, 0}) != bg) {
          col += static_cast<double>(x);
          n += 1;
        }
      return n ? col / n : -1.0;
    };
    const auto r = v.reversed();
    const double a0 = centroid(v, 0), a1 = centroid(v, 1), b0 = centroid(r, 0), b1 = centroid(r, 1);
    if (a0 >= 0 && a1 >= 0 && b0 >= 0 && b1 >= 0) CHECK((a1 - a0) * (b1 - b0) < 0);
  }

  const auto model = build_pipeline(default_toy_config(21));
  const auto clips = make_synth_task(TaskKind::temporal_direction, 4, 22);
  for (const auto& it : clips.items) {
    const auto f = model.encode(it.video), fr = model.encode(it.video.reversed());
    CHECK(f[1] == fr[1]);   // spatial kind
    CHECK_FALSE(f[0] == fr[0]);
  }
  CHECK(task_kind_from_string(to_string(TaskKind::spatial_pattern)) == TaskKind::spatial_pattern);
}

TEST_CASE("training loss falls over the first 100 steps") {
  for (auto kind : {TaskKind::temporal_direction, TaskKind::spatial_pattern, TaskKind::mixed}) {
    CAPTURE(to_string(kind));
    const auto s = smoothed(first_steps(kind, 100), 10);
    CHECK(s.back() < 0.5 * s.front());
  }
}

TEST_CASE("smoothed training loss is monotone over the first 100 steps" * doctest::may_fail()) {
  for (auto kind : {TaskKind::temporal_direction, TaskKind::spatial_pattern, TaskKind::mixed}) {
    CAPTURE(to_string(kind));
    const auto s = smoothed(first_steps(kind, 100), 10);
    std::size_t rises = 0;
    for (std::size_t i = 1; i < s.size(); ++i) rises += s[i] > s[i - 1];
    CHECK(rises == 0u);
  }
}

}  // TEST_SUITE

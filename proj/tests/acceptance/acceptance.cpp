// Runs acceptance criteria 1-9 and prints one PASS/FAIL line each.
// Usage: acceptance [criterion...]   (default: all)

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "merv/config.hpp"
#include "merv/costmodel.hpp"
#include "merv/encoders.hpp"
#include "merv/errors.hpp"
#include "merv/fusion.hpp"
#include "merv/scheduler.hpp"
#include "merv/toytrain/model.hpp"
#include "merv/toytrain/synth_task.hpp"
#include "merv/toytrain/trainer.hpp"

using namespace merv;
namespace fs = std::filesystem;

namespace {

/// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// -- 1 ------------------------------------------------------------------------

void shape_fidelity(Check& c) {
  ProjectorConfig proj;
  proj.target_h = proj.target_w = 8;
  proj.llm_dim = 4096;
  const auto ens = default_ensemble();
  std::vector<EncoderKind> kinds;
  for (const auto& p : ens) kinds.push_back(default_kind(p.name));
  const auto pipe = VisualPipeline::build(ens, kinds, 16, proj, FusionConfig{}, 0);

  Rng rng(1);
  const std::size_t frames = pipe.source_frames();
  std::vector<float> px(frames * 32 * 32 * 3);
  for (auto& v : px) v = static_cast<float>(rng.uniform());
  const VideoTensor video(Tensor({frames, 32, 32, 3}, std::move(px)));

  const auto features = pipe.encode(video);
  for (std::size_t e = 0; e < features.size(); ++e)
    c.expect(features[e].shape() == pipe.encoders[e].profile().output_shape(),
             pipe.encoders[e].profile().name + " feature shape");
  const auto aligned = pipe.project(features);
  for (std::size_t e = 0; e < aligned.size(); ++e)
    c.expect(aligned[e].shape() == Shape{1024, 4096},
             pipe.encoders[e].profile().name + " aligned shape " + shape_str(aligned[e].shape()));
  const auto fused = fuse(aligned, pipe.fusion, pipe.fusion_params);
  c.expect(fused.tokens.shape() == Shape{1024, 4096}, "fused shape " + shape_str(fused.tokens.shape()));
  c.note("4 x (1024, 4096) -> " + shape_str(fused.tokens.shape()));
}

// -- 2 ------------------------------------------------------------------------

void projector_cost(Check& c) {
  const auto lb = default_profile("languagebind");
  ProjectorConfig cfg;
  cfg.target_h = cfg.target_w = 8;
  cfg.llm_dim = 4096;
  const double p8 = projector_flops_for(cfg, lb.at_output_frames(8)).pooling;
  const double p16 = projector_flops_for(cfg, lb.at_output_frames(16)).pooling;
  c.expect(std::fabs(p8 - 2.10e6) / 2.10e6 <= 0.05, "t=8 pooling " + fmt("%.0f", p8));
  c.expect(std::fabs(p16 - 4.19e6) / 4.19e6 <= 0.05, "t=16 pooling " + fmt("%.0f", p16));
  const auto params = count_projector_params(cfg, default_ensemble()).total();
  c.expect(params == 14680064u, "avg params " + std::to_string(params));
  cfg.variant = ProjectorVariant::attn_resampler;
  const double attn = static_cast<double>(projector_internal_params(cfg, 1024));
  c.expect(std::fabs(attn - 12.7e6) / 12.7e6 <= 0.02, "resampler params " + fmt("%.0f", attn));
  c.note("pool " + fmt("%.0f", p8) + " / " + fmt("%.0f", p16) + ", params " + std::to_string(params) +
         ", resampler " + fmt("%.0f", attn));
}

// -- 3 ------------------------------------------------------------------------

void strategy_cost(Check& c) {
  const auto cross = pipeline_cost(full_scale_config(FusionStrategy::cross_attn));
  const auto seq = pipeline_cost(full_scale_config(FusionStrategy::concat_seq));
  const double ratio = seq.total_flops / cross.total_flops;
  const double llm_ratio = seq.stage("llm").flops / cross.stage("llm").flops;
  c.expect(ratio >= 2.0 && ratio <= 4.0, "total ratio " + fmt("%.4f", ratio));
  c.expect(llm_ratio == 4.0, "llm ratio " + fmt("%.17g", llm_ratio));
  c.note("total " + fmt("%.4f", ratio) + ", llm " + fmt("%.1f", llm_ratio));
}

// -- 4 ------------------------------------------------------------------------

void cross_attention(Check& c) {
  Rng rng(4);
  auto random = [&](Shape s) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = static_cast<float>(rng.normal());
    return t;
  };
  const auto q = random({1, 16});

  const auto x = random({8, 16});
  const auto one = cross_attend(q, {x});
  c.expect(one.weights.numel() == 1 && one.weights[0] == 1.0f, "N=1 weight");
  c.expect(one.output == x, "N=1 identity");

  const auto same = cross_attend(q, {x, x, x});
  bool collapse = same.output.shape() == x.shape();
  for (std::size_t i = 0; collapse && i < x.numel(); ++i) collapse = std::fabs(same.output[i] - x[i]) <= 1e-6f;
  c.expect(collapse, "equal-feature collapse");
  for (std::size_t e = 0; e < 3; ++e)
    c.expect(std::fabs(same.weights[e] - 1.0f / 3) <= 1e-6f, "equal features get equal weight");

  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 5);
    std::vector<Tensor> xs;
    for (std::size_t e = 0; e < n; ++e) xs.push_back(random({4, 16}));
    const auto r = cross_attend(random({1, 16}), xs);
    double s = 0;
    for (std::size_t e = 0; e < n; ++e) {
      c.expect(r.weights[e] >= 0, "nonnegative weight");
      s += r.weights[e];
    }
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  c.expect(worst <= 1e-6, "simplex " + fmt("%.2e", worst));

  // Q = [sqrt(d) ln 3, 0], keys [1,0] and [0,0]: softmax(ln 3, 0) = [3/4, 1/4].
  const double d = 2;
  BasicTensor<double> q2({1, 2}, std::vector<double>{std::sqrt(d) * std::log(3.0), 0});
  BasicTensor<double> a({1, 2}, std::vector<double>{1, 0}), b({1, 2}, std::vector<double>{0, 0});
  const auto hand = cross_attend(q2, {a, b});
  c.expect(std::fabs(hand.weights[0] - 0.75) <= 1e-12 && std::fabs(hand.weights[1] - 0.25) <= 1e-12,
           "hand case " + fmt("%.15f", hand.weights[0]));
  c.expect(std::fabs(hand.output[0] - 0.75) <= 1e-12 && hand.output[1] == 0.0, "hand case output");
  c.note("simplex max |sum-1| " + fmt("%.1e", worst) + ", hand " + fmt("%.6f", hand.weights[0]));
}

// -- 5 ------------------------------------------------------------------------

void gradient_fidelity(Check& c) {
  auto model = build_pipeline(micro_toy_config(5));
  const auto task = make_synth_task(TaskKind::temporal_direction, 2, 5, {model.source_frames(), 8});
  const auto data = encode_task(model, task);
  double worst = 0;
  std::set<std::string> kinds;
  for (const auto& ex : data) {
    const Sample s{ex.features, kQuestionToken, kLabelToken + ex.label};
    const auto r = grad_check(model, s, {ParamGroup::fusion, ParamGroup::projector}, {}, 1e-5);
    for (const auto& p : r.params) {
      if (p.name.find("query") != std::string::npos) kinds.insert("Q");
      if (p.name.find(".projection") != std::string::npos) kinds.insert("W_e");
      if (p.name.find("latent") != std::string::npos || p.name.find(".wq") != std::string::npos) kinds.insert("resampler");
      if (p.max_relative_error >= 1e-4) c.expect(false, p.name + " " + fmt("%.2e", p.max_relative_error));
    }
    worst = std::max(worst, r.max_relative_error);
  }
  c.expect(kinds.size() == 3, "missing parameter kinds");
  c.expect(worst < 1e-4, "max relative error " + fmt("%.2e", worst));
  c.note("max relative error " + fmt("%.2e", worst) + " over Q, W_e, resampler");
}

// -- 6 ------------------------------------------------------------------------

void parallelism(Check& c) {
  double worst = 0;
  const auto ens = default_ensemble();
  for (double eps : {0.0, 0.5, 1.0, 2.0}) {
    const auto p = latency_profile_from(ens, 1, 1, 200, eps);
    double slowest = 0;
    for (const auto& e : p.encoders)
      slowest = std::max(slowest, simulate_step(p.subset({e.name}), SchedulePolicy::parallel, 4).makespan);
    const double all = simulate_step(p, SchedulePolicy::parallel, 4).makespan;
    worst = std::max(worst, all / slowest);
  }
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    LatencyProfile p;
    for (int e = 0; e < 4; ++e) p.encoders.push_back({"e" + std::to_string(e), rng.uniform(5, 40), rng.uniform(0, 2)});
    p.fusion_ms = rng.uniform(0, 5);
    p.llm_ms = rng.uniform(100, 400);
    p.dispatch_ms = rng.uniform(0, 2);
    double slowest = 0;
    for (const auto& e : p.encoders)
      slowest = std::max(slowest, simulate_step(p.subset({e.name}), SchedulePolicy::parallel, 4).makespan);
    worst = std::max(worst, simulate_step(p, SchedulePolicy::parallel, 4).makespan / slowest);
  }
  c.expect(worst <= 1.2, "parallel / slowest single " + fmt("%.4f", worst));

  std::size_t violations = 0;
  for (int i = 0; i < 1000; ++i) {
    LatencyProfile p;
    const int n = 1 + static_cast<int>(rng.next_u64() % 8);
    for (int e = 0; e < n; ++e) p.encoders.push_back({"e" + std::to_string(e), rng.uniform(5, 80), rng.uniform(0, 5)});
    p.fusion_ms = rng.uniform(0, 10);
    p.llm_ms = rng.uniform(0, 400);
    p.dispatch_ms = rng.uniform(0, 2);
    const std::size_t lanes = 1 + rng.next_u64() % 8;
    violations += simulate_step(p, SchedulePolicy::serial, lanes).makespan <
                  simulate_step(p, SchedulePolicy::parallel, lanes).makespan;
  }
  c.expect(violations == 0, std::to_string(violations) + " serial < parallel");
  c.note("worst ratio " + fmt("%.4f", worst) + ", serial >= parallel on 1000/1000");
}

// -- 7 ------------------------------------------------------------------------

Evaluation run_task(TaskKind kind, std::uint64_t seed) {
  const ToyRunConfig defaults;
  auto model = build_pipeline(default_toy_config(seed));
  const SynthGeometry geom{model.source_frames(), 16};
  const auto train_set = encode_task(model, make_synth_task(kind, defaults.train_size, seed, geom));
  const auto heldout =
      encode_task(model, make_synth_task(kind, defaults.heldout_size, Rng::derive(seed, "heldout").next_u64(), geom));
  train(model, train_set, defaults.recipe, seed);
  return evaluate(model, heldout);
}

void specialization(Check& c) {
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto t = run_task(TaskKind::temporal_direction, seed);
    const auto s = run_task(TaskKind::spatial_pattern, seed);
    const std::string tag = "seed " + std::to_string(seed) + ": ";
    c.expect(t.accuracy > 0.9, tag + "temporal accuracy " + fmt("%.3f", t.accuracy));
    c.expect(t.mean_weights[0] > 0.5, tag + "temporal weight " + fmt("%.3f", t.mean_weights[0]));
    c.expect(s.mean_weights[1] > s.mean_weights[0], tag + "spatial weight " + fmt("%.3f", s.mean_weights[1]));
    c.note(tag + "acc " + fmt("%.3f", t.accuracy) + "/" + fmt("%.3f", s.accuracy) + ", w_temporal " +
           fmt("%.3f", t.mean_weights[0]) + ", w_spatial " + fmt("%.3f", s.mean_weights[1]));
  }
}

// -- 8 ------------------------------------------------------------------------

using Snapshot = std::vector<std::pair<ParamGroup, Tensor64>>;

Snapshot snapshot(const ToyModel& m) {
  Snapshot out;
  m.visit([&](ParamGroup g, const std::string&, const Tensor64& t) { out.emplace_back(g, t); });
  return out;
}

/// Groups with at least one changed tensor, and groups that are bitwise unchanged.
std::pair<std::set<ParamGroup>, std::set<ParamGroup>> diff(const Snapshot& a, const Snapshot& b) {
  std::set<ParamGroup> changed, untouched{ParamGroup::llm, ParamGroup::projector, ParamGroup::fusion};
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].second == b[i].second)) {
      changed.insert(a[i].first);
      untouched.erase(a[i].first);
    }
  return {changed, untouched};
}

void recipe_freezing(Check& c) {
  const ToyRunConfig defaults;
  for (auto recipe : {Recipe::frozen, Recipe::full, Recipe::two_stage_frozen_llm, Recipe::mixed_single_stage}) {
    auto model = build_pipeline(default_toy_config(8));
    const auto data = encode_task(model, make_synth_task(TaskKind::mixed, 64, 8, {model.source_frames(), 16}));
    RecipeConfig rc = defaults.recipe;
    rc.recipe = recipe;
    rc.stage1_steps = rc.stage2_steps = 12;
    const auto stages = rc.stages();
    std::vector<Snapshot> marks{snapshot(model)};
    std::size_t boundary = stages[0].steps;
    train(model, data, rc, 8, [&](const MetricsRow& row) {
      if (row.step + 1 == boundary) {
        marks.push_back(snapshot(model));
        if (marks.size() <= stages.size() - 1) boundary += stages[marks.size() - 1].steps;
      }
    });
    std::string summary = to_string(recipe) + ":";
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto [changed, untouched] = diff(marks[s], marks[s + 1]);
      const std::set<ParamGroup> want(stages[s].trainable.begin(), stages[s].trainable.end());
      const std::string tag = to_string(recipe) + " " + stages[s].name;
      c.expect(changed == want, tag + " updated the wrong groups");
      for (auto g : untouched) c.expect(!want.count(g), tag + " left " + to_string(g) + " untouched");
      summary += " " + stages[s].name + "{";
      for (auto g : changed) summary += (summary.back() == '{' ? "" : ",") + to_string(g);
      summary += "}";
    }
    if (recipe == Recipe::frozen) {
      const auto [changed, untouched] = diff(marks.front(), marks.back());
      c.expect(untouched.count(ParamGroup::llm) == 1, "frozen recipe changed the LLM");
    }
    if (recipe == Recipe::full) {
      const auto [changed, untouched] = diff(marks[0], marks[1]);
      c.expect(changed.count(ParamGroup::llm) == 1, "full recipe left the LLM unchanged in stage 1");
    }
    c.note(summary);
  }
}

// -- 9 ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MERV_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void determinism(Check& c) {
  const fs::path root = fs::temp_directory_path() / "merv_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);

  // A reduced ensemble keeps encode and fuse fast; cost and simulate also run on the defaults.
  RunConfig cfg;
  cfg.profiles = default_ensemble();
  for (auto& p : cfg.profiles) {
    p.out_h = p.out_w = 4;
    p.dim /= 16;
    p.input_frames /= 4;
    p.out_t /= 4;
  }
  cfg.t = 4;
  cfg.projector.target_h = cfg.projector.target_w = 2;
  cfg.projector.llm_dim = 64;
  cfg.toy.train_size = 16;
  cfg.toy.heldout_size = 8;
  cfg.toy.recipe.stage1_steps = cfg.toy.recipe.stage2_steps = 3;
  const fs::path config = root / "small.json";
  std::ofstream(config) << to_json(cfg).dump(2);

  Rng rng(9);
  const auto clip = make_direction_video(rng, true, {8, 16});
  write_feature(root / "clip.mervt", clip.pixels());

  std::size_t commands = 0;
  auto pass = [&](const std::string& tag) {
    const fs::path out = root / tag;
    const std::string small = "--config '" + config.string() + "' --seed 11 --out '" + out.string() + "' ";
    const std::string defaults = "--seed 11 --out '" + (out / "full").string() + "' ";
    const fs::path clip_dir = out / "videos" / "clip";
    const std::string encode_to = "--config '" + config.string() + "' --seed 11 --out '" + clip_dir.string() + "' ";
    const std::vector<std::string> cmds{
        encode_to + "encode --video '" + (root / "clip.mervt").string() + "'",
        small + "fuse --features '" + (clip_dir / "languagebind.mervt").string() + "' '" +
            (clip_dir / "dinov2.mervt").string() + "' '" + (clip_dir / "vivit.mervt").string() + "' '" +
            (clip_dir / "siglip.mervt").string() + "'",
        small + "cost",
        defaults + "cost",
        defaults + "simulate --sweep",
        defaults + "--format json simulate --policy serial",
        small + "train-toy --quiet --dump-features",
        small + "analyze --features '" + (out / "features").string() + "' --checkpoint '" +
            (out / "checkpoint").string() + "'",
        small + "--format json analyze --features '" + (out / "videos").string() + "' --top-k 1",
    };
    commands = cmds.size();
    std::vector<std::string> stdouts;
    for (std::size_t i = 0; i < cmds.size(); ++i) {
      const fs::path log = root / (tag + "_" + std::to_string(i) + ".log");
      const int code = run_cli(cmds[i], log);
      c.expect(code == 0, "command " + std::to_string(i) + " exited " + std::to_string(code));
      std::string text = slurp(log);
      for (std::size_t p; (p = text.find(out.string())) != std::string::npos;) text.replace(p, out.string().size(), "OUT");
      stdouts.push_back(text);
    }
    return stdouts;
  };
  const auto a = pass("a"), b = pass("b");
  for (std::size_t i = 0; i < a.size(); ++i) c.expect(a[i] == b[i], "stdout of command " + std::to_string(i));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "a");
    c.expect(fs::exists(root / "b" / rel) && slurp(e.path()) == slurp(root / "b" / rel), "differs: " + rel.string());
    ++files;
  }

  // bit-exact container round trips
  std::size_t trips = 0;
  for (int i = 0; i < 20; ++i) {
    Shape s;
    const std::size_t rank = 1 + rng.next_u64() % 4;
    for (std::size_t r = 0; r < rank; ++r) s.push_back(1 + rng.next_u64() % 6);
    Tensor t(s);
    Tensor64 t64(s);
    for (std::size_t k = 0; k < t.numel(); ++k) {
      t[k] = static_cast<float>(rng.normal() * 1e3);
      t64[k] = rng.normal() * 1e-3;
    }
    const auto path = root / ("trip" + std::to_string(i) + ".mervt");
    write_feature(path, t);
    c.expect(read_feature(path) == t && encode_feature(read_feature(path)) == read_file_bytes(path), "f32 round trip");
    write_feature(path, t64);
    c.expect(read_feature64(path) == t64 && encode_feature(read_feature64(path)) == read_file_bytes(path),
             "f64 round trip");
    trips += 2;
  }
  // features written by encode read back as written
  const auto enc = read_feature(root / "a" / "videos" / "clip" / "dinov2.mervt");
  c.expect(encode_feature(enc) == read_file_bytes(root / "a" / "videos" / "clip" / "dinov2.mervt"), "encode output round trip");
  c.note(std::to_string(commands) + " commands x2, " + std::to_string(files) + " files identical, " +
         std::to_string(trips) + " container round trips");
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<void(Check&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "shape fidelity", 1, shape_fidelity},
      {2, "projector cost", 1, projector_cost},
      {3, "fusion strategy cost ordering", 1, strategy_cost},
      {4, "cross-attention correctness", 1, cross_attention},
      {5, "gradient fidelity", 60, gradient_fidelity},
      {6, "parallelism", 10, parallelism},
      {7, "specialization", 600, specialization},
      {8, "recipe freezing", 300, recipe_freezing},
      {9, "determinism", 60, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& cr : all) {
    if (!only.empty() && !only.count(cr.id)) continue;
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = c.failures.empty();
    failed += !ok;
    std::printf("criterion %d %s: %s [%.1f s, budget %.0f s%s]\n", cr.id, cr.name, ok ? "PASS" : "FAIL", secs,
                cr.budget_s, secs > cr.budget_s ? ", over budget on this host" : "");
    for (const auto& n : c.notes) std::printf("    %s\n", n.c_str());
    for (const auto& f : c.failures) std::printf("    failed: %s\n", f.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}

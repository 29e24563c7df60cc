#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "merv/config.hpp"
#include "merv/costmodel.hpp"
#include "merv/encoders.hpp"
#include "merv/errors.hpp"
#include "merv/fusion.hpp"
#include "merv/rng.hpp"
#include "merv/scheduler.hpp"
#include "merv/toytrain/checkpoint.hpp"
#include "merv/toytrain/model.hpp"
#include "merv/toytrain/synth_task.hpp"
#include "merv/toytrain/trainer.hpp"

namespace fs = std::filesystem;
using merv::Json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "table";
};

merv::RunConfig resolve_config(const Globals& g) {
  merv::RunConfig c = g.config.empty() ? merv::RunConfig{} : merv::load_run_config(g.config);
  c = c.with_seed(g.seed.value_or(c.seed));
  if (!g.out.empty()) c.out_dir = g.out;
  c.validate();
  return c;
}

fs::path out_dir(const merv::RunConfig& c) {
  fs::path p(c.out_dir);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw merv::FormatError("cannot write '" + path.string() + "'");
  os << text;
}

std::string shape_string(const merv::Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Json shape_json(const merv::Shape& s) {
  Json j = Json::array();
  for (auto v : s) j.push_back(v);
  return j;
}

bool as_json(const Globals& g) { return g.format == "json"; }

merv::VisualPipeline build_visual_pipeline(const merv::RunConfig& c, const std::vector<std::string>& names = {}) {
  std::vector<merv::EncoderProfile> profiles;
  std::vector<merv::EncoderKind> kinds;
  const auto all_kinds = c.resolved_kinds();
  if (names.empty()) {
    profiles = c.profiles;
    kinds = all_kinds;
  } else {
    for (const auto& n : names) {
      auto it = std::find_if(c.profiles.begin(), c.profiles.end(), [&](const auto& p) { return p.name == n; });
      if (it == c.profiles.end()) throw merv::ConfigError("config has no encoder '" + n + "'");
      profiles.push_back(*it);
      kinds.push_back(all_kinds[static_cast<std::size_t>(it - c.profiles.begin())]);
    }
  }
  return merv::VisualPipeline::build(profiles, kinds, c.t, c.projector, c.fusion, c.seed);
}

// -- encode -------------------------------------------------------------------

struct EncodeArgs {
  std::string video;
  std::string encoder = "all";
  std::size_t height = 0, width = 0;
};

int cmd_encode(const Globals& g, const EncodeArgs& a) {
  const auto c = resolve_config(g);
  const merv::VideoTensor video = merv::read_video(a.video, a.height, a.width);
  const auto pipeline = build_visual_pipeline(c, a.encoder == "all" ? std::vector<std::string>{}
                                                                   : std::vector<std::string>{a.encoder});
  const auto features = pipeline.encode(video);
  const fs::path dir = out_dir(c);
  Json report = Json::array();
  std::ostringstream table;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& name = pipeline.encoders[i].profile().name;
    const fs::path file = dir / (name + ".mervt");
    merv::write_feature(file, features[i]);
    report.push_back({{"encoder", name},
                      {"input_frames", pipeline.encoders[i].profile().input_frames},
                      {"shape", shape_json(features[i].shape())},
                      {"file", file.filename().string()}});
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-14s frames %3zu  shape %-16s %s\n", name.c_str(),
                  pipeline.encoders[i].profile().input_frames, shape_string(features[i].shape()).c_str(),
                  file.filename().string().c_str());
    table << buf;
  }
  std::cout << (as_json(g) ? report.dump(2) + "\n" : table.str());
  return 0;
}

// -- fuse ---------------------------------------------------------------------

struct FuseArgs {
  std::vector<std::string> features;
  std::vector<std::string> encoders;
};

int cmd_fuse(const Globals& g, const FuseArgs& a) {
  const auto c = resolve_config(g);
  std::vector<std::string> names = a.encoders;
  if (names.empty()) {
    for (const auto& f : a.features) names.push_back(fs::path(f).stem().string());
  }
  if (names.size() != a.features.size()) {
    throw merv::ConfigError("--encoders names " + std::to_string(names.size()) + " encoders for " +
                            std::to_string(a.features.size()) + " feature files");
  }
  const auto pipeline = build_visual_pipeline(c, names);
  std::vector<merv::Tensor> raw;
  for (std::size_t i = 0; i < a.features.size(); ++i) {
    raw.push_back(merv::read_feature(a.features[i]));
    const auto expected = pipeline.encoders[i].profile().output_shape();
    if (raw.back().shape() != expected) {
      throw merv::DimensionError("feature '" + a.features[i] + "' has shape " + shape_string(raw.back().shape()) +
                                 ", encoder '" + names[i] + "' emits " + shape_string(expected));
    }
  }
  const auto fused = merv::fuse(pipeline.project(raw), c.fusion, pipeline.fusion_params);
  const fs::path dir = out_dir(c);
  merv::write_feature(dir / "fused.mervt", fused.tokens);
  std::ostringstream csv;
  csv << "encoder,weight\n";
  for (std::size_t i = 0; i < fused.weights.numel(); ++i)
    csv << names[i] << ',' << merv::format_double(fused.weights[i]) << '\n';
  write_text(dir / "weights.csv", csv.str());

  if (as_json(g)) {
    Json j;
    j["strategy"] = merv::to_string(c.fusion.strategy);
    j["tokens"] = shape_json(fused.tokens.shape());
    j["weights"] = Json::object();
    for (std::size_t i = 0; i < fused.weights.numel(); ++i) j["weights"][names[i]] = fused.weights[i];
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "strategy " << merv::to_string(c.fusion.strategy) << "  tokens "
              << shape_string(fused.tokens.shape()) << '\n'
              << csv.str();
  }
  return 0;
}

// -- cost ---------------------------------------------------------------------

merv::SystemConfig system_config(const merv::RunConfig& c) {
  merv::SystemConfig s;
  s.profiles = c.profiles;
  s.t = c.t;
  s.projector = c.projector;
  s.fusion = c.fusion;
  s.llm = c.llm;
  return s;
}

int cmd_cost(const Globals& g) {
  const auto c = resolve_config(g);
  const auto sys = system_config(c);
  const merv::CostReport report = merv::pipeline_cost(sys);

  const std::vector<merv::FusionStrategy> strategies{
      merv::FusionStrategy::cross_attn, merv::FusionStrategy::concat_seq, merv::FusionStrategy::concat_channel,
      merv::FusionStrategy::learnable_weights, merv::FusionStrategy::fixed_mix};
  std::map<merv::FusionStrategy, merv::CostReport> by_strategy;
  for (auto s : strategies) {
    merv::SystemConfig alt = sys;
    if (s != sys.fusion.strategy) alt.fusion = merv::FusionConfig{s, 0, {}, c.seed};
    by_strategy.emplace(s, merv::pipeline_cost(alt));
  }
  const double cross = by_strategy.at(merv::FusionStrategy::cross_attn).total_flops;
  const double ratio = by_strategy.at(merv::FusionStrategy::concat_seq).total_flops / cross;

  std::ostringstream report_json, report_table;
  report.write_json(report_json);
  report.write_table(report_table);
  std::ostringstream csv;
  csv << "strategy,visual_tokens,llm_flops,total_flops,ratio_to_cross_attn\n";
  for (auto s : strategies) {
    const auto& r = by_strategy.at(s);
    csv << merv::to_string(s) << ',' << r.visual_tokens << ',' << merv::format_double(r.stage("llm").flops) << ','
        << merv::format_double(r.total_flops) << ',' << merv::format_double(r.total_flops / cross) << '\n';
  }

  Json j;
  j["report"] = Json::parse(report_json.str());
  j["strategies"] = Json::array();
  for (auto s : strategies) {
    const auto& r = by_strategy.at(s);
    j["strategies"].push_back({{"strategy", merv::to_string(s)},
                               {"visual_tokens", r.visual_tokens},
                               {"total_flops", r.total_flops},
                               {"ratio_to_cross_attn", r.total_flops / cross}});
  }
  j["concat_seq_over_cross_attn"] = ratio;

  const fs::path dir = out_dir(c);
  write_text(dir / "cost.json", j.dump(2) + "\n");
  write_text(dir / "cost.txt", report_table.str());
  write_text(dir / "strategies.csv", csv.str());
  if (as_json(g)) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << report_table.str() << '\n' << csv.str();
    std::printf("concat_seq / cross_attn total FLOPs: %.3f\n", ratio);
  }
  return 0;
}

// -- simulate -----------------------------------------------------------------

struct SimulateArgs {
  std::string latency;
  std::string policy;
  std::size_t lanes = 0;
  bool sweep = false;
  double project_ms = 1.0, fusion_ms = 1.0, llm_ms = 200.0, dispatch_ms = 1.0;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
  const auto c = resolve_config(g);
  merv::LatencyProfile profile;
  if (!a.latency.empty()) {
    std::ifstream in(a.latency);
    if (!in) throw merv::FormatError("cannot open latency csv '" + a.latency + "'");
    profile = merv::read_latency_csv(in);
  } else {
    profile = merv::latency_profile_from(c.profiles, a.project_ms, a.fusion_ms, a.llm_ms, a.dispatch_ms);
  }
  const auto policy = a.policy.empty() ? c.simulate.policy : merv::schedule_policy_from_string(a.policy);
  const std::size_t lanes = a.lanes ? a.lanes : c.simulate.lanes;
  const merv::ScheduleTrace trace = merv::simulate_step(profile, policy, lanes);

  const fs::path dir = out_dir(c);
  std::ostringstream trace_json, gantt;
  trace.write_json(trace_json);
  trace.write_gantt(gantt);
  write_text(dir / "trace.json", trace_json.str());

  std::vector<merv::SweepRow> rows;
  std::ostringstream sweep_csv;
  if (a.sweep) {
    std::vector<std::string> order;
    for (const auto& n : merv::encoder_sweep_order()) {
      for (const auto& e : profile.encoders)
        if (e.name == n) order.push_back(n);
    }
    for (const auto& e : profile.encoders)
      if (std::find(order.begin(), order.end(), e.name) == order.end()) order.push_back(e.name);
    rows = merv::sweep_encoders(profile, order, policy, lanes);
    sweep_csv << "encoders,makespan_ms,bound_ms\n";
    for (const auto& r : rows) {
      std::string names;
      for (const auto& n : r.encoders) names += (names.empty() ? "" : "+") + n;
      sweep_csv << names << ',' << merv::format_double(r.makespan) << ',' << merv::format_double(r.bound) << '\n';
    }
    write_text(dir / "sweep.csv", sweep_csv.str());
  }

  if (as_json(g)) {
    Json j = Json::parse(trace_json.str());
    j["policy"] = merv::to_string(policy);
    j["lanes"] = lanes;
    if (a.sweep) {
      j["sweep"] = Json::array();
      for (const auto& r : rows) j["sweep"].push_back({{"encoders", r.encoders}, {"makespan", r.makespan}, {"bound", r.bound}});
    }
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "policy " << merv::to_string(policy) << "  lanes " << lanes << '\n' << gantt.str();
    if (a.sweep) std::cout << '\n' << sweep_csv.str();
  }
  return 0;
}

// -- train-toy ----------------------------------------------------------------

struct TrainArgs {
  std::string task;
  std::string recipe;
  std::optional<std::size_t> stage1_steps, stage2_steps, train_size, heldout_size;
  bool dump_features = false;
  bool quiet = false;
};

int cmd_train_toy(const Globals& g, const TrainArgs& a) {
  auto c = resolve_config(g);
  if (!a.task.empty()) c.toy.task = merv::task_kind_from_string(a.task);
  if (!a.recipe.empty()) c.toy.recipe.recipe = merv::recipe_from_string(a.recipe);
  if (a.stage1_steps) c.toy.recipe.stage1_steps = *a.stage1_steps;
  if (a.stage2_steps) c.toy.recipe.stage2_steps = *a.stage2_steps;
  if (a.train_size) c.toy.train_size = *a.train_size;
  if (a.heldout_size) c.toy.heldout_size = *a.heldout_size;
  c.validate();

  merv::ToyModel model = merv::build_pipeline(c.toy.model);
  const std::uint64_t heldout_seed = merv::Rng::derive(c.seed, "heldout").next_u64();
  const auto train_task = merv::make_synth_task(c.toy.task, c.toy.train_size, c.seed);
  const auto heldout_task = merv::make_synth_task(c.toy.task, c.toy.heldout_size, heldout_seed);
  const auto train_data = merv::encode_task(model, train_task);
  const auto heldout = merv::encode_task(model, heldout_task);

  const auto result = merv::train(model, train_data, c.toy.recipe, c.seed, [&](const merv::MetricsRow& r) {
    if (!a.quiet && r.step % 25 == 0) std::fprintf(stderr, "step %zu %s loss %.4f\n", r.step, r.stage.c_str(), r.loss);
  });
  const merv::Evaluation ev = merv::evaluate(model, heldout);

  const fs::path dir = out_dir(c);
  std::ostringstream metrics;
  merv::write_metrics_csv(metrics, result);
  write_text(dir / "metrics.csv", metrics.str());
  merv::save_checkpoint(dir / "checkpoint", model);
  if (a.dump_features) {
    for (const auto& ex : heldout) {
      const fs::path vdir = dir / "features" / ex.id;
      fs::create_directories(vdir);
      for (std::size_t e = 0; e < ex.features.size(); ++e)
        merv::write_feature(vdir / (model.encoders[e].profile().name + ".mervt"), ex.features[e]);
    }
  }

  Json j;
  j["task"] = merv::to_string(c.toy.task);
  j["recipe"] = merv::to_string(c.toy.recipe.recipe);
  j["steps"] = result.history.size();
  j["heldout_accuracy"] = ev.accuracy;
  j["heldout_loss"] = ev.loss;
  j["mean_weights"] = Json::object();
  for (std::size_t e = 0; e < ev.mean_weights.size(); ++e) j["mean_weights"][result.encoders[e]] = ev.mean_weights[e];
  write_text(dir / "eval.json", j.dump(2) + "\n");
  if (as_json(g)) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("task %s  recipe %s  steps %zu\nheldout accuracy %.4f  loss %.6f\n", j["task"].get<std::string>().c_str(),
                j["recipe"].get<std::string>().c_str(), result.history.size(), ev.accuracy, ev.loss);
    for (std::size_t e = 0; e < ev.mean_weights.size(); ++e)
      std::printf("  w_%-12s %.6f\n", result.encoders[e].c_str(), ev.mean_weights[e]);
  }
  return 0;
}

// -- analyze ------------------------------------------------------------------

struct AnalyzeArgs {
  std::string features;
  std::string checkpoint;
  std::size_t top_k = 5;
};

std::vector<std::string> video_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw merv::FormatError("features directory '" + root.string() + "' not found");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw merv::FormatError("features directory '" + root.string() + "' has no video subdirectories");
  return ids;
}

merv::AttentionRow make_row(const std::string& id, const std::vector<double>& w) {
  merv::AttentionRow row{id, w, 0};
  row.argmax = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
  return row;
}

merv::AttentionTable analyze_with_checkpoint(const fs::path& root, const fs::path& ckpt) {
  std::ifstream in(ckpt / "manifest.json");
  if (!in) throw merv::FormatError("checkpoint '" + ckpt.string() + "' has no manifest.json");
  Json manifest;
  try {
    manifest = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw merv::FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("config")) throw merv::FormatError("checkpoint manifest has no config");
  merv::ToyModel model = merv::build_pipeline(merv::toy_model_config_from_json(manifest["config"]));
  merv::load_checkpoint(ckpt, model);
  if (model.config.fusion.strategy != merv::FusionStrategy::cross_attn) {
    throw merv::ConfigError("attention weights need a cross_attn model");
  }
  merv::AttentionTable table;
  table.encoders = model.encoder_names();
  for (const auto& id : video_dirs(root)) {
    std::vector<merv::Tensor64> projected;
    for (std::size_t e = 0; e < model.encoders.size(); ++e) {
      const auto& p = model.encoders[e].profile();
      const merv::Tensor64 f = merv::read_feature64(root / id / (p.name + ".mervt"));
      projected.push_back(merv::prefuse(f, model.projector.config, model.projector.encoders[e], p));
    }
    const auto att = merv::cross_attend(model.fusion.query, projected);
    const auto w = att.weights.data();
    table.rows.push_back(make_row(id, std::vector<double>(w.begin(), w.end())));
  }
  return table;
}

merv::AttentionTable analyze_with_config(const fs::path& root, const merv::RunConfig& c) {
  const auto pipeline = build_visual_pipeline(c);
  if (c.fusion.strategy != merv::FusionStrategy::cross_attn) {
    throw merv::ConfigError("attention weights need a cross_attn fusion config");
  }
  std::vector<std::string> names;
  for (const auto& e : pipeline.encoders) names.push_back(e.profile().name);
  std::vector<std::pair<std::string, std::vector<merv::Tensor>>> projected;
  for (const auto& id : video_dirs(root)) {
    std::vector<merv::Tensor> raw;
    for (const auto& n : names) raw.push_back(merv::read_feature(root / id / (n + ".mervt")));
    projected.emplace_back(id, pipeline.project(raw));
  }
  return merv::attention_table_from_features(names, projected, pipeline.fusion_params.query);
}

int cmd_analyze(const Globals& g, const AnalyzeArgs& a) {
  const auto c = resolve_config(g);
  const merv::AttentionTable table =
      a.checkpoint.empty() ? analyze_with_config(a.features, c) : analyze_with_checkpoint(a.features, a.checkpoint);
  const fs::path dir = out_dir(c);
  std::ostringstream csv;
  table.write_csv(csv);
  write_text(dir / "attention.csv", csv.str());

  std::ostringstream top;
  top << "encoder,rank,video_id,weight\n";
  Json j;
  j["videos"] = table.rows.size();
  j["mean_weights"] = Json::object();
  j["top_k"] = Json::object();
  const auto mean = table.mean_weights();
  for (std::size_t e = 0; e < table.encoders.size(); ++e) {
    j["mean_weights"][table.encoders[e]] = mean[e];
    Json list = Json::array();
    std::size_t rank = 1;
    for (const auto& r : table.top_k(e, a.top_k)) {
      top << table.encoders[e] << ',' << rank++ << ',' << r.video_id << ',' << merv::format_double(r.weights[e]) << '\n';
      list.push_back({{"video_id", r.video_id}, {"weight", r.weights[e]}});
    }
    j["top_k"][table.encoders[e]] = list;
  }
  write_text(dir / "topk.csv", top.str());
  if (as_json(g)) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("%zu videos\n", table.rows.size());
    for (std::size_t e = 0; e < table.encoders.size(); ++e)
      std::printf("  mean w_%-12s %.6f\n", table.encoders[e].c_str(), mean[e]);
    std::cout << '\n' << top.str();
  }
  return 0;
}

std::pair<const char*, int> classify(const std::exception& e) {
  if (dynamic_cast<const merv::ConfigError*>(&e)) return {"ConfigError", 2};
  if (dynamic_cast<const merv::FormatError*>(&e)) return {"FormatError", 3};
  if (dynamic_cast<const merv::DimensionError*>(&e)) return {"DimensionError", 4};
  if (dynamic_cast<const merv::AlignmentError*>(&e)) return {"AlignmentError", 4};
  if (dynamic_cast<const merv::TrainingError*>(&e)) return {"TrainingError", 5};
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return {"IOError", 3};
  return {"Error", 1};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-encoder video feature fusion toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "RunConfig JSON file");
  app.add_option("--seed", g.seed, "Seed for every random component");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--format", g.format, "Stdout format")->check(CLI::IsMember({"json", "table"}));

  EncodeArgs enc;
  auto* encode = app.add_subcommand("encode", "Run mock encoders on a video and write feature files");
  encode->add_option("--video", enc.video, "Video container (T,H,W,3) or directory of raw RGB frames")->required();
  encode->add_option("--encoder", enc.encoder, "Encoder name or 'all'");
  encode->add_option("--height", enc.height, "Frame height for raw frame directories");
  encode->add_option("--width", enc.width, "Frame width for raw frame directories");

  FuseArgs fu;
  auto* fuse = app.add_subcommand("fuse", "Project and fuse encoder features");
  fuse->add_option("--features", fu.features, "Encoder feature files")->required();
  fuse->add_option("--encoders", fu.encoders, "Encoder per feature file (default: file stems)");

  auto* cost = app.add_subcommand("cost", "Parameter and FLOP report with a fusion strategy comparison");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate one step under a scheduling policy");
  simulate->add_option("--latency", sim.latency, "Latency CSV (stage,name,latency_ms)");
  simulate->add_option("--policy", sim.policy, "serial or parallel")->check(CLI::IsMember({"serial", "parallel"}));
  simulate->add_option("--lanes", sim.lanes, "Concurrent lanes");
  simulate->add_flag("--sweep", sim.sweep, "Makespan as encoders are added one at a time");
  simulate->add_option("--project-ms", sim.project_ms, "Projector latency without a CSV");
  simulate->add_option("--fusion-ms", sim.fusion_ms, "Fusion latency without a CSV");
  simulate->add_option("--llm-ms", sim.llm_ms, "LLM latency without a CSV");
  simulate->add_option("--dispatch-ms", sim.dispatch_ms, "Per-encoder dispatch overhead without a CSV");

  TrainArgs tr;
  auto* train = app.add_subcommand("train-toy", "Train the toy model on a synthetic task");
  train->add_option("--task", tr.task, "temporal_direction, spatial_pattern or mixed");
  train->add_option("--recipe", tr.recipe, "frozen, full, two_stage_frozen_llm or mixed_single_stage");
  train->add_option("--stage1-steps", tr.stage1_steps);
  train->add_option("--stage2-steps", tr.stage2_steps);
  train->add_option("--train-size", tr.train_size);
  train->add_option("--heldout-size", tr.heldout_size);
  train->add_flag("--dump-features", tr.dump_features, "Write held-out encoder features for analyze");
  train->add_flag("--quiet", tr.quiet, "No progress on stderr");

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Per-video cross-attention weights and top-k videos per encoder");
  analyze->add_option("--features", an.features, "Directory with one subdirectory of features per video")->required();
  analyze->add_option("--checkpoint", an.checkpoint, "Toy checkpoint directory (default: config pipeline)");
  analyze->add_option("--top-k", an.top_k, "Videos listed per encoder");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*encode) return cmd_encode(g, enc);
    if (*fuse) return cmd_fuse(g, fu);
    if (*cost) return cmd_cost(g);
    if (*simulate) return cmd_simulate(g, sim);
    if (*train) return cmd_train_toy(g, tr);
    if (*analyze) return cmd_analyze(g, an);
  } catch (const std::exception& e) {
    const auto [kind, code] = classify(e);
    Json err{{"error", kind}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return code;
  }
  return 1;
}

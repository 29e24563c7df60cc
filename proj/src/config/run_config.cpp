#include <fstream>
#include <set>

#include "merv/config.hpp"
#include "merv/errors.hpp"

namespace merv {

namespace {

/// Reads optional keys of one JSON object and rejects the ones never read.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    if (!j_.contains(key)) return;
    get(key, s);
    out = parse(s);
  }

  const Json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path(k) + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::vector<EncoderKind> kinds_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array of encoder kinds");
  std::vector<EncoderKind> out;
  for (const auto& k : j) {
    if (!k.is_string()) throw ConfigError(where + " entries must be strings");
    out.push_back(encoder_kind_from_string(k.get<std::string>()));
  }
  return out;
}

std::vector<EncoderProfile> profiles_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array");
  std::vector<EncoderProfile> out;
  for (const auto& p : j) {
    // a bare string names a default profile
    out.push_back(p.is_string() ? default_profile(p.get<std::string>()) : profile_from_json(p));
  }
  return out;
}

Json kinds_to_json(const std::vector<EncoderKind>& kinds) {
  Json a = Json::array();
  for (auto k : kinds) a.push_back(to_string(k));
  return a;
}

Json profiles_to_json(const std::vector<EncoderProfile>& profiles) {
  Json a = Json::array();
  for (const auto& p : profiles) a.push_back(to_json(p));
  return a;
}

}  // namespace

EncoderKind default_kind(const std::string& encoder) {
  if (encoder == "languagebind") return EncoderKind::language;
  if (encoder == "dinov2") return EncoderKind::spatial;
  if (encoder == "vivit") return EncoderKind::temporal;
  return EncoderKind::generic;
}

Json to_json(const EncoderProfile& p) {
  return Json{{"name", p.name},
              {"input_frames", p.input_frames},
              {"out_t", p.out_t},
              {"out_h", p.out_h},
              {"out_w", p.out_w},
              {"dim", p.dim},
              {"latency_ms", p.latency_ms},
              {"flops_per_frame", p.flops_per_frame},
              {"params", p.params},
              {"max_input_frames", p.max_input_frames}};
}

EncoderProfile profile_from_json(const Json& j) {
  EncoderProfile p;
  Fields f(j, "profile");
  f.get("name", p.name);
  f.get("input_frames", p.input_frames);
  f.get("out_t", p.out_t);
  f.get("out_h", p.out_h);
  f.get("out_w", p.out_w);
  f.get("dim", p.dim);
  f.get("latency_ms", p.latency_ms);
  f.get("flops_per_frame", p.flops_per_frame);
  f.get("params", p.params);
  f.get("max_input_frames", p.max_input_frames);
  f.done();
  if (p.name.empty()) throw ConfigError("profile needs a name");
  p.validate();
  return p;
}

Json to_json(const ProjectorConfig& c) {
  return Json{{"variant", to_string(c.variant)},
              {"h", c.target_h},
              {"w", c.target_w},
              {"d", c.llm_dim},
              {"seed", c.seed},
              {"avg3d_mode", c.avg3d_mode == TemporalPoolMode::halved ? "halved" : "restored"},
              {"resampler", {{"heads", c.resampler.heads}, {"mlp_ratio", c.resampler.mlp_ratio}}},
              {"conv", {{"blocks_before", c.conv.blocks_before}, {"blocks_after", c.conv.blocks_after}}}};
}

ProjectorConfig projector_config_from_json(const Json& j, ProjectorConfig c) {
  Fields f(j, "projector");
  f.get_enum("variant", c.variant, projector_variant_from_string);
  f.get("h", c.target_h);
  f.get("w", c.target_w);
  f.get("d", c.llm_dim);
  f.get("seed", c.seed);
  f.get_enum("avg3d_mode", c.avg3d_mode, [](const std::string& s) {
    if (s == "halved") return TemporalPoolMode::halved;
    if (s == "restored") return TemporalPoolMode::restored;
    throw ConfigError("avg3d_mode must be halved or restored");
  });
  if (const Json* r = f.sub("resampler")) {
    Fields rf(*r, "projector.resampler");
    rf.get("heads", c.resampler.heads);
    rf.get("mlp_ratio", c.resampler.mlp_ratio);
    rf.done();
  }
  if (const Json* v = f.sub("conv")) {
    Fields cf(*v, "projector.conv");
    cf.get("blocks_before", c.conv.blocks_before);
    cf.get("blocks_after", c.conv.blocks_after);
    cf.done();
  }
  f.done();
  return c;
}

Json to_json(const FusionConfig& c) {
  return Json{{"strategy", to_string(c.strategy)},
              {"mlp_hidden", c.mlp_hidden},
              {"fixed_weights", c.fixed_weights},
              {"seed", c.seed}};
}

FusionConfig fusion_config_from_json(const Json& j, FusionConfig c) {
  Fields f(j, "fusion");
  f.get_enum("strategy", c.strategy, fusion_strategy_from_string);
  f.get("mlp_hidden", c.mlp_hidden);
  f.get("fixed_weights", c.fixed_weights);
  f.get("seed", c.seed);
  f.done();
  return c;
}

Json to_json(const LLMCostConfig& c) {
  return Json{{"params", c.params},
              {"attention_quadratic", c.attention_quadratic},
              {"layers", c.layers},
              {"width", c.width}};
}

Json to_json(const ToyLLMConfig& c) {
  return Json{{"layers", c.layers}, {"dim", c.dim}, {"heads", c.heads}, {"vocab", c.vocab}, {"context", c.context}};
}

Json to_json(const ToyModelConfig& c) {
  return Json{{"profiles", profiles_to_json(c.profiles)},
              {"kinds", kinds_to_json(c.kinds)},
              {"t", c.t},
              {"projector", to_json(c.projector)},
              {"fusion", to_json(c.fusion)},
              {"llm", to_json(c.llm)},
              {"seed", c.seed}};
}

ToyModelConfig toy_model_config_from_json(const Json& j, ToyModelConfig c) {
  Fields f(j, "toy.model");
  if (const Json* p = f.sub("profiles")) c.profiles = profiles_from_json(*p, f.path("profiles"));
  if (const Json* k = f.sub("kinds")) c.kinds = kinds_from_json(*k, f.path("kinds"));
  f.get("t", c.t);
  if (const Json* p = f.sub("projector")) c.projector = projector_config_from_json(*p, c.projector);
  if (const Json* p = f.sub("fusion")) c.fusion = fusion_config_from_json(*p, c.fusion);
  if (const Json* l = f.sub("llm")) {
    Fields lf(*l, "toy.model.llm");
    lf.get("layers", c.llm.layers);
    lf.get("dim", c.llm.dim);
    lf.get("heads", c.llm.heads);
    lf.get("vocab", c.llm.vocab);
    lf.get("context", c.llm.context);
    lf.done();
  }
  f.get("seed", c.seed);
  f.done();
  return c;
}

Json to_json(const RecipeConfig& c) {
  return Json{{"recipe", to_string(c.recipe)},
              {"stage1_lr", c.stage1_lr},
              {"stage2_lr", c.stage2_lr},
              {"warmup_ratio", c.warmup_ratio},
              {"schedule", c.schedule},
              {"stage1_steps", c.stage1_steps},
              {"stage2_steps", c.stage2_steps},
              {"batch_size", c.batch_size},
              {"clip_norm", c.clip_norm}};
}

RecipeConfig recipe_config_from_json(const Json& j, RecipeConfig c) {
  Fields f(j, "toy.recipe");
  f.get_enum("recipe", c.recipe, recipe_from_string);
  f.get("stage1_lr", c.stage1_lr);
  f.get("stage2_lr", c.stage2_lr);
  f.get("warmup_ratio", c.warmup_ratio);
  f.get("schedule", c.schedule);
  f.get("stage1_steps", c.stage1_steps);
  f.get("stage2_steps", c.stage2_steps);
  f.get("batch_size", c.batch_size);
  f.get("clip_norm", c.clip_norm);
  f.done();
  return c;
}

Json to_json(const RunConfig& c) {
  return Json{{"profiles", profiles_to_json(c.profiles)},
              {"kinds", kinds_to_json(c.resolved_kinds())},
              {"t", c.t},
              {"expected_tokens", c.expected_tokens},
              {"projector", to_json(c.projector)},
              {"fusion", to_json(c.fusion)},
              {"llm", to_json(c.llm)},
              {"simulate", {{"policy", to_string(c.simulate.policy)}, {"lanes", c.simulate.lanes}}},
              {"toy",
               {{"task", to_string(c.toy.task)},
                {"train_size", c.toy.train_size},
                {"heldout_size", c.toy.heldout_size},
                {"model", to_json(c.toy.model)},
                {"recipe", to_json(c.toy.recipe)}}},
              {"seed", c.seed},
              {"out_dir", c.out_dir}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  Fields f(j, "config");
  if (const Json* p = f.sub("profiles")) c.profiles = profiles_from_json(*p, "config.profiles");
  if (const Json* k = f.sub("kinds")) c.kinds = kinds_from_json(*k, "config.kinds");
  f.get("t", c.t);
  f.get("expected_tokens", c.expected_tokens);
  if (const Json* p = f.sub("projector")) c.projector = projector_config_from_json(*p, c.projector);
  if (const Json* p = f.sub("fusion")) c.fusion = fusion_config_from_json(*p, c.fusion);
  if (const Json* l = f.sub("llm")) {
    Fields lf(*l, "config.llm");
    lf.get("params", c.llm.params);
    lf.get("attention_quadratic", c.llm.attention_quadratic);
    lf.get("layers", c.llm.layers);
    lf.get("width", c.llm.width);
    lf.done();
  }
  if (const Json* s = f.sub("simulate")) {
    Fields sf(*s, "config.simulate");
    sf.get_enum("policy", c.simulate.policy, schedule_policy_from_string);
    sf.get("lanes", c.simulate.lanes);
    sf.done();
  }
  if (const Json* t = f.sub("toy")) {
    Fields tf(*t, "config.toy");
    tf.get_enum("task", c.toy.task, task_kind_from_string);
    tf.get("train_size", c.toy.train_size);
    tf.get("heldout_size", c.toy.heldout_size);
    if (const Json* m = tf.sub("model")) c.toy.model = toy_model_config_from_json(*m, c.toy.model);
    if (const Json* r = tf.sub("recipe")) c.toy.recipe = recipe_config_from_json(*r, c.toy.recipe);
    tf.done();
  }
  f.get("seed", c.seed);
  f.get("out_dir", c.out_dir);
  f.done();
  return c;
}

std::vector<EncoderKind> RunConfig::resolved_kinds() const {
  if (!kinds.empty()) return kinds;
  std::vector<EncoderKind> out;
  for (const auto& p : profiles) out.push_back(default_kind(p.name));
  return out;
}

RunConfig RunConfig::with_seed(std::uint64_t s) const {
  RunConfig c = *this;
  c.seed = s;
  c.projector.seed = s;
  c.fusion.seed = s;
  c.toy.model.seed = s;
  c.toy.model.projector.seed = s;
  c.toy.model.fusion.seed = s;
  return c;
}

void RunConfig::validate() const {
  if (profiles.empty()) throw ConfigError("config needs at least one encoder profile");
  if (!kinds.empty() && kinds.size() != profiles.size()) {
    throw ConfigError("config has " + std::to_string(kinds.size()) + " kinds for " +
                      std::to_string(profiles.size()) + " profiles");
  }
  AlignmentPlan plan;
  try {
    plan = plan_temporal_alignment(profiles, t);
  } catch (const AlignmentError& e) {
    throw ConfigError(std::string("unreachable t: ") + e.what());
  }
  projector.validate(plan.aligned(profiles));
  const std::size_t l = projector.tokens(t);
  if (expected_tokens != 0 && expected_tokens != l) {
    throw ConfigError("sequence length mismatch: expected_tokens is " + std::to_string(expected_tokens) +
                      " but t*h*w gives " + std::to_string(l));
  }
  fusion.validate(profiles.size());
  if (simulate.lanes == 0) throw ConfigError("simulate.lanes must be >= 1");
  if (!(llm.params >= 0)) throw ConfigError("llm.params must be nonnegative");

  const ToyModelConfig& m = toy.model;
  if (m.kinds.size() != m.profiles.size()) throw ConfigError("toy model needs one kind per profile");
  if (m.projector.llm_dim != m.llm.dim) {
    throw ConfigError("toy projector d " + std::to_string(m.projector.llm_dim) + " does not match LLM width " +
                      std::to_string(m.llm.dim));
  }
  try {
    const auto aligned = plan_temporal_alignment(m.profiles, m.t).aligned(m.profiles);
    m.projector.validate(aligned);
  } catch (const AlignmentError& e) {
    throw ConfigError(std::string("toy model: unreachable t: ") + e.what());
  }
  m.fusion.validate(m.profiles.size());
  m.llm.validate(m.fusion.output_tokens(m.profiles.size(), m.projector.tokens(m.t)));
  toy.recipe.validate();
  if (toy.train_size == 0) throw ConfigError("toy.train_size must be >= 1");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  c.validate();
  return c;
}

}  // namespace merv

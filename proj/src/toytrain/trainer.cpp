#include "merv/toytrain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "merv/errors.hpp"
#include "merv/fusion.hpp"
#include "merv/numerics.hpp"
#include "merv/rng.hpp"

namespace merv {

std::string to_string(Recipe r) {
  switch (r) {
    case Recipe::frozen: return "frozen";
    case Recipe::full: return "full";
    case Recipe::two_stage_frozen_llm: return "two_stage_frozen_llm";
    case Recipe::mixed_single_stage: return "mixed_single_stage";
  }
  return "full";
}

Recipe recipe_from_string(const std::string& name) {
  if (name == "frozen") return Recipe::frozen;
  if (name == "full") return Recipe::full;
  if (name == "two_stage_frozen_llm") return Recipe::two_stage_frozen_llm;
  if (name == "mixed_single_stage") return Recipe::mixed_single_stage;
  throw ConfigError("unknown recipe '" + name + "'");
}

void RecipeConfig::validate() const {
  auto nonneg = [](double v) { return std::isfinite(v) && v >= 0; };
  if (!nonneg(stage1_lr) || !nonneg(stage2_lr)) throw ConfigError("learning rates must be nonnegative");
  if (!(warmup_ratio >= 0 && warmup_ratio <= 1)) throw ConfigError("warmup_ratio must lie in [0, 1]");
  if (schedule != "cosine" && schedule != "constant") throw ConfigError("unknown schedule '" + schedule + "'");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!nonneg(clip_norm)) throw ConfigError("clip_norm must be nonnegative");
}

std::vector<StagePlan> RecipeConfig::stages() const {
  const std::vector<ParamGroup> connector{ParamGroup::projector, ParamGroup::fusion};
  const std::vector<ParamGroup> all{ParamGroup::projector, ParamGroup::fusion, ParamGroup::llm};
  switch (recipe) {
    case Recipe::frozen:
      return {{"instruct", connector, PromptMode::question, stage2_lr, stage2_steps}};
    case Recipe::full:
      return {{"caption", all, PromptMode::caption, stage1_lr, stage1_steps},
              {"instruct", all, PromptMode::question, stage2_lr, stage2_steps}};
    case Recipe::two_stage_frozen_llm:
      return {{"caption", connector, PromptMode::caption, stage1_lr, stage1_steps},
              {"instruct", all, PromptMode::question, stage2_lr, stage2_steps}};
    case Recipe::mixed_single_stage:
      return {{"mixed", all, PromptMode::mixed, stage2_lr, stage1_steps + stage2_steps}};
  }
  return {};
}

double scheduled_lr(const RecipeConfig& cfg, double base, std::size_t step, std::size_t steps) {
  if (steps == 0) return base;
  const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(steps)));
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (cfg.schedule == "constant") return base;
  const std::size_t decay = steps - warmup;
  if (decay <= 1) return base;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(decay);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<Example> encode_task(const ToyModel& model, const SynthTask& task) {
  std::vector<Example> out;
  out.reserve(task.items.size());
  for (const auto& item : task.items) out.push_back({item.id, model.encode(item.video), item.label});
  return out;
}

namespace {

int prompt_token(PromptMode mode, Rng& rng) {
  switch (mode) {
    case PromptMode::caption: return kCaptionToken;
    case PromptMode::question: return kQuestionToken;
    case PromptMode::mixed: return rng.coin() ? kCaptionToken : kQuestionToken;
  }
  return kQuestionToken;
}

Sample make_sample(const Example& ex, int prompt) { return {ex.features, prompt, kLabelToken + ex.label}; }

int last_argmax(const Tensor64& logits) {
  const std::size_t vocab = logits.dim(1), last = logits.dim(0) - 1;
  std::size_t best = 0;
  for (std::size_t c = 1; c < vocab; ++c)
    if (logits[last * vocab + c] > logits[last * vocab + best]) best = c;
  return static_cast<int>(best);
}

struct ParamRef {
  ParamGroup group;
  std::string name;
  Tensor64* value;
};

std::vector<ParamRef> param_refs(ToyModel& model) {
  std::vector<ParamRef> refs;
  model.visit([&](ParamGroup g, const std::string& n, Tensor64& t) { refs.push_back({g, n, &t}); });
  return refs;
}

bool in_groups(ParamGroup g, const std::vector<ParamGroup>& groups) {
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

}  // namespace

Evaluation evaluate(const ToyModel& model, const std::vector<Example>& data, PromptMode prompt) {
  Evaluation ev;
  ev.mean_weights.assign(model.encoders.size(), 0.0);
  if (data.empty()) return ev;
  Rng rng = Rng::derive(model.config.seed, "evaluate");
  std::size_t correct = 0, weighted = 0;
  for (const auto& ex : data) {
    const Prediction p = predict(model, make_sample(ex, prompt_token(prompt, rng)));
    correct += p.token == kLabelToken + ex.label;
    ev.loss += p.loss;
    if (!p.weights.empty()) {
      ++weighted;
      for (std::size_t e = 0; e < p.weights.size(); ++e) ev.mean_weights[e] += p.weights[e];
    }
  }
  const double n = static_cast<double>(data.size());
  ev.accuracy = static_cast<double>(correct) / n;
  ev.loss /= n;
  if (weighted)
    for (auto& w : ev.mean_weights) w /= static_cast<double>(weighted);
  return ev;
}

TrainResult train(ToyModel& model, const std::vector<Example>& data, const RecipeConfig& recipe, std::uint64_t seed,
                  const std::function<void(const MetricsRow&)>& on_step) {
  recipe.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  TrainResult result;
  result.encoders = model.encoder_names();
  const auto refs = param_refs(model);
  Gradients grads = Gradients::zeros_like(model);
  std::size_t global = 0;

  for (const StagePlan& stage : recipe.stages()) {
    Rng rng = Rng::derive(seed, "batches:" + stage.name);
    std::vector<std::size_t> order(data.size());
    std::size_t cursor = order.size();
    std::vector<Tensor64> m1, m2;
    for (const auto& s : grads.slots) {
      m1.emplace_back(s.shape());
      m2.emplace_back(s.shape());
    }
    for (std::size_t step = 0; step < stage.steps; ++step, ++global) {
      grads.zero();
      MetricsRow row;
      row.step = global;
      row.stage = stage.name;
      row.weights.assign(model.encoders.size(), 0.0);
      std::size_t correct = 0;
      for (std::size_t b = 0; b < recipe.batch_size; ++b) {
        if (cursor == order.size()) {
          for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
          for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
          cursor = 0;
        }
        const Example& ex = data[order[cursor++]];
        Graph g;
        const ForwardOutput out = forward(g, model, make_sample(ex, prompt_token(stage.prompt, rng)), &grads,
                                          stage.trainable);
        const double loss = g.value(out.loss)[0];
        if (!std::isfinite(loss)) throw TrainingError("loss is not finite", global);
        g.backward(out.loss);
        row.loss += loss;
        correct += last_argmax(g.value(out.logits)) == kLabelToken + ex.label;
        if (out.weights) {
          const Tensor64& w = g.value(*out.weights);
          for (std::size_t e = 0; e < w.numel(); ++e) row.weights[e] += w[e];
        }
      }
      const double inv = 1.0 / static_cast<double>(recipe.batch_size);
      row.loss *= inv;
      row.accuracy = static_cast<double>(correct) * inv;
      for (auto& w : row.weights) w *= inv;

      double norm2 = 0;
      for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!in_groups(refs[i].group, stage.trainable)) continue;
        for (auto& v : grads.slots[i].data()) {
          v *= inv;
          norm2 += v * v;
        }
      }
      if (!std::isfinite(norm2)) throw TrainingError("gradient is not finite", global);
      const double norm = std::sqrt(norm2);
      const double clip = recipe.clip_norm > 0 && norm > recipe.clip_norm ? recipe.clip_norm / norm : 1.0;

      const double lr = scheduled_lr(recipe, stage.lr, step, stage.steps);
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(0.9, t), c2 = 1.0 - std::pow(0.999, t);
      for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!in_groups(refs[i].group, stage.trainable)) continue;
        Tensor64& p = *refs[i].value;
        const Tensor64& gr = grads.slots[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
          const double gj = gr[j] * clip;
          m1[i][j] = 0.9 * m1[i][j] + 0.1 * gj;
          m2[i][j] = 0.999 * m2[i][j] + 0.001 * gj * gj;
          p[j] -= lr * (m1[i][j] / c1) / (std::sqrt(m2[i][j] / c2) + 1e-8);
        }
      }
      if (on_step) on_step(row);
      result.history.push_back(std::move(row));
    }
  }
  return result;
}

void write_metrics_csv(std::ostream& os, const TrainResult& result) {
  os << "step,loss,accuracy";
  for (const auto& e : result.encoders) os << ",w_" << e;
  os << '\n';
  for (const auto& r : result.history) {
    os << r.step << ',' << format_double(r.loss) << ',' << format_double(r.accuracy);
    for (double w : r.weights) os << ',' << format_double(w);
    os << '\n';
  }
}

GradCheckReport grad_check(ToyModel& model, const Sample& sample, const std::vector<ParamGroup>& groups,
                           const std::vector<std::string>& filters, double eps) {
  Gradients grads = Gradients::zeros_like(model);
  {
    Graph g;
    const auto out = forward(g, model, sample, &grads, groups);
    g.backward(out.loss);
  }
  const auto refs = param_refs(model);
  GradCheckReport report;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!in_groups(refs[i].group, groups)) continue;
    if (!filters.empty() && std::none_of(filters.begin(), filters.end(), [&](const std::string& f) {
          return refs[i].name.find(f) != std::string::npos;
        }))
      continue;
    Tensor64& p = *refs[i].value;
    const Tensor64 saved = p;
    const Tensor64 numeric = finite_diff_grad(
        [&](const Tensor64& x) {
          p = x;
          return sample_loss(model, sample);
        },
        saved, eps);
    p = saved;
    GradCheckEntry e{refs[i].name, p.numel(), max_relative_error(grads.slots[i], numeric)};
    report.max_relative_error = std::max(report.max_relative_error, e.max_relative_error);
    report.params.push_back(std::move(e));
  }
  return report;
}

}  // namespace merv

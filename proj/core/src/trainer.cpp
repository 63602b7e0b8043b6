// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "modlm/corpus.hpp"
#include "modlm/error.hpp"
#include "modlm/ops.hpp"
#include "modlm/random.hpp"

namespace modlm {

namespace {

Phase phase_of(TrainPlan::Mode mode) {
  switch (mode) {
    case TrainPlan::Mode::pretrain: return Phase::pretrain;
    case TrainPlan::Mode::finetune_concentrate: return Phase::concentrate;
    case TrainPlan::Mode::continual_insert: return Phase::extend;
  }
  throw ContractError("train: unknown mode");
}

/// Loss inputs for one segment: next-byte prediction, balancing terms over
/// every router, concentration terms over the expert routers (the prunable
/// modules), and the mean extension penalty when extension rows exist.
LossTerms gather_terms(const Model& m, const ForwardResult& fr,
                       const std::vector<std::uint32_t>& targets) {
  LossTerms terms;
  terms.lm = lm_cross_entropy(fr.logits, targets);
  for (const LayerGates& g : fr.gates) {
    terms.mi.push_back(mi_loss(g.att.pi));
    terms.mi.push_back(mi_loss(g.ffd.pi));
    terms.concentration.push_back(concentration_loss(g.ffd.pi));
  }
  Tensor reg;
  std::size_t reg_count = 0;
  auto fold = [&](const Router& router) {
    if (!router.a_ext.defined()) return;
    Tensor term = routing_regularization(router.a_ext);
    reg = reg.defined() ? add(reg, term) : term;
    ++reg_count;
  };
  for (const Block& b : m.blocks) {
    fold(b.moa.router);
    fold(b.smoe.router);
  }
  if (reg.defined()) terms.routing_reg = mul_scalar(reg, 1.0 / static_cast<double>(reg_count));
  return terms;
}

void check_weight_for_mode(bool allowed, double w, const char* name) {
  if (!allowed && w > 0.0) {
    throw ConfigError(std::string("plan: ") + name + " weight does not belong to this mode");
  }
}

} // namespace

double schedule_lr(const OptimSettings& settings, std::uint64_t step) {
  const std::uint64_t w = settings.warmup_steps;
  if (w > 0 && step < w) {
    return settings.lr * static_cast<double>(step + 1) / static_cast<double>(w);
  }
  if (settings.schedule == Schedule::warmup_constant) return settings.lr;
  const std::uint64_t total = std::max<std::uint64_t>(settings.total_steps, w + 1);
  const double progress = std::min(
      1.0, static_cast<double>(step - w) / static_cast<double>(total - w));
  return settings.lr_min +
         (settings.lr - settings.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Tensor> params, OptimSettings settings)
    : params_(std::move(params)), s_(std::move(settings)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.defined()) throw ContractError("AdamW: undefined parameter");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double AdamW::step(std::uint64_t step_index) {
  double sq = 0.0;
  for (const Tensor& p : params_) {
    if (!p.has_grad()) continue;
    for (double gi : p.grad()) sq += gi * gi;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("AdamW: non-finite gradient norm");
  const double scale = s_.clip_norm > 0.0 && norm > s_.clip_norm ? s_.clip_norm / norm : 1.0;

  t_ += 1;
  const double lr = schedule_lr(s_, step_index);
  const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    const std::vector<double>* g = p.has_grad() ? &p.grad() : nullptr;
    double* values = p.data();
    std::vector<double>& m = m_[pi];
    std::vector<double>& v = v_[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g ? (*g)[i] * scale : 0.0;
      m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * gi;
      v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * gi * gi;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s_.eps);
      values[i] -= lr * (update + s_.weight_decay * values[i]);
    }
  }
  return norm;
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void TrainPlan::validate() const {
  if (segment_length == 0) throw ConfigError("plan: segment length must be positive");
  if (batch_tokens == 0 || batch_tokens % segment_length != 0) {
    throw ConfigError("plan: batch_tokens must be a positive multiple of segment_length");
  }
  if (warmup_tokens > budget_tokens) {
    throw ConfigError("plan: warmup_tokens exceeds budget_tokens");
  }
  if (!(optim.lr > 0.0) || !(optim.lr_min >= 0.0) || optim.lr_min > optim.lr) {
    throw ConfigError("plan: need 0 <= lr_min <= lr with lr positive");
  }
  if (!(optim.beta1 >= 0.0) || optim.beta1 >= 1.0 || !(optim.beta2 >= 0.0) ||
      optim.beta2 >= 1.0 || !(optim.eps > 0.0)) {
    throw ConfigError("plan: moment decays must lie in [0,1) and eps be positive");
  }
  if (budget_tokens >= batch_tokens && corpus.size() < 2) {
    throw ConfigError("plan: corpus needs at least 2 tokens");
  }
  if (loss.mi < 0.0 || loss.concentration < 0.0 || loss.routing_reg < 0.0) {
    throw ConfigError("plan: loss weights must be nonnegative");
  }
  check_weight_for_mode(mode == Mode::pretrain, loss.mi, "balancing");
  check_weight_for_mode(mode == Mode::finetune_concentrate, loss.concentration,
                        "concentration");
  check_weight_for_mode(mode == Mode::continual_insert, loss.routing_reg, "extension");
}

std::string metrics_to_jsonl(const MetricsLog& log) {
  std::string out;
  for (const MetricsRecord& r : log) {
    nlohmann::json j;
    j["step"] = r.step;
    j["tokens"] = r.tokens_seen;
    j["lr"] = r.lr;
    j["grad_norm"] = r.grad_norm;
    j["lm"] = r.losses.lm;
    j["mi"] = r.losses.mi;
    j["concentration"] = r.losses.concentration;
    j["routing_reg"] = r.losses.routing_reg;
    j["total"] = r.losses.total;
    j["usage_entropy"] = r.usage_entropy;
    out += j.dump();
    out += '\n';
  }
  return out;
}

double usage_entropy(const UsageStats& stats) {
  std::uint64_t total = 0;
  for (std::uint64_t c : stats.counts) total += c;
  if (total == 0) return 0.0;
  double h = 0.0;
  for (std::uint64_t c : stats.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

std::vector<Tensor> trainable_parameters(const Model& model) {
  std::vector<Tensor> out;
  for (auto& [name, t] : model.named_parameters()) {
    if (t.requires_grad()) out.push_back(t);
  }
  return out;
}

MetricsLog train(Model& model, const TrainPlan& plan) {
  plan.validate();
  MetricsLog log;
  const std::uint64_t steps = plan.budget_tokens / plan.batch_tokens;
  if (steps == 0) return log;

  const std::size_t T = plan.segment_length;
  const std::size_t accum = plan.batch_tokens / T;
  const Phase phase = phase_of(plan.mode);
  OptimSettings eff = plan.optim;
  eff.total_steps = steps;
  eff.warmup_steps = plan.warmup_tokens / plan.batch_tokens;
  eff.schedule = plan.mode == TrainPlan::Mode::continual_insert ? Schedule::warmup_constant
                                                                : Schedule::warmup_cosine;

  AdamW opt(trainable_parameters(model), eff);
  opt.zero_grad();
  CorpusStream stream(plan.corpus, T);
  std::vector<SegmentCache> caches;
  const std::size_t n_layer = model.blocks.size();

  for (std::uint64_t step = 0; step < steps; ++step) {
    MetricsRecord rec;
    rec.losses.mi.assign(2 * n_layer, 0.0);
    rec.losses.concentration.assign(n_layer, 0.0);
    std::vector<UsageStats> step_usage(n_layer);
    for (std::size_t a = 0; a < accum; ++a) {
      TapeScope scope;
      const CorpusStream::Segment seg = stream.next();
      ForwardResult fr = forward(model, seg.inputs, caches);
      caches = std::move(fr.caches);
      const LossTerms terms = gather_terms(model, fr, seg.targets);
      const Tensor total = total_loss(terms, plan.loss, phase);
      const LossReport rep = loss_report(terms, plan.loss, phase);
      if (!std::isfinite(rep.total)) {
        throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                           ", segment " + std::to_string(a));
      }
      backward(mul_scalar(total, 1.0 / static_cast<double>(accum)));

      rec.losses.lm += rep.lm / static_cast<double>(accum);
      for (std::size_t i = 0; i < rep.mi.size(); ++i) {
        rec.losses.mi[i] += rep.mi[i] / static_cast<double>(accum);
      }
      for (std::size_t i = 0; i < rep.concentration.size(); ++i) {
        rec.losses.concentration[i] += rep.concentration[i] / static_cast<double>(accum);
      }
      rec.losses.routing_reg += rep.routing_reg / static_cast<double>(accum);
      rec.losses.total += rep.total / static_cast<double>(accum);
      for (std::size_t l = 0; l < n_layer; ++l) {
        accumulate_usage(step_usage[l], fr.gates[l].ffd);
        accumulate_usage(model.ffd_usage[l], fr.gates[l].ffd);
      }
    }
    rec.lr = schedule_lr(eff, step);
    rec.grad_norm = opt.step(step);
    opt.zero_grad();
    model.step += 1;
    rec.step = model.step;
    rec.tokens_seen = (step + 1) * plan.batch_tokens;
    rec.usage_entropy.reserve(n_layer);
    for (const UsageStats& u : step_usage) rec.usage_entropy.push_back(usage_entropy(u));
    log.push_back(std::move(rec));
  }
  return log;
}

double evaluate_perplexity(const Model& model, const std::vector<std::uint32_t>& corpus,
                           std::size_t segment_length) {
  if (segment_length == 0) throw ConfigError("evaluate: segment length must be positive");
  if (corpus.size() < segment_length + 1) {
    throw ConfigError("evaluate: corpus shorter than one segment");
  }
  const std::size_t segments = (corpus.size() - 1) / segment_length;
  CorpusStream stream(corpus, segment_length);
  std::vector<SegmentCache> caches;
  double nll = 0.0;
  for (std::size_t i = 0; i < segments; ++i) {
    const CorpusStream::Segment seg = stream.next();
    ForwardResult fr = forward(model, seg.inputs, caches);
    caches = std::move(fr.caches);
    nll += lm_cross_entropy(fr.logits, seg.targets).item();
  }
  return std::exp(nll / static_cast<double>(segments));
}

std::vector<UsageStats> collect_usage(const Model& model,
                                      const std::vector<std::uint32_t>& corpus,
                                      std::size_t segment_length) {
  if (segment_length == 0) throw ConfigError("collect_usage: segment length must be positive");
  if (corpus.size() < segment_length + 1) {
    throw ConfigError("collect_usage: corpus shorter than one segment");
  }
  const std::size_t segments = (corpus.size() - 1) / segment_length;
  CorpusStream stream(corpus, segment_length);
  std::vector<SegmentCache> caches;
  std::vector<UsageStats> stats(model.blocks.size());
  for (std::size_t i = 0; i < segments; ++i) {
    const CorpusStream::Segment seg = stream.next();
    ForwardResult fr = forward(model, seg.inputs, caches);
    caches = std::move(fr.caches);
    for (std::size_t l = 0; l < stats.size(); ++l) {
      accumulate_usage(stats[l], fr.gates[l].ffd);
    }
  }
  return stats;
}

std::string generate(const Model& model, const std::string& prompt, std::size_t n_tokens,
                     double temperature, std::uint64_t seed) {
  if (temperature < 0.0) throw ContractError("generate: temperature must be nonnegative");
  if (n_tokens == 0) return prompt;
  const std::size_t T = model.config.segment_length;
  Rng rng(seed);

  std::vector<SegmentCache> caches;
  std::vector<std::uint32_t> window;
  // Feeding a token re-runs the open window; a full window rolls into the
  // segment cache so context always spans cache plus window, as in training.
  auto feed = [&](std::uint32_t tok) {
    window.push_back(tok);
    ForwardResult fr = forward(model, window, caches);
    if (window.size() == T) {
      caches = std::move(fr.caches);
      window.clear();
    }
    const std::size_t last = fr.logits.size(0) - 1;
    std::vector<double> row(fr.logits.size(1));
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = fr.logits.at(last, j);
    return row;
  };
  auto sample = [&](const std::vector<double>& row) {
    if (temperature == 0.0) {
      return static_cast<std::uint32_t>(
          std::max_element(row.begin(), row.end()) - row.begin());
    }
    std::vector<double> p(row.size());
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      p[j] = std::exp((row[j] - mx) / temperature);
      z += p[j];
    }
    double r = rng.uniform() * z;
    for (std::size_t j = 0; j < p.size(); ++j) {
      r -= p[j];
      if (r <= 0.0) return static_cast<std::uint32_t>(j);
    }
    return static_cast<std::uint32_t>(p.size() - 1);
  };

  std::vector<std::uint32_t> out = byte_tokenize(prompt);
  std::vector<double> row;
  if (out.empty()) {
    row = feed(static_cast<std::uint32_t>('\n'));  // sentinel context, not emitted
  } else {
    for (std::uint32_t tok : out) row = feed(tok);
  }
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const std::uint32_t next = sample(row);
    out.push_back(next);
    if (i + 1 < n_tokens) row = feed(next);
  }
  return byte_detokenize(out);
}

} // namespace modlm

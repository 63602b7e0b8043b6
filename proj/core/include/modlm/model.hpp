// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "modlm/attention.hpp"
#include "modlm/moe.hpp"
#include "modlm/objectives.hpp"
#include "modlm/tensor.hpp"

namespace modlm {

/// Learning-rate schedule shapes: both warm up linearly, then either decay
/// on a cosine to 10% of peak or hold the peak.
enum class Schedule { warmup_cosine, warmup_constant };

struct OptimSettings {
  double lr = 3e-4;
  /// Cosine decay floor; the warmup_constant schedule never reaches it.
  double lr_min = 3e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double clip_norm = 1.0;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 2000;
  Schedule schedule = Schedule::warmup_cosine;
};

/// Architecture and training hyperparameters. Defaults are the desk-scale
/// shape every end-to-end test trains.
struct ModelConfig {
  std::size_t d_emb = 128;
  std::size_t n_layer = 4;
  std::size_t n_att = 4;   // attention heads per layer
  std::size_t d_att = 32;  // per-head key/query/value width
  std::size_t n_ffd = 8;   // feed-forward experts per layer
  std::size_t d_ffd = 256; // expert hidden width
  std::size_t k_att = 2;
  std::size_t k_ffd = 2;
  std::size_t d_rtr = 64;  // router hidden width
  std::size_t vocab_size = 257;
  std::size_t segment_length = 64;
  double init_std = 0.02;
  /// Attention logit clamp; <= 0 disables.
  double logit_clamp = 30.0;
  LossWeights loss;
  OptimSettings optim;
  std::uint64_t seed = 1;

  /// ConfigError on any violated bound (zero extents, k above module count).
  void validate() const;
};

struct Block {
  Tensor att_norm_gain, att_norm_bias;
  MoALayer moa;
  Tensor ffd_norm_gain, ffd_norm_bias;
  SMoELayer smoe;
};

/// Decoder-only language model: embedding, pre-norm blocks of mixture
/// attention plus mixture feed-forward, final norm, output projection.
struct Model {
  ModelConfig config;
  Tensor embedding;    // [V x D_emb]
  std::vector<Block> blocks;
  Tensor final_norm_gain, final_norm_bias;
  Tensor output_proj;  // [V x D_emb]
  /// Completed optimizer steps; persisted so training resumes mid-schedule.
  std::uint64_t step = 0;
  /// Running per-layer expert selection counts, fed by training/eval passes
  /// that opt in; the pruning criterion reads these.
  std::vector<UsageStats> ffd_usage;

  /// Every trainable tensor with a stable, layer-qualified name. Order is
  /// fixed by construction so optimizer state can align by index.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
};

/// Seeded construction: normal(0, init_std) weights, output projections
/// additionally scaled by 1/sqrt(2 n_layer), norms at identity.
Model build_model(const ModelConfig& config);

struct LayerGates {
  GateDecision att;
  GateDecision ffd;
};

struct ForwardResult {
  Tensor logits;  // [T x V]
  /// Per-layer routing decisions, for the balancing losses and usage stats.
  std::vector<LayerGates> gates;
  /// Detached key/value segments to pass as `caches` for the next segment.
  std::vector<SegmentCache> caches;
};

/// Runs one token segment. `caches` is empty (no history) or one entry per
/// layer. Deterministic given parameters and caches; ContractError on an
/// out-of-vocabulary token.
ForwardResult forward(const Model& model, const std::vector<std::uint32_t>& tokens,
                      const std::vector<SegmentCache>& caches = {});

struct ParamCount {
  std::uint64_t total = 0;
  /// Parameters touched per token: routers, shared projections, embeddings,
  /// norms, and the k selected modules instead of all of them.
  std::uint64_t active = 0;
};

/// Closed-form count from the configuration alone.
ParamCount active_param_count(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Byte-level tokenizer: ids 0..255 are raw bytes, 256 pads.

inline constexpr std::uint32_t kPadToken = 256;
inline constexpr std::size_t kByteVocab = 257;

std::vector<std::uint32_t> byte_tokenize(const std::string& text);
/// Inverse of byte_tokenize; pad ids vanish. ContractError above the vocab.
std::string byte_detokenize(const std::vector<std::uint32_t>& ids);

} // namespace modlm

// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/model.hpp"

#include <cmath>
#include <string>

#include "modlm/ops.hpp"

namespace modlm {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  positive(d_emb, "d_emb");
  positive(n_layer, "n_layer");
  positive(n_att, "n_att");
  positive(d_att, "d_att");
  positive(n_ffd, "n_ffd");
  positive(d_ffd, "d_ffd");
  positive(k_att, "k_att");
  positive(k_ffd, "k_ffd");
  positive(d_rtr, "d_rtr");
  positive(vocab_size, "vocab_size");
  positive(segment_length, "segment_length");
  if (k_att > n_att) {
    throw ConfigError("config: k_att " + std::to_string(k_att) + " exceeds n_att " +
                      std::to_string(n_att));
  }
  if (k_ffd > n_ffd) {
    throw ConfigError("config: k_ffd " + std::to_string(k_ffd) + " exceeds n_ffd " +
                      std::to_string(n_ffd));
  }
  if (!(init_std > 0.0)) throw ConfigError("config: init_std must be positive");
  if (!(optim.lr > 0.0) || !(optim.lr_min >= 0.0) || optim.lr_min > optim.lr) {
    throw ConfigError("config: need 0 <= lr_min <= lr with lr positive");
  }
  if (optim.warmup_steps > optim.total_steps) {
    throw ConfigError("config: warmup_steps exceeds total_steps");
  }
}

Model build_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  // Residual branches add 2 n_layer contributions; shrinking their output
  // projections keeps the stream variance flat at depth.
  const double res_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layer));

  Model m;
  m.config = config;
  m.embedding = randn({config.vocab_size, config.d_emb}, rng, config.init_std);
  m.embedding.set_requires_grad(true);
  for (std::size_t l = 0; l < config.n_layer; ++l) {
    Block b;
    b.att_norm_gain = Tensor::full({config.d_emb}, 1.0);
    b.att_norm_bias = Tensor::zeros({config.d_emb});
    b.moa = make_moa_layer(config.n_att, config.d_emb, config.d_att, config.d_rtr,
                           config.k_att, config.init_std, res_scale, rng);
    b.moa.logit_clamp = config.logit_clamp;
    b.ffd_norm_gain = Tensor::full({config.d_emb}, 1.0);
    b.ffd_norm_bias = Tensor::zeros({config.d_emb});
    b.smoe = make_smoe_layer(config.n_ffd, config.d_emb, config.d_ffd, config.d_rtr,
                             config.k_ffd, config.init_std, res_scale, rng);
    for (Tensor* t : {&b.att_norm_gain, &b.att_norm_bias, &b.ffd_norm_gain,
                      &b.ffd_norm_bias}) {
      t->set_requires_grad(true);
    }
    m.blocks.push_back(std::move(b));
  }
  m.final_norm_gain = Tensor::full({config.d_emb}, 1.0);
  m.final_norm_bias = Tensor::zeros({config.d_emb});
  m.final_norm_gain.set_requires_grad(true);
  m.final_norm_bias.set_requires_grad(true);
  m.output_proj = randn({config.vocab_size, config.d_emb}, rng, config.init_std);
  m.output_proj.set_requires_grad(true);
  m.ffd_usage.resize(config.n_layer);
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const Block& b = blocks[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "att_norm.gain", b.att_norm_gain);
    out.emplace_back(p + "att_norm.bias", b.att_norm_bias);
    out.emplace_back(p + "moa.router.a", b.moa.router.a);
    out.emplace_back(p + "moa.router.b", b.moa.router.b);
    if (b.moa.router.a_ext.defined()) {
      out.emplace_back(p + "moa.router.a_ext", b.moa.router.a_ext);
    }
    // Shared projections are listed once at layer level; heads alias them.
    out.emplace_back(p + "moa.w_k", b.moa.w_k);
    out.emplace_back(p + "moa.w_v", b.moa.w_v);
    for (std::size_t h = 0; h < b.moa.heads.size(); ++h) {
      const std::string hp = p + "moa.head" + std::to_string(h) + ".";
      out.emplace_back(hp + "w_q", b.moa.heads[h].w_q);
      out.emplace_back(hp + "w_o", b.moa.heads[h].w_o);
    }
    out.emplace_back(p + "ffd_norm.gain", b.ffd_norm_gain);
    out.emplace_back(p + "ffd_norm.bias", b.ffd_norm_bias);
    out.emplace_back(p + "smoe.router.a", b.smoe.router.a);
    out.emplace_back(p + "smoe.router.b", b.smoe.router.b);
    if (b.smoe.router.a_ext.defined()) {
      out.emplace_back(p + "smoe.router.a_ext", b.smoe.router.a_ext);
    }
    for (std::size_t e = 0; e < b.smoe.experts.size(); ++e) {
      const std::string ep = p + "smoe.expert" + std::to_string(e) + ".";
      out.emplace_back(ep + "w_in", b.smoe.experts[e].w_in);
      out.emplace_back(ep + "w_out", b.smoe.experts[e].w_out);
    }
  }
  out.emplace_back("final_norm.gain", final_norm_gain);
  out.emplace_back("final_norm.bias", final_norm_bias);
  out.emplace_back("output_proj", output_proj);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ForwardResult forward(const Model& model, const std::vector<std::uint32_t>& tokens,
                      const std::vector<SegmentCache>& caches) {
  const ModelConfig& cfg = model.config;
  if (tokens.empty()) throw ContractError("forward: empty token segment");
  for (std::uint32_t t : tokens) {
    if (t >= cfg.vocab_size) {
      throw ContractError("forward: token " + std::to_string(t) +
                          " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
  }
  if (!caches.empty() && caches.size() != model.blocks.size()) {
    throw ContractError("forward: " + std::to_string(caches.size()) +
                        " caches for " + std::to_string(model.blocks.size()) +
                        " layers");
  }

  std::vector<std::size_t> rows(tokens.begin(), tokens.end());
  Tensor x = gather_rows(model.embedding, rows);
  ForwardResult out;
  static const SegmentCache no_history;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& b = model.blocks[l];
    const SegmentCache& cache = caches.empty() ? no_history : caches[l];
    MoAResult att = moa_forward(b.moa, layer_norm(x, b.att_norm_gain, b.att_norm_bias),
                                cache);
    x = add(x, att.y);
    SMoEResult ffd =
        smoe_forward(b.smoe, layer_norm(x, b.ffd_norm_gain, b.ffd_norm_bias));
    x = add(x, ffd.y);
    out.gates.push_back({att.gate, ffd.gate});
    out.caches.push_back(update_cache(cache, att.new_keys, att.new_values));
  }
  Tensor h = layer_norm(x, model.final_norm_gain, model.final_norm_bias);
  out.logits = matmul_nt(h, model.output_proj);
  return out;
}

ParamCount active_param_count(const ModelConfig& config) {
  config.validate();
  const std::uint64_t d = config.d_emb, a = config.d_att, f = config.d_ffd,
                      r = config.d_rtr, v = config.vocab_size;
  const std::uint64_t head = 2 * d * a;    // per-head query + output
  const std::uint64_t expert = 2 * f * d;  // per-expert in + out
  // Everything a token always touches inside one layer: two norms, both
  // routers, the shared key/value projections.
  const std::uint64_t layer_shared = 4 * d + (config.n_att * r + r * d) + 2 * d * a +
                                     (config.n_ffd * r + r * d);
  const std::uint64_t outer = v * d + v * d + 2 * d;

  ParamCount c;
  c.total = outer + config.n_layer *
                        (layer_shared + config.n_att * head + config.n_ffd * expert);
  c.active = outer + config.n_layer *
                         (layer_shared + config.k_att * head + config.k_ffd * expert);
  return c;
}

std::vector<std::uint32_t> byte_tokenize(const std::string& text) {
  std::vector<std::uint32_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string byte_detokenize(const std::vector<std::uint32_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::uint32_t id : ids) {
    if (id >= kByteVocab) {
      throw ContractError("byte_detokenize: id " + std::to_string(id) +
                          " outside vocabulary");
    }
    if (id == kPadToken) continue;
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

} // namespace modlm

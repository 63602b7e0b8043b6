// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace modlm {

namespace {

using nlohmann::json;

// Payload doubles are written as raw host bytes; the format pins them to
// little endian.
static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

constexpr const char* kMagic = "modlm checkpoint v1";

json config_json(const ModelConfig& c) {
  json j;
  j["d_emb"] = c.d_emb;
  j["n_layer"] = c.n_layer;
  j["n_att"] = c.n_att;
  j["d_att"] = c.d_att;
  j["n_ffd"] = c.n_ffd;
  j["d_ffd"] = c.d_ffd;
  j["k_att"] = c.k_att;
  j["k_ffd"] = c.k_ffd;
  j["d_rtr"] = c.d_rtr;
  j["vocab_size"] = c.vocab_size;
  j["segment_length"] = c.segment_length;
  j["init_std"] = c.init_std;
  j["logit_clamp"] = c.logit_clamp;
  j["loss"] = {{"mi", c.loss.mi},
               {"concentration", c.loss.concentration},
               {"routing_reg", c.loss.routing_reg}};
  j["optim"] = {{"lr", c.optim.lr},
                {"lr_min", c.optim.lr_min},
                {"weight_decay", c.optim.weight_decay},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"eps", c.optim.eps},
                {"clip_norm", c.optim.clip_norm},
                {"warmup_steps", c.optim.warmup_steps},
                {"total_steps", c.optim.total_steps},
                {"schedule", c.optim.schedule == Schedule::warmup_cosine
                                 ? "warmup_cosine"
                                 : "warmup_constant"}};
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  try {
    c.d_emb = j.at("d_emb").get<std::size_t>();
    c.n_layer = j.at("n_layer").get<std::size_t>();
    c.n_att = j.at("n_att").get<std::size_t>();
    c.d_att = j.at("d_att").get<std::size_t>();
    c.n_ffd = j.at("n_ffd").get<std::size_t>();
    c.d_ffd = j.at("d_ffd").get<std::size_t>();
    c.k_att = j.at("k_att").get<std::size_t>();
    c.k_ffd = j.at("k_ffd").get<std::size_t>();
    c.d_rtr = j.at("d_rtr").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.segment_length = j.at("segment_length").get<std::size_t>();
    c.init_std = j.at("init_std").get<double>();
    c.logit_clamp = j.at("logit_clamp").get<double>();
    const json& loss = j.at("loss");
    c.loss.mi = loss.at("mi").get<double>();
    c.loss.concentration = loss.at("concentration").get<double>();
    c.loss.routing_reg = loss.at("routing_reg").get<double>();
    const json& optim = j.at("optim");
    c.optim.lr = optim.at("lr").get<double>();
    c.optim.lr_min = optim.at("lr_min").get<double>();
    c.optim.weight_decay = optim.at("weight_decay").get<double>();
    c.optim.beta1 = optim.at("beta1").get<double>();
    c.optim.beta2 = optim.at("beta2").get<double>();
    c.optim.eps = optim.at("eps").get<double>();
    c.optim.clip_norm = optim.at("clip_norm").get<double>();
    c.optim.warmup_steps = optim.at("warmup_steps").get<std::size_t>();
    c.optim.total_steps = optim.at("total_steps").get<std::size_t>();
    const std::string sched = optim.at("schedule").get<std::string>();
    if (sched == "warmup_cosine") {
      c.optim.schedule = Schedule::warmup_cosine;
    } else if (sched == "warmup_constant") {
      c.optim.schedule = Schedule::warmup_constant;
    } else {
      throw IoError("config: unknown schedule \"" + sched + "\"");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError(std::string("config: ") + e.what());
  }
  return c;
}

struct ManifestEntry {
  Shape shape;
  std::uint64_t offset = 0;
  bool trainable = false;
};

// Consumes manifest entries by role: every tensor the assembled model needs
// must exist with the expected shape, and nothing may be left over.
class PayloadReader {
public:
  PayloadReader(std::map<std::string, ManifestEntry> entries, std::vector<char> payload)
      : entries_(std::move(entries)), payload_(std::move(payload)) {}

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  /// Row count of a named 2-d tensor, 0 when absent.
  std::size_t rows(const std::string& name) const {
    auto it = entries_.find(name);
    return it == entries_.end() || it->second.shape.size() != 2 ? 0
                                                                : it->second.shape[0];
  }

  Tensor take(const std::string& name, const Shape& expected) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw IoError("load_checkpoint: manifest is missing \"" + name + "\"");
    }
    const ManifestEntry e = it->second;
    if (e.shape != expected) {
      throw IoError("load_checkpoint: \"" + name + "\" has shape " +
                    shape_str(e.shape) + ", expected " + shape_str(expected));
    }
    const std::size_t n = shape_numel(e.shape);
    if (e.offset + n * sizeof(double) > payload_.size()) {
      throw IoError("load_checkpoint: payload truncated at \"" + name + "\"");
    }
    std::vector<double> values(n);
    std::memcpy(values.data(), payload_.data() + e.offset, n * sizeof(double));
    Tensor t = Tensor::from_values(e.shape, std::move(values));
    t.set_requires_grad(e.trainable);
    entries_.erase(it);
    return t;
  }

  void finish() const {
    if (!entries_.empty()) {
      throw IoError("load_checkpoint: manifest entry \"" + entries_.begin()->first +
                    "\" does not belong to the model layout");
    }
  }

private:
  std::map<std::string, ManifestEntry> entries_;
  std::vector<char> payload_;
};

Router load_router(PayloadReader& r, const std::string& prefix, std::size_t modules,
                   std::size_t d_rtr, std::size_t d_emb) {
  Router router;
  const std::size_t base = r.rows(prefix + ".a");
  if (base == 0 || base > modules) {
    throw IoError("load_checkpoint: \"" + prefix + ".a\" rows do not cover " +
                  std::to_string(modules) + " modules");
  }
  router.a = r.take(prefix + ".a", {base, d_rtr});
  router.b = r.take(prefix + ".b", {d_rtr, d_emb});
  if (base < modules) {
    router.a_ext = r.take(prefix + ".a_ext", {modules - base, d_rtr});
  } else if (r.has(prefix + ".a_ext")) {
    throw IoError("load_checkpoint: \"" + prefix + ".a_ext\" present but base "
                  "rows already cover every module");
  }
  return router;
}

// Highest consecutive count of names prefix0.probe, prefix1.probe, ...
std::size_t count_modules(const PayloadReader& r, const std::string& prefix,
                          const std::string& probe) {
  std::size_t n = 0;
  while (r.has(prefix + std::to_string(n) + probe)) ++n;
  return n;
}

} // namespace

std::string config_to_json(const ModelConfig& config) {
  return config_json(config).dump(2);
}

ModelConfig config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw IoError("config: malformed JSON");
  return config_from(j);
}

void save_checkpoint(const Model& model, const std::string& path) {
  auto named = model.named_parameters();
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : named) {
    manifest.push_back({{"name", name},
                        {"shape", t.shape()},
                        {"offset", offset},
                        {"trainable", t.requires_grad()}});
    offset += t.numel() * sizeof(double);
  }
  json usage = json::array();
  for (const UsageStats& u : model.ffd_usage) {
    usage.push_back({{"counts", u.counts}, {"token_total", u.token_total}});
  }
  json header;
  header["format"] = 1;
  header["step"] = model.step;
  header["config"] = config_json(model.config);
  header["usage"] = usage;
  header["manifest"] = manifest;
  const std::string head = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  f << kMagic << "\n" << head.size() << "\n" << head << "\n";
  for (const auto& [name, t] : named) {
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != kMagic) {
    throw IoError("load_checkpoint: unsupported format line \"" + magic + "\"");
  }
  std::string len_line;
  std::getline(f, len_line);
  std::size_t head_len = 0;
  auto [p, ec] = std::from_chars(len_line.data(), len_line.data() + len_line.size(),
                                 head_len);
  if (ec != std::errc() || p != len_line.data() + len_line.size() || head_len == 0) {
    throw IoError("load_checkpoint: bad header length line");
  }
  std::string head(head_len, '\0');
  f.read(head.data(), static_cast<std::streamsize>(head_len));
  if (static_cast<std::size_t>(f.gcount()) != head_len || f.get() != '\n') {
    throw IoError("load_checkpoint: truncated header");
  }
  json header = json::parse(head, nullptr, false);
  if (header.is_discarded()) throw IoError("load_checkpoint: malformed header");

  Model m;
  std::map<std::string, ManifestEntry> entries;
  try {
    if (header.at("format").get<int>() != 1) {
      throw IoError("load_checkpoint: unsupported format version");
    }
    m.config = config_from(header.at("config"));
    m.step = header.at("step").get<std::uint64_t>();
    for (const json& u : header.at("usage")) {
      UsageStats s;
      s.counts = u.at("counts").get<std::vector<std::uint64_t>>();
      s.token_total = u.at("token_total").get<std::uint64_t>();
      m.ffd_usage.push_back(std::move(s));
    }
    for (const json& e : header.at("manifest")) {
      ManifestEntry entry;
      entry.shape = e.at("shape").get<Shape>();
      entry.offset = e.at("offset").get<std::uint64_t>();
      entry.trainable = e.at("trainable").get<bool>();
      if (!entries.emplace(e.at("name").get<std::string>(), entry).second) {
        throw IoError("load_checkpoint: duplicate manifest entry");
      }
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("load_checkpoint: header field: ") + e.what());
  }
  try {
    m.config.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("load_checkpoint: stored config invalid: ") + e.what());
  }
  if (m.ffd_usage.size() != m.config.n_layer) {
    throw IoError("load_checkpoint: usage snapshot does not cover every layer");
  }

  std::vector<char> payload((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());
  PayloadReader reader(std::move(entries), std::move(payload));

  const std::size_t d = m.config.d_emb, a = m.config.d_att, ff = m.config.d_ffd,
                    r = m.config.d_rtr, v = m.config.vocab_size;
  m.embedding = reader.take("embedding", {v, d});
  for (std::size_t l = 0; l < m.config.n_layer; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Block b;
    b.att_norm_gain = reader.take(p + "att_norm.gain", {d});
    b.att_norm_bias = reader.take(p + "att_norm.bias", {d});
    const std::size_t heads = count_modules(reader, p + "moa.head", ".w_q");
    if (heads < m.config.k_att) {
      throw IoError("load_checkpoint: layer " + std::to_string(l) + " has " +
                    std::to_string(heads) + " heads but k_att needs " +
                    std::to_string(m.config.k_att));
    }
    b.moa.router = load_router(reader, p + "moa.router", heads, r, d);
    b.moa.w_k = reader.take(p + "moa.w_k", {d, a});
    b.moa.w_v = reader.take(p + "moa.w_v", {d, a});
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string hp = p + "moa.head" + std::to_string(h) + ".";
      StickBreakingHead head;
      head.w_q = reader.take(hp + "w_q", {d, a});
      head.w_o = reader.take(hp + "w_o", {d, a});
      head.w_k = b.moa.w_k;
      head.w_v = b.moa.w_v;
      b.moa.heads.push_back(std::move(head));
    }
    b.moa.top_k = m.config.k_att;
    b.moa.logit_clamp = m.config.logit_clamp;
    b.ffd_norm_gain = reader.take(p + "ffd_norm.gain", {d});
    b.ffd_norm_bias = reader.take(p + "ffd_norm.bias", {d});
    const std::size_t experts = count_modules(reader, p + "smoe.expert", ".w_in");
    if (experts < m.config.k_ffd) {
      throw IoError("load_checkpoint: layer " + std::to_string(l) + " has " +
                    std::to_string(experts) + " experts but k_ffd needs " +
                    std::to_string(m.config.k_ffd));
    }
    b.smoe.router = load_router(reader, p + "smoe.router", experts, r, d);
    for (std::size_t e = 0; e < experts; ++e) {
      const std::string ep = p + "smoe.expert" + std::to_string(e) + ".";
      FFDExpert expert;
      expert.w_in = reader.take(ep + "w_in", {ff, d});
      expert.w_out = reader.take(ep + "w_out", {d, ff});
      b.smoe.experts.push_back(std::move(expert));
    }
    b.smoe.top_k = m.config.k_ffd;
    if (m.ffd_usage[l].counts.empty()) {
      // A fresh snapshot tracks the layer's actual arity from the start.
    } else if (m.ffd_usage[l].counts.size() != experts) {
      throw IoError("load_checkpoint: layer " + std::to_string(l) +
                    " usage counts do not match its expert count");
    }
    m.blocks.push_back(std::move(b));
  }
  m.final_norm_gain = reader.take("final_norm.gain", {d});
  m.final_norm_bias = reader.take("final_norm.bias", {d});
  m.output_proj = reader.take("output_proj", {v, d});
  reader.finish();
  return m;
}

} // namespace modlm

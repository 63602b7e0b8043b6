// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "modlm/checkpoint.hpp"
#include "modlm/corpus.hpp"
#include "modlm/diagnostics.hpp"
#include "modlm/lifecycle.hpp"

namespace {

using namespace modlm;

// Flags that assemble a TrainPlan; only flags the user passed override the
// plan's defaults, so config files and presets survive partial overrides.
struct PlanFlags {
  CLI::Option* budget = nullptr;
  CLI::Option* batch = nullptr;
  CLI::Option* segment = nullptr;
  CLI::Option* warmup = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* lr_min = nullptr;
  CLI::Option* weight_decay = nullptr;
  CLI::Option* clip = nullptr;
  CLI::Option* seed = nullptr;
  std::uint64_t budget_v = 0, warmup_v = 0, seed_v = 0;
  std::size_t batch_v = 0, segment_v = 0;
  double lr_v = 0, lr_min_v = 0, wd_v = 0, clip_v = 0;

  void attach(CLI::App& cmd) {
    budget = cmd.add_option("--budget", budget_v, "Training budget in tokens");
    batch = cmd.add_option("--batch", batch_v, "Tokens per optimizer step");
    segment = cmd.add_option("--segment", segment_v, "Segment length in tokens");
    warmup = cmd.add_option("--warmup", warmup_v, "Warmup budget in tokens");
    lr = cmd.add_option("--lr", lr_v, "Peak learning rate");
    lr_min = cmd.add_option("--lr-min", lr_min_v, "Cosine decay floor");
    weight_decay = cmd.add_option("--weight-decay", wd_v, "Decoupled weight decay");
    clip = cmd.add_option("--clip", clip_v, "Gradient norm clip, 0 disables");
    seed = cmd.add_option("--seed", seed_v, "Plan seed");
  }

  void apply(TrainPlan& plan) const {
    if (budget->count()) {
      plan.budget_tokens = budget_v;
      // Keep the default warmup at 5% of whatever budget was chosen.
      if (!warmup->count()) plan.warmup_tokens = budget_v / 20;
    }
    if (batch->count()) plan.batch_tokens = batch_v;
    if (segment->count()) plan.segment_length = segment_v;
    if (warmup->count()) plan.warmup_tokens = warmup_v;
    if (lr->count()) plan.optim.lr = lr_v;
    if (lr_min->count()) plan.optim.lr_min = lr_min_v;
    if (weight_decay->count()) plan.optim.weight_decay = wd_v;
    if (clip->count()) plan.optim.clip_norm = clip_v;
    if (seed->count()) plan.seed = seed_v;
  }
};

std::vector<std::uint32_t> read_corpus(const std::string& path) {
  return load_corpus_file(path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write to " + path);
}

void emit_metrics(const std::string& path, const MetricsLog& log) {
  if (!path.empty()) write_text(path, metrics_to_jsonl(log));
}

void print_run_summary(const MetricsLog& log) {
  if (log.empty()) {
    std::puts("0 steps (empty budget)");
    return;
  }
  const MetricsRecord& r = log.back();
  std::printf("%llu steps, %llu tokens, final lm loss %.4f, grad norm %.3f\n",
              static_cast<unsigned long long>(log.size()),
              static_cast<unsigned long long>(r.tokens_seen), r.losses.lm,
              r.grad_norm);
}

ModelConfig config_from_flags(const CLI::App& cmd, const std::string& config_path,
                              const ModelConfig& overrides, const ModelConfig& defaults) {
  ModelConfig c = defaults;
  if (!config_path.empty()) c = config_from_json(read_text(config_path));
  // Individual dimension flags win over the file.
  auto take = [&cmd](const std::string& flag, auto& dst, const auto& src) {
    if (cmd.count(flag)) dst = src;
  };
  take("--d-emb", c.d_emb, overrides.d_emb);
  take("--n-layer", c.n_layer, overrides.n_layer);
  take("--n-att", c.n_att, overrides.n_att);
  take("--d-att", c.d_att, overrides.d_att);
  take("--n-ffd", c.n_ffd, overrides.n_ffd);
  take("--d-ffd", c.d_ffd, overrides.d_ffd);
  take("--k-att", c.k_att, overrides.k_att);
  take("--k-ffd", c.k_ffd, overrides.k_ffd);
  take("--d-rtr", c.d_rtr, overrides.d_rtr);
  take("--model-seed", c.seed, overrides.seed);
  return c;
}

void attach_model_flags(CLI::App& cmd, ModelConfig& m) {
  cmd.add_option("--d-emb", m.d_emb, "Embedding width");
  cmd.add_option("--n-layer", m.n_layer, "Block count");
  cmd.add_option("--n-att", m.n_att, "Attention heads per block");
  cmd.add_option("--d-att", m.d_att, "Per-head width");
  cmd.add_option("--n-ffd", m.n_ffd, "Feed-forward experts per block");
  cmd.add_option("--d-ffd", m.d_ffd, "Expert hidden width");
  cmd.add_option("--k-att", m.k_att, "Active heads per token");
  cmd.add_option("--k-ffd", m.k_ffd, "Active experts per token");
  cmd.add_option("--d-rtr", m.d_rtr, "Router embedding width");
  cmd.add_option("--model-seed", m.seed, "Initialization seed");
}

int run(int argc, char** argv) {
  CLI::App app{"modlm: a desk-scale sparse mixture-of-experts language model"};
  app.require_subcommand(1);

  // --- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Pretrain from scratch (or continue from --init)");
  std::string t_config, t_corpus, t_out, t_metrics, t_init;
  double t_mi = 0.01;
  ModelConfig t_overrides;
  PlanFlags t_flags;
  train_cmd->add_option("--config", t_config, "Model config JSON file");
  train_cmd->add_option("--corpus", t_corpus, "Training bytes")->required();
  train_cmd->add_option("--out", t_out, "Checkpoint to write")->required();
  train_cmd->add_option("--metrics", t_metrics, "Metrics JSONL file");
  train_cmd->add_option("--init", t_init, "Checkpoint to continue from");
  train_cmd->add_option("--mi", t_mi, "Balancing loss weight");
  attach_model_flags(*train_cmd, t_overrides);
  t_flags.attach(*train_cmd);

  // --- finetune ------------------------------------------------------------
  auto* fine_cmd = app.add_subcommand("finetune", "Concentration finetuning on a narrow domain");
  std::string f_model, f_corpus, f_eval, f_out, f_metrics;
  double f_conc = 0.001;
  PlanFlags f_flags;
  fine_cmd->add_option("--model", f_model, "Checkpoint to start from")->required();
  fine_cmd->add_option("--corpus", f_corpus, "Domain bytes")->required();
  fine_cmd->add_option("--eval-corpus", f_eval, "Held-out bytes for the usage snapshot");
  fine_cmd->add_option("--out", f_out, "Checkpoint to write")->required();
  fine_cmd->add_option("--metrics", f_metrics, "Metrics JSONL file");
  fine_cmd->add_option("--concentration", f_conc, "Concentration loss weight");
  f_flags.attach(*fine_cmd);

  // --- extend --------------------------------------------------------------
  auto* ext_cmd = app.add_subcommand("extend", "Insert frozen-base experts and train them on a new domain");
  std::string e_model, e_corpus, e_out, e_metrics;
  std::size_t e_new = 0;
  double e_reg = 0.0;
  bool e_freeze_embedding = false;
  PlanFlags e_flags;
  ext_cmd->add_option("--model", e_model, "Checkpoint to start from")->required();
  ext_cmd->add_option("--corpus", e_corpus, "New-domain bytes")->required();
  ext_cmd->add_option("--out", e_out, "Checkpoint to write")->required();
  ext_cmd->add_option("--metrics", e_metrics, "Metrics JSONL file");
  ext_cmd->add_option("--experts", e_new, "New experts per layer")->required();
  ext_cmd->add_option("--reg", e_reg, "Extension penalty weight");
  ext_cmd->add_flag("--freeze-embedding", e_freeze_embedding,
                    "Freeze the embedding too (default keeps it trainable)");
  e_flags.attach(*ext_cmd);

  // --- prune ---------------------------------------------------------------
  auto* prune_cmd = app.add_subcommand("prune", "Drop low-frequency experts");
  std::string p_model, p_corpus, p_out;
  std::size_t p_segment = 64;
  double p_tau = 0.0;
  prune_cmd->add_option("--model", p_model, "Checkpoint to prune")->required();
  prune_cmd->add_option("--out", p_out, "Checkpoint to write")->required();
  prune_cmd->add_option("--tau", p_tau, "Max-relative frequency threshold")->required();
  prune_cmd->add_option("--corpus", p_corpus,
                        "Measure usage on these bytes instead of the stored snapshot");
  prune_cmd->add_option("--segment", p_segment, "Segment length for --corpus measurement");

  // --- eval ----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Held-out byte perplexity");
  std::string v_model, v_corpus;
  std::size_t v_segment = 0;
  eval_cmd->add_option("--model", v_model, "Checkpoint")->required();
  eval_cmd->add_option("--corpus", v_corpus, "Evaluation bytes")->required();
  eval_cmd->add_option("--segment", v_segment, "Segment length (default: training length)");

  // --- generate ------------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("generate", "Sample bytes from a checkpoint");
  std::string g_model, g_prompt;
  std::size_t g_tokens = 256;
  double g_temp = 0.8;
  std::uint64_t g_seed = 1;
  gen_cmd->add_option("--model", g_model, "Checkpoint")->required();
  gen_cmd->add_option("--prompt", g_prompt, "Prompt bytes");
  gen_cmd->add_option("--tokens", g_tokens, "Bytes to sample");
  gen_cmd->add_option("--temperature", g_temp, "0 decodes greedily");
  gen_cmd->add_option("--seed", g_seed, "Sampler seed");

  // --- stats ---------------------------------------------------------------
  auto* stats_cmd = app.add_subcommand("stats", "Config, parameter counts, usage, divergence");
  std::string s_model, s_corpus;
  std::vector<std::string> s_domains;
  std::size_t s_segment = 64;
  stats_cmd->add_option("--model", s_model, "Checkpoint")->required();
  stats_cmd->add_option("--corpus", s_corpus, "Measure usage on these bytes");
  stats_cmd->add_option("--domain", s_domains,
                        "name=file; twice or more for a divergence matrix");
  stats_cmd->add_option("--segment", s_segment, "Segment length for measurements");

  // --- check ---------------------------------------------------------------
  auto* check_cmd = app.add_subcommand("check", "Run the built-in invariant and gradient suite");
  std::uint64_t c_seed = 1;
  check_cmd->add_option("--seed", c_seed, "Suite seed");

  // --- synth ---------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus");
  std::string y_kind, y_out;
  std::size_t y_bytes = 1 << 20;
  std::uint64_t y_seed = 1;
  synth_cmd->add_option("--kind", y_kind, "prose or arithmetic")
      ->required()
      ->check(CLI::IsMember({"prose", "arithmetic"}));
  synth_cmd->add_option("--out", y_out, "File to write")->required();
  synth_cmd->add_option("--bytes", y_bytes, "Corpus size");
  synth_cmd->add_option("--seed", y_seed, "Generator seed");

  CLI11_PARSE(app, argc, argv);

  if (train_cmd->parsed()) {
    ModelConfig cfg = config_from_flags(*train_cmd, t_config, t_overrides, ModelConfig{});
    // A fresh model trains at the plan's segment length.
    if (t_flags.segment->count()) cfg.segment_length = t_flags.segment_v;
    Model model = t_init.empty() ? build_model(cfg) : load_checkpoint(t_init);
    TrainPlan plan;
    plan.mode = TrainPlan::Mode::pretrain;
    plan.loss.mi = t_mi;
    plan.segment_length = model.config.segment_length;
    plan.corpus = read_corpus(t_corpus);
    t_flags.apply(plan);
    const MetricsLog log = train(model, plan);
    emit_metrics(t_metrics, log);
    save_checkpoint(model, t_out);
    print_run_summary(log);
    return 0;
  }

  if (fine_cmd->parsed()) {
    Model model = load_checkpoint(f_model);
    TrainPlan plan;
    plan.mode = TrainPlan::Mode::finetune_concentrate;
    plan.loss.concentration = f_conc;
    plan.segment_length = model.config.segment_length;
    plan.corpus = read_corpus(f_corpus);
    if (!f_eval.empty()) plan.eval_corpus = read_corpus(f_eval);
    f_flags.apply(plan);
    const FinetuneResult result = finetune_concentrate(model, plan);
    emit_metrics(f_metrics, result.log);
    // Pruning reads the stored snapshot, so persist the measured usage.
    model.ffd_usage = result.usage;
    save_checkpoint(model, f_out);
    print_run_summary(result.log);
    for (std::size_t l = 0; l < result.usage.size(); ++l) {
      std::fputs(usage_table(result.usage[l], "layer " + std::to_string(l)).c_str(),
                 stdout);
    }
    return 0;
  }

  if (ext_cmd->parsed()) {
    Model model = load_checkpoint(e_model);
    TrainPlan plan;
    plan.mode = TrainPlan::Mode::continual_insert;
    plan.segment_length = model.config.segment_length;
    plan.corpus = read_corpus(e_corpus);
    e_flags.apply(plan);
    const MetricsLog log =
        extend_and_train(model, plan, e_new, e_reg, !e_freeze_embedding);
    emit_metrics(e_metrics, log);
    save_checkpoint(model, e_out);
    print_run_summary(log);
    return 0;
  }

  if (prune_cmd->parsed()) {
    if (!(p_tau >= 0.0) || p_tau >= 1.0) {
      throw ConfigError("prune: threshold must lie in [0, 1)");
    }
    Model model = load_checkpoint(p_model);
    std::vector<UsageStats> stats = model.ffd_usage;
    if (!p_corpus.empty()) {
      stats = collect_usage(model, read_corpus(p_corpus), p_segment);
    }
    for (const UsageStats& s : stats) {
      if (s.token_total == 0) {
        throw ConfigError(
            "prune: the checkpoint carries no usage snapshot; pass --corpus");
      }
    }
    const PruneReport report = prune(model, stats, p_tau);
    save_checkpoint(model, p_out);
    std::fputs(report.table().c_str(), stdout);
    return 0;
  }

  if (eval_cmd->parsed()) {
    const Model model = load_checkpoint(v_model);
    const std::size_t T = v_segment ? v_segment : model.config.segment_length;
    const double ppl = evaluate_perplexity(model, read_corpus(v_corpus), T);
    std::printf("perplexity %.6f (segment %zu)\n", ppl, T);
    return 0;
  }

  if (gen_cmd->parsed()) {
    const Model model = load_checkpoint(g_model);
    const std::string text = generate(model, g_prompt, g_tokens, g_temp, g_seed);
    std::fwrite(text.data(), 1, text.size(), stdout);
    std::fputc('\n', stdout);
    return 0;
  }

  if (stats_cmd->parsed()) {
    const Model model = load_checkpoint(s_model);
    const ParamCount count = active_param_count(model.config);
    std::printf("step %llu\n", static_cast<unsigned long long>(model.step));
    std::printf("config %s\n", config_to_json(model.config).c_str());
    std::printf("parameters %llu total, %llu active per token (%.1f%%)\n",
                static_cast<unsigned long long>(count.total),
                static_cast<unsigned long long>(count.active),
                100.0 * static_cast<double>(count.active) / static_cast<double>(count.total));
    const std::vector<UsageStats>* usage = &model.ffd_usage;
    std::vector<UsageStats> measured;
    if (!s_corpus.empty()) {
      measured = collect_usage(model, read_corpus(s_corpus), s_segment);
      usage = &measured;
    }
    for (std::size_t l = 0; l < usage->size(); ++l) {
      if ((*usage)[l].token_total == 0) continue;
      std::fputs(usage_table((*usage)[l], "layer " + std::to_string(l)).c_str(), stdout);
    }
    if (!s_domains.empty()) {
      std::vector<std::string> names;
      std::vector<std::vector<UsageStats>> by_domain;
      for (const std::string& spec : s_domains) {
        const std::size_t eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
          throw ConfigError("stats: --domain expects name=file, got " + spec);
        }
        names.push_back(spec.substr(0, eq));
        by_domain.push_back(
            collect_usage(model, read_corpus(spec.substr(eq + 1)), s_segment));
      }
      const auto matrix = expert_distribution_divergence(by_domain);
      std::fputs(divergence_table(matrix, names).c_str(), stdout);
    }
    return 0;
  }

  if (check_cmd->parsed()) {
    const CheckReport report = run_self_check(c_seed);
    std::fputs(report.text.c_str(), stdout);
    return report.ok ? 0 : 1;
  }

  if (synth_cmd->parsed()) {
    const std::string text = y_kind == "prose" ? synthetic_prose(y_bytes, y_seed)
                                               : synthetic_arithmetic(y_bytes, y_seed);
    write_text(y_out, text);
    std::printf("%zu bytes of %s to %s\n", text.size(), y_kind.c_str(), y_out.c_str());
    return 0;
  }

  return 1;  // unreachable: a subcommand is required
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const modlm::Error& e) {
    std::fprintf(stderr, "modlm: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "modlm: %s\n", e.what());
    return 1;
  }
}

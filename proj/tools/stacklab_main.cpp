#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stacklab/analysis.hpp"
#include "stacklab/checkpoint.hpp"
#include "stacklab/config.hpp"
#include "stacklab/corpus_gen.hpp"
#include "stacklab/eval.hpp"
#include "stacklab/primitives.hpp"
#include "stacklab/stacking.hpp"
#include "stacklab/stream.hpp"
#include "stacklab/trainer.hpp"

namespace fs = std::filesystem;
using namespace stacklab;

namespace {

// --out flag > config value > $STACKLAB_OUT/<run_name>.
std::string resolve_out_dir(const std::string& flag, const std::string& from_config,
                            const std::string& run_name) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* root = std::getenv("STACKLAB_OUT")) {
    if (root[0] != '\0') return (fs::path(root) / run_name).string();
  }
  throw ConfigError("no output directory: pass --out, set [run] out_dir, or set STACKLAB_OUT");
}

int cmd_pretrain(const std::string& config_path, const std::string& out_flag,
                 int64_t seed_flag) {
  TrainConfig config = load_train_config(config_path);
  config.out_dir = resolve_out_dir(out_flag, config.out_dir, config.run_name);
  if (seed_flag >= 0) config.init_seed = static_cast<uint64_t>(seed_flag);
  const PretrainResult r = pretrain(config);
  std::printf(
      "pretrain done: run=%s stages=%zu final_depth=%d steps=%lld layer_steps=%lld "
      "epochs=%lld val_loss=%.4f out=%s\n",
      config.run_name.c_str(), r.plan.stages(), config.model.n_layers,
      static_cast<long long>(config.total_steps), static_cast<long long>(r.executed_layer_steps),
      static_cast<long long>(r.epochs_completed), r.final_val_loss, config.out_dir.c_str());
  return 0;
}

int cmd_finetune(const std::string& config_path, const std::string& out_flag) {
  FinetuneRunConfig config = load_finetune_config(config_path);
  config.out_dir = resolve_out_dir(out_flag, config.out_dir, config.run_name);
  fs::create_directories(config.out_dir);
  const TransformerParams base = load_checkpoint(config.checkpoint);
  const FinetuneEvalResult r = run_finetune_eval(base, config.protocol);

  const std::string csv_path = (fs::path(config.out_dir) / "finetune_eval.csv").string();
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + csv_path);
  csv << "depth,mean_accuracy,std_accuracy";
  for (int s = 0; s < config.protocol.n_seeds; ++s) csv << ",seed" << s;
  csv << "\n";
  char buf[64];
  for (const FinetuneDepthResult& d : r.per_depth) {
    csv << d.depth;
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", d.mean_accuracy, d.std_accuracy);
    csv << buf;
    for (double v : d.per_seed) {
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      csv << buf;
    }
    csv << "\n";
  }
  for (const FinetuneDepthResult& d : r.per_depth) {
    std::printf("depth %d: accuracy %.4f +/- %.4f\n", d.depth, d.mean_accuracy, d.std_accuracy);
  }
  std::printf("finetune eval done: checkpoint=%s seeds=%d train-acc@%d=[",
              config.checkpoint.c_str(), config.protocol.n_seeds,
              config.protocol.window_start);
  for (size_t i = 0; i < r.train_acc_at_window_start.size(); ++i) {
    std::printf("%s%.3f", i ? "," : "", r.train_acc_at_window_start[i]);
  }
  std::printf("] out=%s\n", csv_path.c_str());
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& task, const std::string& variant,
                 int depth, int k, int n, uint64_t seed, bool calc,
                 const std::string& emit_path) {
  EvalTaskSpec spec;
  spec.task = task_from_string(task);
  spec.variant = variant_from_string(variant);
  spec.depth = depth;
  spec.k_shot = k;
  spec.n_examples = n;
  spec.seed = seed;
  spec.calc_scoring = calc;
  spec.name = task + (variant == "none" ? "" : "_" + variant);
  const TransformerParams params = load_checkpoint(ckpt);
  const EvalResult r = evaluate_task(make_model_completer(params), spec);
  if (!emit_path.empty()) write_emissions(r.emissions, emit_path);
  std::printf("task=%s accuracy=%.4f scored=%d skipped=%d\n", spec.name.c_str(), r.accuracy,
              r.n_scored, r.n_skipped);
  return 0;
}

int cmd_analyze(const std::string& ckpt, const std::string& metric, int block_size,
                const std::string& corpus_path, double fraction, const std::string& out_path) {
  const TransformerParams params = load_checkpoint(ckpt);
  char hex[20];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(file_fnv1a(ckpt)));

  auto probe_batch = [&]() {
    if (corpus_path.empty()) {
      throw ConfigError("analyze: --corpus is required for metric '" + metric + "'");
    }
    const CorpusSplit split = split_validation(load_corpus(corpus_path));
    return make_validation_batches(split.val, params.config.seq_len, 16, 1)[0];
  };

  if (metric == "block_cosine") {
    const SimilarityMatrix m = block_cosine_similarity(params, block_size);
    write_similarity_csv(m, out_path, hex);
    double off_max = -1.0;
    size_t oi = 0, oj = 0;
    for (size_t i = 0; i < m.n(); ++i) {
      for (size_t j = 0; j < m.n(); ++j) {
        if (i != j && m.at(i, j) > off_max) {
          off_max = m.at(i, j);
          oi = i;
          oj = j;
        }
      }
    }
    std::printf("block_cosine: n=%zu max_offdiag=%.6f at (%zu,%zu) out=%s\n", m.n(), off_max,
                oi + 1, oj + 1, out_path.c_str());
  } else if (metric == "mlp_iou") {
    const SimilarityMatrix m = mlp_topk_iou(params, probe_batch(), fraction);
    write_similarity_csv(m, out_path, hex);
    std::printf("mlp_iou: n=%zu fraction=%g out=%s\n", m.n(), fraction, out_path.c_str());
  } else if (metric == "linearity") {
    const std::vector<LinearityResult> lin = linearity_probe(params, probe_batch());
    std::ofstream os(out_path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + out_path);
    os << "# metric=linearity_probe n=" << lin.size() << " checkpoint=" << hex << "\n";
    os << "layer,r2,cosine\n";
    char buf[64];
    for (size_t l = 0; l < lin.size(); ++l) {
      std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f", l + 1, lin[l].r2, lin[l].cosine);
      os << buf << "\n";
    }
    std::printf("linearity: layers=%zu out=%s\n", lin.size(), out_path.c_str());
  } else {
    throw ConfigError("unknown metric '" + metric +
                      "' (expected block_cosine|mlp_iou|linearity)");
  }
  return 0;
}

int cmd_gen_data(const std::string& task, const std::string& variant, int depth, int k, int n,
                 uint64_t seed, const std::string& out_path, bool kshot_text) {
  const Task t = task_from_string(task);
  const Variant v = variant_from_string(variant);
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty() && out_path != "-") {
    file.open(out_path, std::ios::trunc);
    if (!file) throw IoError("cannot open " + out_path);
    os = &file;
  }
  for (int i = 0; i < n; ++i) {
    const PrimitiveExample ex = gen_example(t, v, depth, seed + static_cast<uint64_t>(i));
    if (kshot_text) {
      std::vector<PrimitiveExample> supports;
      for (int j = 0; j < k; ++j) {
        supports.push_back(gen_example(
            t, v, depth, seed + 1000003ull * static_cast<uint64_t>(j + 1) +
                             static_cast<uint64_t>(i)));
      }
      *os << format_kshot(supports, ex) << ex.target << "\n\n";
    } else {
      *os << to_jsonl(ex) << "\n";
    }
  }
  if (os == &file && !file) throw IoError("failed while writing " + out_path);
  std::fprintf(stderr, "generated %d %s examples (seed=%llu)\n", n, task.c_str(),
               static_cast<unsigned long long>(seed));
  return 0;
}

int cmd_speedup(int layers, int block, double alpha, int64_t steps) {
  const double closed = compute_speedup(layers, block, alpha);
  std::printf("closed-form speedup: %.2f (ratio %.6f, L=%d b=%d alpha=%g k=%d)\n", closed,
              closed, layers, block, alpha, layers / block);
  GrowthOp op;
  op.kind = GrowthKind::midas;
  op.block_size = block;
  const StagePlan plan = make_stage_plan(layers, op, steps, alpha);
  const double simulated = static_cast<double>(layers) * static_cast<double>(steps) /
                           static_cast<double>(simulate_plan_cost(plan));
  std::printf("integer-plan speedup: %.2f (ratio %.6f, T=%lld)\n", simulated, simulated,
              static_cast<long long>(steps));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stacklab: stagewise-training laboratory for small decoder models"};
  app.require_subcommand(1);

  std::string config_path, out_flag;
  int64_t seed_flag = -1;
  CLI::App* pre = app.add_subcommand("pretrain", "run a staged pretraining schedule");
  pre->add_option("--config", config_path, "INI run config")->required();
  pre->add_option("--out", out_flag, "output directory (overrides the config)");
  pre->add_option("--seed", seed_flag, "initialization seed (overrides the config)");

  std::string ft_config, ft_out;
  CLI::App* ft = app.add_subcommand("finetune", "fine-tune-then-evaluate protocol");
  ft->add_option("--config", ft_config, "INI finetune config")->required();
  ft->add_option("--out", ft_out, "output directory (overrides the config)");

  std::string ev_ckpt, ev_task, ev_variant = "none", ev_emit;
  int ev_depth = 0, ev_k = 0, ev_n = 200;
  uint64_t ev_seed = 1;
  bool ev_calc = false;
  CLI::App* ev = app.add_subcommand("evaluate", "few-shot evaluation of a checkpoint");
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--task", ev_task, "copying|var_assign|psm|arithmetic")->required();
  ev->add_option("--variant", ev_variant, "none|random_words|real_words|basic|math|code");
  ev->add_option("--depth", ev_depth, "alias depth (var_assign)");
  ev->add_option("--k", ev_k, "shots");
  ev->add_option("--n", ev_n, "examples");
  ev->add_option("--seed", ev_seed);
  ev->add_flag("--calc", ev_calc, "PSM calculator scoring");
  ev->add_option("--emit", ev_emit, "write per-example emissions JSONL here");

  std::string an_ckpt, an_metric, an_corpus, an_out;
  int an_block = 1;
  double an_fraction = 0.01;
  CLI::App* an = app.add_subcommand("analyze", "layer similarity / linearity analyses");
  an->add_option("--checkpoint", an_ckpt)->required();
  an->add_option("--metric", an_metric, "block_cosine|mlp_iou|linearity")->required();
  an->add_option("--block-size", an_block, "layers per block (block_cosine)");
  an->add_option("--corpus", an_corpus, "corpus for the probe batch (mlp_iou, linearity)");
  an->add_option("--fraction", an_fraction, "top-unit fraction (mlp_iou)");
  an->add_option("--out", an_out, "output CSV")->required();

  std::string gd_task, gd_variant = "none", gd_out;
  int gd_depth = 0, gd_k = 0, gd_n = 10;
  uint64_t gd_seed = 1;
  bool gd_kshot = false;
  CLI::App* gd = app.add_subcommand("gen-data", "emit primitive-task examples as JSONL");
  gd->add_option("--task", gd_task)->required();
  gd->add_option("--variant", gd_variant);
  gd->add_option("--depth", gd_depth);
  gd->add_option("--k", gd_k, "shots for --kshot-text");
  gd->add_option("--n", gd_n);
  gd->add_option("--seed", gd_seed);
  gd->add_option("--out", gd_out, "output path ('-' for stdout)");
  gd->add_flag("--kshot-text", gd_kshot, "emit rendered k-shot prompts instead of JSONL");

  int sp_layers = 0, sp_block = 0;
  double sp_alpha = 1.0;
  int64_t sp_steps = 100000;
  CLI::App* sp = app.add_subcommand("speedup", "closed-form and integer-plan compute multiplier");
  sp->add_option("--layers", sp_layers)->required();
  sp->add_option("--block", sp_block)->required();
  sp->add_option("--alpha", sp_alpha)->required();
  sp->add_option("--steps", sp_steps, "total steps for the integer-plan simulation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) return cmd_pretrain(config_path, out_flag, seed_flag);
    if (ft->parsed()) return cmd_finetune(ft_config, ft_out);
    if (ev->parsed()) {
      return cmd_evaluate(ev_ckpt, ev_task, ev_variant, ev_depth, ev_k, ev_n, ev_seed, ev_calc,
                          ev_emit);
    }
    if (an->parsed()) {
      return cmd_analyze(an_ckpt, an_metric, an_block, an_corpus, an_fraction, an_out);
    }
    if (gd->parsed()) {
      return cmd_gen_data(gd_task, gd_variant, gd_depth, gd_k, gd_n, gd_seed, gd_out, gd_kshot);
    }
    if (sp->parsed()) return cmd_speedup(sp_layers, sp_block, sp_alpha, sp_steps);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

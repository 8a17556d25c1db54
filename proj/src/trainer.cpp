#include "stacklab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "stacklab/analysis.hpp"
#include "stacklab/checkpoint.hpp"
#include "stacklab/config.hpp"

namespace fs = std::filesystem;

namespace stacklab {

StagePlan TrainConfig::stage_plan() const {
  return make_stage_plan(model.n_layers, growth, total_steps, alpha);
}

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
  if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  if (val_batches < 1) throw ConfigError("train: val_batches must be >= 1");
  if (corpus_path.empty()) throw ConfigError("train: corpus path is required");
  if (out_dir.empty()) throw ConfigError("train: output directory is required");
  if (lr_kind == LrKind::cosine) {
    make_cosine_schedule(lr_peak, lr_floor, total_steps);
  } else {
    make_constant_schedule(lr_peak, total_steps);
  }
  stage_plan();  // throws on inconsistent growth/steps
}

void stage_transition(TrainState& state, const GrowthOp& op, bool reset_moments) {
  const ModelConfig old_config = state.params.config;
  const LayerMap map = layer_map_for(op, old_config.n_layers);
  state.params = grow(state.params, op);
  if (reset_moments) {
    const int64_t step = state.adam.step;
    state.adam = make_adam_state(state.params.store, state.adam.config);
    state.adam.step = step;
  } else {
    state.adam = remap_optimizer(state.adam, old_config, state.params.config, map);
  }
  state.stage += 1;
}

namespace {

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

double validation_loss(const TransformerParams& params, const std::vector<Batch>& batches) {
  double acc = 0.0;
  for (const Batch& b : batches) acc += lm_loss(params, b);
  return acc / static_cast<double>(batches.size());
}

void write_manifest(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open manifest for writing: " + path);
  os << j.dump(2) << "\n";
  if (!os) throw IoError("failed while writing manifest: " + path);
}

}  // namespace

PretrainResult pretrain(const TrainConfig& config) {
  config.validate();
  const StagePlan plan = config.stage_plan();
  fs::create_directories(config.out_dir);

  const Corpus corpus = load_corpus(config.corpus_path);
  const CorpusSplit split = split_validation(corpus);
  TokenStream stream(split.train, config.data_seed, config.model.seq_len, config.batch_size);
  const std::vector<Batch> val_batches = make_validation_batches(
      split.val, config.model.seq_len, config.batch_size, config.val_batches);

  ModelConfig stage_config = config.model;
  stage_config.n_layers = plan.depths[0];
  TrainState state;
  state.params = init_params(stage_config, config.init_seed);
  state.adam = make_adam_state(state.params.store, config.adam);

  const LrSchedule sched = config.lr_kind == LrKind::cosine
                               ? make_cosine_schedule(config.lr_peak, config.lr_floor,
                                                      config.total_steps)
                               : make_constant_schedule(config.lr_peak, config.total_steps);

  // Cumulative stage boundaries: stage s ends after boundary[s-1] steps.
  std::vector<int64_t> boundary(plan.stages());
  int64_t acc_steps = 0;
  for (size_t s = 0; s < plan.stages(); ++s) {
    acc_steps += plan.steps[s];
    boundary[s] = acc_steps;
  }

  PretrainResult result;
  result.plan = plan;
  result.metrics_path = join_path(config.out_dir, "metrics.csv");
  result.manifest_path = join_path(config.out_dir, "manifest.json");
  result.final_checkpoint = join_path(config.out_dir, "final.ckpt");
  result.optimizer_path = join_path(config.out_dir, "final.adam");

  const std::string config_text = dump_train_config(config);
  nlohmann::ordered_json manifest;
  manifest["run_name"] = config.run_name;
  manifest["status"] = "running";
  manifest["config"] = config_text;
  char hex[20];
  uint64_t chash = fnv1a64(config_text.data(), config_text.size());
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(chash));
  manifest["config_hash"] = hex;
  manifest["plan"] = {{"depths", plan.depths},
                      {"steps", plan.steps},
                      {"predicted_layer_steps", simulate_plan_cost(plan)}};
  manifest["paths"] = {{"metrics", result.metrics_path},
                       {"final_checkpoint", result.final_checkpoint},
                       {"optimizer", result.optimizer_path}};
  manifest["corpus"] = {{"path", config.corpus_path},
                        {"train_docs", split.train.size()},
                        {"val_docs", split.val.size()},
                        {"stream_tokens", stream.token_count()}};
  write_manifest(result.manifest_path, manifest);

  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot open metrics CSV: " + result.metrics_path);
  metrics << "step,stage,depth,tokens,lr,train_loss,val_loss";
  for (const EvalTaskSpec& t : config.eval_tasks) metrics << "," << t.name;
  metrics << "\n";

  const auto t_start = std::chrono::steady_clock::now();
  double run_loss_sum = 0.0;
  int64_t run_loss_n = 0;
  size_t stage_idx = 0;  // 0-based into plan
  std::vector<Tensor> grads;
  char buf[64];
  std::vector<nlohmann::ordered_json> growth_checks;

  for (int64_t t = 1; t <= config.total_steps; ++t) {
    const Batch batch = stream.next_batch();
    const float lr = lr_at(sched, t - 1);
    double loss = 0.0;
    try {
      loss = lm_loss_and_grads(state.params, batch, &grads);
      adam_step(state.params.store, grads, state.adam, lr);
    } catch (const NumericsError& e) {
      manifest["status"] = "aborted";
      manifest["abort_step"] = t;
      manifest["abort_reason"] = e.what();
      write_manifest(result.manifest_path, manifest);
      const std::string last = result.stage_checkpoints.empty()
                                   ? "none"
                                   : result.stage_checkpoints.back();
      throw Error("training aborted at step " + std::to_string(t) + ": " + e.what() +
                  "; last good checkpoint: " + last);
    }
    state.step = t;
    state.tokens += static_cast<int64_t>(config.batch_size) * config.model.seq_len;
    state.executed_layer_steps += state.params.config.n_layers;
    run_loss_sum += loss;
    run_loss_n += 1;

    if (t % config.eval_every == 0 || t == config.total_steps) {
      const double val_loss = validation_loss(state.params, val_batches);
      result.final_val_loss = val_loss;
      metrics << t << "," << state.stage << "," << state.params.config.n_layers << ","
              << state.tokens;
      std::snprintf(buf, sizeof(buf), ",%.8g,%.6f,%.6f", static_cast<double>(lr),
                    run_loss_sum / static_cast<double>(run_loss_n), val_loss);
      metrics << buf;
      for (const EvalTaskSpec& spec : config.eval_tasks) {
        const EvalResult er = evaluate_task(make_model_completer(state.params), spec);
        std::snprintf(buf, sizeof(buf), ",%.6f", er.accuracy);
        metrics << buf;
      }
      metrics << "\n";
      metrics.flush();
      run_loss_sum = 0.0;
      run_loss_n = 0;
    }

    if (t == boundary[stage_idx] && stage_idx + 1 < plan.stages()) {
      stage_transition(state, config.growth, config.reset_moments_on_growth);
      stage_idx += 1;
      const std::string ckpt =
          join_path(config.out_dir, "stage" + std::to_string(stage_idx + 1) + "_init.ckpt");
      save_checkpoint(state.params, ckpt);
      result.stage_checkpoints.push_back(ckpt);
      if (config.emit_similarity && (config.growth.kind == GrowthKind::midas ||
                                     config.growth.kind == GrowthKind::gradual)) {
        const SimilarityMatrix m =
            block_cosine_similarity(state.params, config.growth.block_size);
        const int blocks_before = plan.depths[stage_idx - 1] / config.growth.block_size;
        const int dup = config.growth.kind == GrowthKind::midas ? (blocks_before + 1) / 2
                                                                : blocks_before;
        growth_checks.push_back({{"stage", stage_idx + 1},
                                 {"duplicated_pair", {dup, dup + 1}},
                                 {"pair_cosine", m.at(static_cast<size_t>(dup - 1),
                                                      static_cast<size_t>(dup))}});
      }
    }
  }

  if (state.executed_layer_steps != simulate_plan_cost(plan)) {
    throw Error("cost accounting mismatch: executed " +
                std::to_string(state.executed_layer_steps) + " layer-steps, plan predicts " +
                std::to_string(simulate_plan_cost(plan)));
  }

  save_checkpoint(state.params, result.final_checkpoint);
  save_optimizer(state.adam, result.optimizer_path);
  result.executed_layer_steps = state.executed_layer_steps;
  result.epochs_completed = stream.epoch();

  if (config.emit_similarity) {
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(file_fnv1a(result.final_checkpoint)));
    const int sim_block = (config.growth.kind == GrowthKind::midas ||
                           config.growth.kind == GrowthKind::gradual)
                              ? config.growth.block_size
                              : 1;
    write_similarity_csv(block_cosine_similarity(state.params, sim_block),
                         join_path(config.out_dir, "similarity_block_cosine.csv"), hex);
    const Batch probe = make_validation_batches(split.val, config.model.seq_len, 16, 1)[0];
    write_similarity_csv(mlp_topk_iou(state.params, probe),
                         join_path(config.out_dir, "similarity_mlp_iou.csv"), hex);
    if (static_cast<int64_t>(probe.batch) * probe.seq >= 4 * config.model.d_model) {
      const std::vector<LinearityResult> lin = linearity_probe(state.params, probe);
      std::ofstream lcsv(join_path(config.out_dir, "linearity.csv"), std::ios::trunc);
      lcsv << "# metric=linearity_probe n=" << lin.size() << " checkpoint=" << hex << "\n";
      lcsv << "layer,r2,cosine\n";
      for (size_t l = 0; l < lin.size(); ++l) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f", l + 1, lin[l].r2, lin[l].cosine);
        lcsv << buf << "\n";
      }
    } else {
      std::cerr << "note: probe batch too small for the linearity fit; skipping linearity.csv\n";
    }
  }

  const auto t_end = std::chrono::steady_clock::now();
  manifest["status"] = "done";
  manifest["wall_clock_sec"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(t_end - t_start).count() / 1000.0;
  manifest["executed_layer_steps"] = state.executed_layer_steps;
  manifest["epochs_completed"] = result.epochs_completed;
  manifest["final_val_loss"] = result.final_val_loss;
  manifest["growth_checks"] = growth_checks;
  manifest["stage_checkpoints"] = result.stage_checkpoints;
  write_manifest(result.manifest_path, manifest);
  return result;
}

Batch build_finetune_batch(const std::vector<PrimitiveExample>& examples,
                           const ModelConfig& config) {
  if (examples.empty()) throw Error("finetune: empty dataset");
  std::vector<std::vector<int32_t>> rows;
  std::vector<size_t> prompt_lens;
  size_t max_len = 0;
  for (const PrimitiveExample& ex : examples) {
    std::vector<int32_t> row = encode_bytes(ex.prompt);
    prompt_lens.push_back(row.size());
    for (int32_t id : encode_bytes(ex.target)) row.push_back(id);
    row.push_back(kStopToken);  // teach the model to terminate the answer
    if (static_cast<int64_t>(row.size()) > config.seq_len) {
      throw Error("finetune: example of " + std::to_string(row.size()) +
                  " tokens exceeds context " + std::to_string(config.seq_len));
    }
    max_len = std::max(max_len, row.size());
    rows.push_back(std::move(row));
  }
  Batch b;
  b.batch = static_cast<int>(rows.size());
  b.seq = static_cast<int>(max_len - 1);
  const size_t n = rows.size() * static_cast<size_t>(b.seq);
  b.x.assign(n, kPadToken);
  b.y.assign(n, kPadToken);
  b.mask.assign(n, 0.0f);
  for (size_t r = 0; r < rows.size(); ++r) {
    const std::vector<int32_t>& row = rows[r];
    for (size_t j = 0; j + 1 < row.size(); ++j) {
      b.x[r * static_cast<size_t>(b.seq) + j] = row[j];
      b.y[r * static_cast<size_t>(b.seq) + j] = row[j + 1];
      if (j + 1 >= prompt_lens[r]) b.mask[r * static_cast<size_t>(b.seq) + j] = 1.0f;
    }
  }
  return b;
}

void finetune(TransformerParams& params, const std::vector<PrimitiveExample>& examples,
              int steps, float lr, const FinetuneHook& hook) {
  if (steps < 0) throw Error("finetune: negative step count");
  if (lr < 0.0f) throw Error("finetune: negative learning rate");
  const Batch batch = build_finetune_batch(examples, params.config);
  AdamState adam = make_adam_state(params.store);
  std::vector<Tensor> grads;
  for (int t = 1; t <= steps; ++t) {
    lm_loss_and_grads(params, batch, &grads);
    adam_step(params.store, grads, adam, lr);
    if (hook) hook(t, params);
  }
}

}  // namespace stacklab

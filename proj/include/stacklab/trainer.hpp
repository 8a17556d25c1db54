#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stacklab/eval.hpp"
#include "stacklab/model.hpp"
#include "stacklab/optim.hpp"
#include "stacklab/stacking.hpp"
#include "stacklab/stream.hpp"

namespace stacklab {

struct TrainConfig {
  ModelConfig model;  // final-depth architecture
  GrowthOp growth;
  double alpha = 1.0;       // PropSch exponent
  int64_t total_steps = 0;  // T, across all stages
  AdamConfig adam;
  bool reset_moments_on_growth = false;
  LrKind lr_kind = LrKind::cosine;
  float lr_peak = 0.01f;
  float lr_floor = 0.001f;
  std::string corpus_path;
  int batch_size = 0;
  uint64_t init_seed = 0;
  uint64_t data_seed = 0;
  std::string out_dir;
  std::string run_name = "run";
  int64_t eval_every = 0;  // metrics record interval; the final step always records
  int val_batches = 8;
  std::vector<EvalTaskSpec> eval_tasks;
  bool emit_similarity = true;  // end-of-run similarity matrices for staged runs

  StagePlan stage_plan() const;
  void validate() const;
};

struct TrainState {
  int stage = 1;     // 1-based
  int64_t step = 0;  // completed global steps
  TransformerParams params;
  AdamState adam;
  int64_t tokens = 0;
  int64_t executed_layer_steps = 0;
};

// Grows the model and remaps (or resets) the optimizer moments; step
// counters survive the transition.
void stage_transition(TrainState& state, const GrowthOp& op, bool reset_moments);

struct PretrainResult {
  std::string final_checkpoint;
  std::string optimizer_path;
  std::string metrics_path;
  std::string manifest_path;
  std::vector<std::string> stage_checkpoints;  // post-growth initializations
  StagePlan plan;
  int64_t executed_layer_steps = 0;
  double final_val_loss = 0.0;
  int64_t epochs_completed = 0;
};

// Algorithm: initialize at stage-1 depth, run the staged step plan over the
// cached token stream with one global LR schedule, grow at each stage
// boundary, record metrics every eval interval, and write stage + final
// checkpoints (with the optimizer sidecar).
PretrainResult pretrain(const TrainConfig& config);

// Full-batch fine-tuning on prompt/target examples; the loss is masked to
// target tokens (plus the trailing newline that terminates each target).
// `hook` runs after every step with the 1-based step index.
using FinetuneHook = std::function<void(int, const TransformerParams&)>;
void finetune(TransformerParams& params, const std::vector<PrimitiveExample>& examples,
              int steps, float lr, const FinetuneHook& hook = {});

// The packed training batch finetune() uses (exposed for tests).
Batch build_finetune_batch(const std::vector<PrimitiveExample>& examples,
                           const ModelConfig& config);

}  // namespace stacklab

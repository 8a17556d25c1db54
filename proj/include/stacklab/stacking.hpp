#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stacklab/model.hpp"
#include "stacklab/optim.hpp"

namespace stacklab {

enum class GrowthKind {
  baseline,     // single stage at full depth, no growth
  midas,        // duplicate the middle block in place
  gradual,      // duplicate the last block, appended at the top
  progressive,  // duplicate the entire stack
};

GrowthKind growth_kind_from_string(const std::string& s);
std::string growth_kind_name(GrowthKind k);

// block_size is the number of consecutive layers per block for midas and
// gradual growth; for progressive growth it is the stage-1 depth.
struct GrowthOp {
  GrowthKind kind = GrowthKind::baseline;
  int block_size = 1;
};

// Stagewise schedule: stage i (1-based) trains for steps[i-1] steps at depth
// depths[i-1]; depths are strictly increasing up to the final model depth.
struct StagePlan {
  std::vector<int> depths;
  std::vector<int64_t> steps;
  int64_t total_steps() const;
  size_t stages() const { return depths.size(); }
  void validate() const;
};

// Proportional step allocation: stage i of k gets T * i^alpha / sum_j j^alpha
// steps, rounded to integers by largest remainder (ties toward the larger
// stage index). Errors if any stage would round to zero steps.
std::vector<int64_t> propsch_steps(int64_t total_steps, int stages, double alpha);

// Closed-form compute multiplier of one full-depth run over the staged run:
//   speedup = (L * sum_j j^alpha) / (b * sum_i i^(alpha+1)),  k = L/b stages.
double compute_speedup(int layers, int block_size, double alpha);

// Layer-steps executed by an integer plan: sum_i depths[i] * steps[i].
int64_t simulate_plan_cost(const StagePlan& plan);

// Mapping from each output layer to the source layer it was copied from.
using LayerMap = std::vector<int>;

LayerMap midas_layer_map(int n_layers, int block_size);
LayerMap gradual_layer_map(int n_layers, int block_size);
LayerMap progressive_layer_map(int n_layers);

// Applies one growth step. New-model weights are byte-for-byte copies of
// their source layers; embeddings, final norm and head carry over.
TransformerParams grow(const TransformerParams& params, const GrowthOp& op);

// Remaps per-layer optimizer moments through the same layer map so that
// duplicated blocks inherit their source moments.
AdamState remap_optimizer(const AdamState& state, const ModelConfig& old_config,
                          const ModelConfig& new_config, const LayerMap& map);

LayerMap layer_map_for(const GrowthOp& op, int n_layers);

// Builds the full stage plan for growing to `final_layers` over `total_steps`
// with PropSch(alpha). baseline gives a single full-depth stage.
StagePlan make_stage_plan(int final_layers, const GrowthOp& op, int64_t total_steps,
                          double alpha);

}  // namespace stacklab

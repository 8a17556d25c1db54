#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stacklab/model.hpp"
#include "stacklab/primitives.hpp"

namespace stacklab {

// Thrown by completers when a prompt cannot fit the model context; the
// evaluator counts these as skips.
class PromptTooLong : public Error {
 public:
  explicit PromptTooLong(const std::string& msg) : Error(msg) {}
};

// prompt text -> model continuation text
using Completer = std::function<std::string(const std::string&)>;

struct EvalTaskSpec {
  std::string name;  // metrics column / display label
  Task task = Task::copying;
  Variant variant = Variant::none;
  int depth = 0;
  int k_shot = 0;
  int n_examples = 0;
  uint64_t seed = 0;
  bool calc_scoring = false;  // PSM calculator mode
};

struct EvalEmission {
  std::string task;
  uint64_t prompt_hash = 0;
  std::string output;
  std::string target;
  bool correct = false;
};

struct EvalResult {
  double accuracy = 0.0;  // matches / scored examples
  int n_scored = 0;
  int n_skipped = 0;
  std::vector<EvalEmission> emissions;
};

std::string trim_ws(const std::string& s);

// Renders a k-shot prompt per example (supports drawn seed-disjointly from
// the query, regenerated on prompt collision), queries the completer, and
// exact-matches after whitespace trimming (or calculator-scores PSM).
// Prompt-overflow skips are tolerated up to 1% of the dataset.
EvalResult evaluate_task(const Completer& completer, const EvalTaskSpec& spec);

// Calculator-mode scoring: compare only the expression before '=' of output
// and target, whitespace-insensitive; the numeric result is recomputed, not
// matched. The target must have the form "expr=result".
bool score_psm_calc(const std::string& model_output, const std::string& target_cot);

// Greedy decoding, 16-token budget, newline stop; throws PromptTooLong when
// prompt tokens + budget exceed the model context.
Completer make_model_completer(const TransformerParams& params);

void write_emissions(const std::vector<EvalEmission>& emissions, const std::string& path);

// Appendix-style fine-tune-then-evaluate protocol.
struct FinetuneProtocol {
  int n_seeds = 3;
  uint64_t base_seed = 9000;
  int examples_per_depth = 32;  // per depth, so the default mixture is 64
  std::vector<int> depths = {1, 2};
  Variant variant = Variant::code;
  float lr = 0.001f;
  int window_start = 200;
  int window_end = 300;
  int holdout_per_depth = 1000;
  uint64_t holdout_seed_offset = 1000000;

  void validate() const;
};

struct FinetuneDepthResult {
  int depth = 0;
  double mean_accuracy = 0.0;  // mean over seeds of the window-averaged accuracy
  double std_accuracy = 0.0;   // population std over seeds
  std::vector<double> per_seed;
};

struct FinetuneEvalResult {
  std::vector<FinetuneDepthResult> per_depth;
  // Accuracy on the 64 training examples at the window start, per seed.
  std::vector<double> train_acc_at_window_start;
};

// For each seed: build the 0-shot train mixture, fine-tune full-batch at
// constant lr, and evaluate the per-depth holdouts at every step in
// [window_start, window_end]; report window averages as mean +/- std.
FinetuneEvalResult run_finetune_eval(const TransformerParams& base,
                                     const FinetuneProtocol& protocol);

}  // namespace stacklab

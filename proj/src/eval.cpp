#include "stacklab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "stacklab/checkpoint.hpp"
#include "stacklab/trainer.hpp"

namespace stacklab {

std::string trim_ws(const std::string& s) {
  const char* ws = " \t\r\n\v\f";
  size_t a = s.find_first_not_of(ws);
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(ws);
  return s.substr(a, b - a + 1);
}

namespace {

std::string strip_all_ws(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c != ' ' && c != '\t' && c != '\r' && c != '\n' && c != '\v' && c != '\f') {
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace

bool score_psm_calc(const std::string& model_output, const std::string& target_cot) {
  size_t teq = target_cot.find('=');
  if (teq == std::string::npos || teq == 0) {
    throw Error("score_psm_calc: target '" + target_cot + "' is not of the form expr=result");
  }
  std::string want = strip_all_ws(target_cot.substr(0, teq));
  size_t oeq = model_output.find('=');
  std::string got = strip_all_ws(oeq == std::string::npos ? model_output
                                                          : model_output.substr(0, oeq));
  return !want.empty() && got == want;
}

EvalResult evaluate_task(const Completer& completer, const EvalTaskSpec& spec) {
  if (spec.n_examples < 1) throw ConfigError("evaluate_task: n_examples must be >= 1");
  if (spec.k_shot < 0) throw ConfigError("evaluate_task: k_shot must be >= 0");
  EvalResult res;
  int matches = 0;
  for (int i = 0; i < spec.n_examples; ++i) {
    PrimitiveExample query =
        gen_example(spec.task, spec.variant, spec.depth, spec.seed + static_cast<uint64_t>(i));
    std::vector<PrimitiveExample> supports;
    supports.reserve(static_cast<size_t>(spec.k_shot));
    for (int j = 0; j < spec.k_shot; ++j) {
      // Disjoint seed stream from queries; regenerate on prompt collision.
      uint64_t s = spec.seed + 1000003ull * static_cast<uint64_t>(j + 1) +
                   static_cast<uint64_t>(i);
      PrimitiveExample sup = gen_example(spec.task, spec.variant, spec.depth, s);
      while (sup.prompt == query.prompt) {
        s += 9973;
        sup = gen_example(spec.task, spec.variant, spec.depth, s);
      }
      supports.push_back(std::move(sup));
    }
    const std::string prompt = format_kshot(supports, query);
    std::string output;
    try {
      output = completer(prompt);
    } catch (const PromptTooLong&) {
      res.n_skipped += 1;
      continue;
    }
    bool correct = spec.calc_scoring ? score_psm_calc(output, query.target)
                                     : trim_ws(output) == trim_ws(query.target);
    if (correct) matches += 1;
    res.emissions.push_back(EvalEmission{task_name(spec.task),
                                         fnv1a64(prompt.data(), prompt.size()), output,
                                         query.target, correct});
  }
  if (res.n_skipped * 100 > spec.n_examples) {
    throw Error("evaluate_task: " + std::to_string(res.n_skipped) + " of " +
                std::to_string(spec.n_examples) + " prompts overflowed the context (>1%)");
  }
  res.n_scored = spec.n_examples - res.n_skipped;
  res.accuracy = res.n_scored > 0 ? static_cast<double>(matches) / res.n_scored : 0.0;
  return res;
}

Completer make_model_completer(const TransformerParams& params) {
  constexpr int kBudget = 16;
  return [&params](const std::string& prompt) {
    std::vector<int32_t> ids = encode_bytes(prompt);
    if (static_cast<int64_t>(ids.size()) + kBudget > params.config.seq_len) {
      throw PromptTooLong("prompt of " + std::to_string(ids.size()) + " tokens + " +
                          std::to_string(kBudget) + " budget exceeds context " +
                          std::to_string(params.config.seq_len));
    }
    return decode_bytes(generate_greedy(params, ids, kBudget, kStopToken));
  };
}

void write_emissions(const std::vector<EvalEmission>& emissions, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open emission log for writing: " + path);
  for (const EvalEmission& e : emissions) {
    nlohmann::ordered_json j;
    j["task"] = e.task;
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(e.prompt_hash));
    j["prompt_hash"] = hex;
    j["output"] = e.output;
    j["target"] = e.target;
    j["correct"] = e.correct;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("failed while writing emission log: " + path);
}

void FinetuneProtocol::validate() const {
  if (n_seeds < 1) throw ConfigError("finetune protocol: n_seeds must be >= 1");
  if (examples_per_depth < 1) throw ConfigError("finetune protocol: examples_per_depth >= 1");
  if (depths.empty()) throw ConfigError("finetune protocol: at least one depth");
  if (window_start < 1 || window_end < window_start) {
    throw ConfigError("finetune protocol: eval window [" + std::to_string(window_start) + "," +
                      std::to_string(window_end) + "] is empty");
  }
  if (holdout_per_depth < 1) throw ConfigError("finetune protocol: holdout_per_depth >= 1");
  if (!(lr > 0.0f)) throw ConfigError("finetune protocol: lr must be positive");
}

FinetuneEvalResult run_finetune_eval(const TransformerParams& base,
                                     const FinetuneProtocol& protocol) {
  protocol.validate();
  FinetuneEvalResult result;
  result.per_depth.resize(protocol.depths.size());
  for (size_t di = 0; di < protocol.depths.size(); ++di) {
    result.per_depth[di].depth = protocol.depths[di];
  }
  const int window_points = protocol.window_end - protocol.window_start + 1;

  for (int seed_idx = 0; seed_idx < protocol.n_seeds; ++seed_idx) {
    const uint64_t run_seed = protocol.base_seed + 1000ull * static_cast<uint64_t>(seed_idx);
    std::vector<PrimitiveExample> train_set;
    for (int depth : protocol.depths) {
      for (int i = 0; i < protocol.examples_per_depth; ++i) {
        train_set.push_back(gen_var_assign(
            run_seed + static_cast<uint64_t>(depth) * 10000 + static_cast<uint64_t>(i), depth,
            protocol.variant));
      }
    }

    TransformerParams model = base;  // fine-tune a copy per seed
    std::vector<double> window_acc(protocol.depths.size(), 0.0);
    double train_acc = 0.0;

    finetune(model, train_set, protocol.window_end, protocol.lr,
             [&](int step, const TransformerParams& m) {
               if (step < protocol.window_start || step > protocol.window_end) return;
               Completer completer = make_model_completer(m);
               for (size_t di = 0; di < protocol.depths.size(); ++di) {
                 EvalTaskSpec spec;
                 spec.name = "holdout_d" + std::to_string(protocol.depths[di]);
                 spec.task = Task::var_assign;
                 spec.variant = protocol.variant;
                 spec.depth = protocol.depths[di];
                 spec.k_shot = 0;
                 spec.n_examples = protocol.holdout_per_depth;
                 // One fixed holdout per depth, seed-disjoint from every
                 // training seed.
                 spec.seed = protocol.base_seed + protocol.holdout_seed_offset +
                             static_cast<uint64_t>(protocol.depths[di]) * 10000;
                 window_acc[di] += evaluate_task(completer, spec).accuracy;
               }
               if (step == protocol.window_start) {
                 Completer completer2 = make_model_completer(m);
                 int hit = 0;
                 for (const PrimitiveExample& ex : train_set) {
                   std::string out = completer2(ex.prompt);
                   if (trim_ws(out) == trim_ws(ex.target)) hit += 1;
                 }
                 train_acc = static_cast<double>(hit) / static_cast<double>(train_set.size());
               }
             });

    for (size_t di = 0; di < protocol.depths.size(); ++di) {
      result.per_depth[di].per_seed.push_back(window_acc[di] / window_points);
    }
    result.train_acc_at_window_start.push_back(train_acc);
  }

  for (FinetuneDepthResult& d : result.per_depth) {
    double mean = 0.0;
    for (double a : d.per_seed) mean += a;
    mean /= static_cast<double>(d.per_seed.size());
    double var = 0.0;
    for (double a : d.per_seed) var += (a - mean) * (a - mean);
    var /= static_cast<double>(d.per_seed.size());
    d.mean_accuracy = mean;
    d.std_accuracy = std::sqrt(var);
  }
  return result;
}

}  // namespace stacklab

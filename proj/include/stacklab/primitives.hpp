#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace stacklab {

enum class Task { copying, var_assign, psm, arithmetic };
enum class Variant { none, random_words, real_words, basic, math, code };

std::string task_name(Task t);
std::string variant_name(Variant v);
Task task_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

struct PrimitiveExample {
  Task task = Task::copying;
  Variant variant = Variant::none;
  int depth = 0;  // alias depth, var_assign only
  std::string prompt;
  std::string target;
  uint64_t seed = 0;
};

// The built-in pool of 3-letter words for the real-word copying variant.
const std::vector<std::string>& real_word_list();

PrimitiveExample gen_copying(uint64_t seed, Variant variant);
PrimitiveExample gen_var_assign(uint64_t seed, int depth, Variant variant);
PrimitiveExample gen_psm(uint64_t seed);
PrimitiveExample gen_arithmetic(uint64_t seed);

// Dispatcher; validates the task/variant/depth combination.
PrimitiveExample gen_example(Task task, Variant variant, int depth, uint64_t seed);

// Follows name -> name links to a numeric leaf. Assignments are (lhs, rhs)
// pairs where rhs is either a decimal literal or another name.
int resolve_var_chain(const std::vector<std::pair<std::string, std::string>>& assignments,
                      const std::string& query);

// Re-derives the target from the prompt text alone (no access to the
// generator's internals); used as the self-consistency oracle.
std::string oracle_solve(const PrimitiveExample& example);

// Support examples (with targets) and the bare query joined by exactly
// "\n\n". All examples must share task/variant/depth.
std::string format_kshot(const std::vector<PrimitiveExample>& supports,
                         const PrimitiveExample& query);

// One JSON record per example: {task, variant, depth, prompt, target, seed}.
std::string to_jsonl(const PrimitiveExample& example);

}  // namespace stacklab

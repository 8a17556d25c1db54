#include "stacklab/primitives.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stacklab/rng.hpp"
#include "stacklab/tensor.hpp"

namespace stacklab {

namespace {

// Stream-splits the task identity into the seed so that distinct generators
// never share a random sequence for the same numeric seed.
uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t s = seed ^ (salt * 0x9e3779b97f4a7c15ull);
  return splitmix64(s);
}

std::string letters_shuffled(Rng& rng, size_t take) {
  std::vector<char> pool;
  for (char c = 'a'; c <= 'z'; ++c) pool.push_back(c);
  rng.shuffle(pool);
  return std::string(pool.begin(), pool.begin() + static_cast<long>(take));
}

std::vector<int> values_shuffled(Rng& rng, int range, size_t take) {
  std::vector<int> pool(static_cast<size_t>(range));
  for (int i = 0; i < range; ++i) pool[static_cast<size_t>(i)] = i;
  rng.shuffle(pool);
  pool.resize(take);
  return pool;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::string line;
  std::istringstream is(s);
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  return true;
}

}  // namespace

std::string task_name(Task t) {
  switch (t) {
    case Task::copying: return "copying";
    case Task::var_assign: return "var_assign";
    case Task::psm: return "psm";
    case Task::arithmetic: return "arithmetic";
  }
  throw Error("invalid task");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::none: return "none";
    case Variant::random_words: return "random_words";
    case Variant::real_words: return "real_words";
    case Variant::basic: return "basic";
    case Variant::math: return "math";
    case Variant::code: return "code";
  }
  throw Error("invalid variant");
}

Task task_from_string(const std::string& s) {
  if (s == "copying") return Task::copying;
  if (s == "var_assign") return Task::var_assign;
  if (s == "psm") return Task::psm;
  if (s == "arithmetic") return Task::arithmetic;
  throw ConfigError("unknown task '" + s + "' (expected copying|var_assign|psm|arithmetic)");
}

Variant variant_from_string(const std::string& s) {
  if (s == "none") return Variant::none;
  if (s == "random_words") return Variant::random_words;
  if (s == "real_words") return Variant::real_words;
  if (s == "basic") return Variant::basic;
  if (s == "math") return Variant::math;
  if (s == "code") return Variant::code;
  throw ConfigError("unknown variant '" + s + "'");
}

const std::vector<std::string>& real_word_list() {
  static const std::vector<std::string> words = {
      "eat", "fit", "ban", "sea", "vet", "zit", "pea", "cat", "van", "tea",
      "bat", "bed", "bee", "bet", "bid", "big", "bit", "box", "boy", "bun",
      "bus", "buy", "can", "cap", "car", "cop", "cot", "cow", "cup", "cut",
      "day", "dig", "dog", "dot", "ear", "egg", "elf", "fan", "far", "fig",
      "fox", "fun", "gap", "gem", "gum", "hat", "hen", "hip", "hut", "ice"};
  return words;
}

PrimitiveExample gen_copying(uint64_t seed, Variant variant) {
  if (variant != Variant::random_words && variant != Variant::real_words) {
    throw ConfigError("copying requires variant random_words or real_words, got " +
                      variant_name(variant));
  }
  Rng rng(mix_seed(seed, variant == Variant::random_words ? 11 : 12));
  std::vector<std::string> words;
  if (variant == Variant::real_words) {
    std::vector<std::string> pool = real_word_list();
    rng.shuffle(pool);
    words.assign(pool.begin(), pool.begin() + 10);
  } else {
    std::set<std::string> seen;
    while (words.size() < 10) {
      std::string w;
      for (int i = 0; i < 3; ++i) w.push_back(static_cast<char>('a' + rng.next_below(26)));
      if (seen.insert(w).second) words.push_back(w);
    }
  }
  const int p = 1 + static_cast<int>(rng.next_below(5));  // 1-based start in [1,5]
  std::ostringstream os;
  os << "Fill in blank:\n";
  for (const std::string& w : words) os << w << " ";
  for (int i = p; i < p + 5; ++i) os << words[static_cast<size_t>(i - 1)] << " ";
  os << "___. ->";
  PrimitiveExample ex;
  ex.task = Task::copying;
  ex.variant = variant;
  ex.prompt = os.str();
  ex.target = words[static_cast<size_t>(p + 5 - 1)];
  ex.seed = seed;
  return ex;
}

PrimitiveExample gen_var_assign(uint64_t seed, int depth, Variant variant) {
  if (depth < 0 || depth > 2) {
    throw ConfigError("var_assign depth must be in {0,1,2}, got " + std::to_string(depth));
  }
  if (variant != Variant::basic && variant != Variant::math && variant != Variant::code) {
    throw ConfigError("var_assign requires variant basic, math or code, got " +
                      variant_name(variant));
  }
  Rng rng(mix_seed(seed, 20 + static_cast<uint64_t>(depth) * 3 +
                             (variant == Variant::basic  ? 0
                              : variant == Variant::math ? 1
                                                         : 2)));
  const size_t names_needed = 5 * (static_cast<size_t>(depth) + 1);
  std::string names = letters_shuffled(rng, names_needed);
  std::vector<int> values = values_shuffled(rng, 25, 5);

  // lines[t][j]: tier t, slot j. Tier 0 binds values; each later tier is a
  // random permutation onto the previous tier's names.
  std::vector<std::pair<std::string, std::string>> assigns;
  std::vector<int> resolved(5);
  for (int j = 0; j < 5; ++j) {
    assigns.emplace_back(std::string(1, names[static_cast<size_t>(j)]),
                         std::to_string(values[static_cast<size_t>(j)]));
    resolved[static_cast<size_t>(j)] = values[static_cast<size_t>(j)];
  }
  std::vector<int> prev_values = resolved;
  for (int t = 1; t <= depth; ++t) {
    std::vector<int> perm = {0, 1, 2, 3, 4};
    rng.shuffle(perm);
    std::vector<int> tier_values(5);
    for (int j = 0; j < 5; ++j) {
      const char lhs = names[static_cast<size_t>(5 * t + j)];
      const char rhs = names[static_cast<size_t>(5 * (t - 1) + perm[static_cast<size_t>(j)])];
      assigns.emplace_back(std::string(1, lhs), std::string(1, rhs));
      tier_values[static_cast<size_t>(j)] = prev_values[static_cast<size_t>(perm[static_cast<size_t>(j)])];
    }
    prev_values = tier_values;
  }
  const int pick = static_cast<int>(rng.next_below(5));
  const std::string query(1, names[static_cast<size_t>(5 * depth + pick)]);
  const int answer = prev_values[static_cast<size_t>(pick)];

  std::ostringstream lines;
  for (const auto& [lhs, rhs] : assigns) lines << lhs << "=" << rhs << "\n";
  std::ostringstream os;
  if (variant == Variant::basic) {
    os << "Fill in blank:\n" << lines.str() << query << "=___. ->";
  } else if (variant == Variant::math) {
    os << "The following is a set of simple mathematical equations.\n"
       << lines.str() << "What is the numerical value of " << query << "?\nAnswer:";
  } else {
    os << "The following is a very short Python program. Use the program to resolve the value "
          "of the variable in the question.\nProgram:\n"
       << lines.str() << "Question:\nWhat is the value of " << query << "?\nAnswer:\n";
  }
  PrimitiveExample ex;
  ex.task = Task::var_assign;
  ex.variant = variant;
  ex.depth = depth;
  ex.prompt = os.str();
  ex.target = std::to_string(answer);
  ex.seed = seed;
  return ex;
}

PrimitiveExample gen_psm(uint64_t seed) {
  Rng rng(mix_seed(seed, 30));
  std::string names = letters_shuffled(rng, 3);
  const int v[2] = {static_cast<int>(rng.next_below(10)), static_cast<int>(rng.next_below(10))};
  const char sign[2] = {rng.next_below(2) ? '-' : '+', rng.next_below(2) ? '-' : '+'};
  const int operand[2] = {static_cast<int>(rng.next_below(2)),
                          static_cast<int>(rng.next_below(2))};
  const int a = v[operand[0]], b = v[operand[1]];
  const int result = (sign[0] == '-' ? -a : a) + (sign[1] == '-' ? -b : b);
  std::ostringstream os;
  os << "Fill in blank:\n"
     << names[0] << "=" << v[0] << "\n"
     << names[1] << "=" << v[1] << "\n"
     << names[2] << "=" << sign[0] << names[operand[0]] << sign[1] << names[operand[1]] << "\n"
     << names[2] << "=___. ->";
  PrimitiveExample ex;
  ex.task = Task::psm;
  ex.prompt = os.str();
  ex.target = std::string(1, sign[0]) + std::to_string(a) + sign[1] + std::to_string(b) + "=" +
              std::to_string(result);
  ex.seed = seed;
  return ex;
}

PrimitiveExample gen_arithmetic(uint64_t seed) {
  Rng rng(mix_seed(seed, 40));
  const int a = 1 + static_cast<int>(rng.next_below(9));
  const int b = 1 + static_cast<int>(rng.next_below(9));
  const char s1 = rng.next_below(2) ? '-' : '+';
  const char s2 = rng.next_below(2) ? '-' : '+';
  const int result = (s1 == '-' ? -a : a) + (s2 == '-' ? -b : b);
  PrimitiveExample ex;
  ex.task = Task::arithmetic;
  ex.prompt = std::string(1, s1) + std::to_string(a) + s2 + std::to_string(b) + "=";
  ex.target = std::to_string(result);
  ex.seed = seed;
  return ex;
}

PrimitiveExample gen_example(Task task, Variant variant, int depth, uint64_t seed) {
  switch (task) {
    case Task::copying:
      if (depth != 0) throw ConfigError("copying has no depth parameter");
      return gen_copying(seed, variant);
    case Task::var_assign:
      return gen_var_assign(seed, depth, variant);
    case Task::psm:
      if (variant != Variant::none || depth != 0) {
        throw ConfigError("psm takes no variant or depth");
      }
      return gen_psm(seed);
    case Task::arithmetic:
      if (variant != Variant::none || depth != 0) {
        throw ConfigError("arithmetic takes no variant or depth");
      }
      return gen_arithmetic(seed);
  }
  throw Error("invalid task");
}

int resolve_var_chain(const std::vector<std::pair<std::string, std::string>>& assignments,
                      const std::string& query) {
  std::string cur = query;
  std::set<std::string> visited;
  for (;;) {
    if (!visited.insert(cur).second) {
      throw Error("variable chain has a cycle at '" + cur + "'");
    }
    const std::string* rhs = nullptr;
    for (const auto& [lhs, r] : assignments) {
      if (lhs == cur) {
        rhs = &r;
        break;
      }
    }
    if (!rhs) throw Error("variable '" + cur + "' is undefined");
    if (is_number(*rhs)) return std::stoi(*rhs);
    cur = *rhs;
  }
}

namespace {

std::string solve_copying(const PrimitiveExample& ex) {
  std::vector<std::string> lines = split_lines(ex.prompt);
  if (lines.size() != 2) throw Error("copying prompt: expected 2 lines");
  std::vector<std::string> toks = split_ws(lines[1]);
  // 10 sequence words, 5 subsequence words, "___." and "->"
  if (toks.size() != 17) throw Error("copying prompt: expected 17 tokens");
  std::vector<std::string> seq(toks.begin(), toks.begin() + 10);
  std::vector<std::string> sub(toks.begin() + 10, toks.begin() + 15);
  for (size_t q = 0; q + 5 < seq.size(); ++q) {
    bool match = true;
    for (size_t j = 0; j < 5; ++j) {
      if (seq[q + j] != sub[j]) {
        match = false;
        break;
      }
    }
    if (match) return seq[q + 5];
  }
  throw Error("copying prompt: subsequence not found");
}

std::vector<std::pair<std::string, std::string>> assignment_lines(
    const std::vector<std::string>& lines) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& l : lines) {
    size_t eq = l.find('=');
    if (eq == std::string::npos || eq == 0) continue;
    std::string rhs = l.substr(eq + 1);
    if (rhs.empty() || rhs.find(' ') != std::string::npos || rhs.find('_') != std::string::npos) {
      continue;
    }
    out.emplace_back(l.substr(0, eq), rhs);
  }
  return out;
}

std::string solve_var_assign(const PrimitiveExample& ex) {
  std::vector<std::string> lines = split_lines(ex.prompt);
  std::string query;
  if (ex.variant == Variant::basic) {
    const std::string& last = lines.back();
    size_t eq = last.find('=');
    if (eq == std::string::npos) throw Error("var_assign prompt: malformed query line");
    query = last.substr(0, eq);
    lines.pop_back();
  } else {
    const std::string marker = ex.variant == Variant::math ? "What is the numerical value of "
                                                           : "What is the value of ";
    for (const std::string& l : lines) {
      if (l.rfind(marker, 0) == 0) {
        query = l.substr(marker.size(), l.size() - marker.size() - 1);  // strip trailing '?'
        break;
      }
    }
    if (query.empty()) throw Error("var_assign prompt: question line not found");
  }
  return std::to_string(resolve_var_chain(assignment_lines(lines), query));
}

std::string solve_psm(const PrimitiveExample& ex) {
  std::vector<std::string> lines = split_lines(ex.prompt);
  if (lines.size() != 5) throw Error("psm prompt: expected 5 lines");
  auto assigns = assignment_lines({lines[1], lines[2]});
  if (assigns.size() != 2) throw Error("psm prompt: expected 2 assignments");
  size_t eq = lines[3].find('=');
  std::string expr = lines[3].substr(eq + 1);
  if (expr.size() != 4) throw Error("psm prompt: malformed expression '" + expr + "'");
  auto value_of = [&](char name) {
    return resolve_var_chain(assigns, std::string(1, name));
  };
  const char s1 = expr[0], s2 = expr[2];
  const int a = value_of(expr[1]), b = value_of(expr[3]);
  const int result = (s1 == '-' ? -a : a) + (s2 == '-' ? -b : b);
  return std::string(1, s1) + std::to_string(a) + s2 + std::to_string(b) + "=" +
         std::to_string(result);
}

std::string solve_arithmetic(const PrimitiveExample& ex) {
  const std::string& p = ex.prompt;
  if (p.size() < 5 || p.back() != '=') throw Error("arithmetic prompt: malformed '" + p + "'");
  size_t i = 1;
  while (i < p.size() && p[i] != '+' && p[i] != '-') ++i;
  const int a = std::stoi(p.substr(1, i - 1));
  const int b = std::stoi(p.substr(i + 1, p.size() - i - 2));
  const int result = (p[0] == '-' ? -a : a) + (p[i] == '-' ? -b : b);
  return std::to_string(result);
}

}  // namespace

std::string oracle_solve(const PrimitiveExample& example) {
  switch (example.task) {
    case Task::copying: return solve_copying(example);
    case Task::var_assign: return solve_var_assign(example);
    case Task::psm: return solve_psm(example);
    case Task::arithmetic: return solve_arithmetic(example);
  }
  throw Error("invalid task");
}

std::string format_kshot(const std::vector<PrimitiveExample>& supports,
                         const PrimitiveExample& query) {
  std::ostringstream os;
  for (const PrimitiveExample& s : supports) {
    if (s.task != query.task || s.variant != query.variant || s.depth != query.depth) {
      throw Error("format_kshot: support and query examples must share task/variant/depth");
    }
    os << s.prompt << s.target << "\n\n";
  }
  os << query.prompt;
  return os.str();
}

std::string to_jsonl(const PrimitiveExample& example) {
  nlohmann::ordered_json j;
  j["task"] = task_name(example.task);
  j["variant"] = variant_name(example.variant);
  j["depth"] = example.depth;
  j["prompt"] = example.prompt;
  j["target"] = example.target;
  j["seed"] = example.seed;
  return j.dump();
}

}  // namespace stacklab

#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stacklab/primitives.hpp"
#include "stacklab/tensor.hpp"
#include "support/test_util.hpp"

using namespace stacklab;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE_MESSAGE(static_cast<bool>(is), "missing file: " << path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> words_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

struct GoldenSpec {
  const char* file;
  Task task;
  Variant variant;
  int depth;
};

}  // namespace

TEST_SUITE_BEGIN("primitives");

TEST_CASE("task and variant names round-trip") {
  for (Task t : {Task::copying, Task::var_assign, Task::psm, Task::arithmetic}) {
    CHECK(task_from_string(task_name(t)) == t);
  }
  for (Variant v : {Variant::none, Variant::random_words, Variant::real_words, Variant::basic,
                    Variant::math, Variant::code}) {
    CHECK(variant_from_string(variant_name(v)) == v);
  }
  CHECK_THROWS_AS(task_from_string("juggling"), ConfigError);
  CHECK_THROWS_AS(variant_from_string("fancy"), ConfigError);
}

TEST_CASE("real word list") {
  const std::vector<std::string>& words = real_word_list();
  REQUIRE(words.size() == 50);
  const std::vector<std::string> head(words.begin(), words.begin() + 10);
  CHECK(head == std::vector<std::string>{"eat", "fit", "ban", "sea", "vet", "zit", "pea", "cat",
                                         "van", "tea"});
  std::set<std::string> uniq(words.begin(), words.end());
  CHECK(uniq.size() == 50);
  for (const std::string& w : words) CHECK(w.size() == 3);
}

TEST_CASE("copying structure") {
  for (Variant v : {Variant::random_words, Variant::real_words}) {
    for (uint64_t seed = 0; seed < 50; ++seed) {
      const PrimitiveExample ex = gen_copying(seed, v);
      CHECK(ex.prompt.substr(0, 15) == "Fill in blank:\n");
      CHECK(ex.prompt.substr(ex.prompt.size() - 7) == "___. ->");
      const std::vector<std::string> toks = words_of(ex.prompt.substr(15));
      REQUIRE(toks.size() == 17);  // 10 sequence + 5 subsequence + "___." + "->"
      const std::vector<std::string> seq(toks.begin(), toks.begin() + 10);
      CHECK(std::set<std::string>(seq.begin(), seq.end()).size() == 10);
      // The 5-word subsequence appears in the sequence; the target continues it.
      bool found = false;
      for (size_t p = 0; p + 5 < seq.size(); ++p) {
        if (std::vector<std::string>(seq.begin() + static_cast<long>(p),
                                     seq.begin() + static_cast<long>(p) + 5) ==
            std::vector<std::string>(toks.begin() + 10, toks.begin() + 15)) {
          CHECK(ex.target == seq[p + 5]);
          found = true;
        }
      }
      CHECK(found);
      for (const std::string& w : seq) {
        CHECK(w.size() == 3);
        if (v == Variant::real_words) {
          CHECK(std::count(real_word_list().begin(), real_word_list().end(), w) == 1);
        }
      }
    }
  }
}

TEST_CASE("var_assign structure") {
  for (int depth : {0, 1, 2}) {
    const PrimitiveExample ex = gen_var_assign(33, depth, Variant::basic);
    CHECK(ex.depth == depth);
    std::vector<std::string> lines;
    std::istringstream is(ex.prompt);
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    // header + 5*(depth+1) assignments + query line
    REQUIRE(lines.size() == 2 + 5 * static_cast<size_t>(depth + 1));
    std::set<std::string> names;
    for (size_t i = 1; i + 1 < lines.size(); ++i) {
      REQUIRE(lines[i].size() >= 3);
      CHECK(lines[i][1] == '=');
      names.insert(lines[i].substr(0, 1));
      if (i <= 5) {
        const int v = std::atoi(lines[i].c_str() + 2);
        CHECK(v >= 0);
        CHECK(v < 25);
      } else {
        CHECK(lines[i].size() == 3);  // single-letter alias
      }
    }
    CHECK(names.size() == 5 * static_cast<size_t>(depth + 1));
    // The queried name comes from the last tier.
    const std::string query = lines.back().substr(0, 1);
    bool in_last_tier = false;
    for (size_t i = lines.size() - 6; i + 1 < lines.size(); ++i) {
      if (lines[i].substr(0, 1) == query) in_last_tier = true;
    }
    CHECK(in_last_tier);
  }
  CHECK_THROWS_AS(gen_var_assign(1, 3, Variant::basic), ConfigError);
  CHECK_THROWS_AS(gen_var_assign(1, -1, Variant::basic), ConfigError);
  CHECK_THROWS_AS(gen_var_assign(1, 0, Variant::none), ConfigError);
}

TEST_CASE("psm and arithmetic structure") {
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const PrimitiveExample psm = gen_psm(seed);
    // target "s1 a s2 b = r" recomputes
    int a = 0, b = 0, r = 0;
    char s1 = 0, s2 = 0;
    REQUIRE(std::sscanf(psm.target.c_str(), "%c%d%c%d=%d", &s1, &a, &s2, &b, &r) == 5);
    CHECK((s1 == '+' || s1 == '-'));
    CHECK(r == (s1 == '-' ? -a : a) + (s2 == '-' ? -b : b));
    CHECK(a >= 0);
    CHECK(a <= 9);

    const PrimitiveExample ar = gen_arithmetic(seed);
    REQUIRE(std::sscanf(ar.prompt.c_str(), "%c%d%c%d=", &s1, &a, &s2, &b) == 4);
    CHECK(a >= 1);
    CHECK(a <= 9);
    CHECK(b >= 1);
    CHECK(b <= 9);
    CHECK(std::atoi(ar.target.c_str()) == (s1 == '-' ? -a : a) + (s2 == '-' ? -b : b));
  }
}

TEST_CASE("generators are deterministic in the seed") {
  const PrimitiveExample a = gen_example(Task::var_assign, Variant::code, 2, 77);
  const PrimitiveExample b = gen_example(Task::var_assign, Variant::code, 2, 77);
  CHECK(a.prompt == b.prompt);
  CHECK(a.target == b.target);
  const PrimitiveExample c = gen_example(Task::var_assign, Variant::code, 2, 78);
  CHECK(a.prompt != c.prompt);
}

TEST_CASE("gen_example validates the task/variant/depth combination") {
  CHECK_THROWS_AS(gen_example(Task::copying, Variant::none, 0, 1), ConfigError);
  CHECK_THROWS_AS(gen_example(Task::copying, Variant::random_words, 1, 1), ConfigError);
  CHECK_THROWS_AS(gen_example(Task::psm, Variant::basic, 0, 1), ConfigError);
  CHECK_THROWS_AS(gen_example(Task::psm, Variant::none, 1, 1), ConfigError);
  CHECK_THROWS_AS(gen_example(Task::arithmetic, Variant::code, 0, 1), ConfigError);
  CHECK_NOTHROW(gen_example(Task::arithmetic, Variant::none, 0, 1));
}

TEST_CASE("oracle agrees with every generator") {
  struct Combo {
    Task task;
    Variant variant;
    int depth;
  };
  const std::vector<Combo> combos = {
      {Task::copying, Variant::random_words, 0}, {Task::copying, Variant::real_words, 0},
      {Task::var_assign, Variant::basic, 0},     {Task::var_assign, Variant::basic, 1},
      {Task::var_assign, Variant::basic, 2},     {Task::var_assign, Variant::math, 0},
      {Task::var_assign, Variant::math, 1},      {Task::var_assign, Variant::math, 2},
      {Task::var_assign, Variant::code, 0},      {Task::var_assign, Variant::code, 1},
      {Task::var_assign, Variant::code, 2},      {Task::psm, Variant::none, 0},
      {Task::arithmetic, Variant::none, 0},
  };
  for (const Combo& c : combos) {
    for (uint64_t seed = 0; seed < 600; ++seed) {
      const PrimitiveExample ex = gen_example(c.task, c.variant, c.depth, seed);
      CHECK(oracle_solve(ex) == ex.target);
    }
  }
}

TEST_CASE("resolve_var_chain") {
  const std::vector<std::pair<std::string, std::string>> assigns = {
      {"a", "5"}, {"b", "a"}, {"c", "b"}};
  CHECK(resolve_var_chain(assigns, "a") == 5);
  CHECK(resolve_var_chain(assigns, "c") == 5);
  CHECK_THROWS_AS(resolve_var_chain(assigns, "z"), Error);
  CHECK_THROWS_AS(resolve_var_chain({{"a", "b"}, {"b", "a"}}, "a"), Error);
}

TEST_CASE("format_kshot joins supports and the bare query") {
  PrimitiveExample s1, s2, q;
  s1.prompt = "P1 ->";
  s1.target = "T1";
  s2.prompt = "P2 ->";
  s2.target = "T2";
  q.prompt = "Q ->";
  q.target = "ignored";
  CHECK(format_kshot({s1, s2}, q) == "P1 ->T1\n\nP2 ->T2\n\nQ ->");
  CHECK(format_kshot({}, q) == "Q ->");
  PrimitiveExample other = s1;
  other.task = Task::psm;
  CHECK_THROWS_AS(format_kshot({other}, q), Error);
  other = s1;
  other.depth = 2;
  CHECK_THROWS_AS(format_kshot({other}, q), Error);
}

TEST_CASE("jsonl rendering") {
  PrimitiveExample ex;
  ex.task = Task::arithmetic;
  ex.prompt = "-4+9=";
  ex.target = "5";
  ex.seed = 7;
  CHECK(to_jsonl(ex) ==
        R"({"task":"arithmetic","variant":"none","depth":0,"prompt":"-4+9=","target":"5","seed":7})");
}

TEST_CASE("rendered 5-shot prompts match the golden files") {
  const std::vector<GoldenSpec> specs = {
      {"copying_random_words", Task::copying, Variant::random_words, 0},
      {"copying_real_words", Task::copying, Variant::real_words, 0},
      {"var_assign_basic_d1", Task::var_assign, Variant::basic, 1},
      {"var_assign_math_d1", Task::var_assign, Variant::math, 1},
      {"var_assign_code_d1", Task::var_assign, Variant::code, 1},
      {"psm", Task::psm, Variant::none, 0},
      {"arithmetic", Task::arithmetic, Variant::none, 0},
  };
  for (const GoldenSpec& g : specs) {
    INFO("golden file: " << g.file);
    std::vector<PrimitiveExample> supports;
    for (uint64_t s = 101; s <= 105; ++s) {
      supports.push_back(gen_example(g.task, g.variant, g.depth, s));
    }
    const PrimitiveExample query = gen_example(g.task, g.variant, g.depth, 100);
    const std::string golden =
        read_file(testutil::source_dir() + "/tests/golden/" + g.file + ".txt");
    CHECK(format_kshot(supports, query) == golden);
  }
}

TEST_SUITE_END();

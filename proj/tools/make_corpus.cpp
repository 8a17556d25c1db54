#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "stacklab/corpus_gen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"stacklab-make-corpus: deterministic demo corpus generator"};
  std::string out;
  uint64_t seed = 20260101;
  size_t bytes = 5'000'000;
  app.add_option("--out", out, "output text file")->required();
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--bytes", bytes, "minimum corpus size in bytes");
  CLI11_PARSE(app, argc, argv);
  try {
    stacklab::write_demo_corpus(out, seed, bytes);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::printf("wrote %s (seed=%llu, >=%zu bytes)\n", out.c_str(),
              static_cast<unsigned long long>(seed), bytes);
  return 0;
}

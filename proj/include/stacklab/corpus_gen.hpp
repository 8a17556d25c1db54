#pragma once

#include <cstdint>
#include <string>

namespace stacklab {

// Deterministic English-like filler corpus: template-grammar sentences over
// embedded word lists with a skewed (Zipf-ish) word distribution, grouped
// into paragraph documents separated by blank lines. About a quarter of the
// sentences mention numerals so a byte-level model also sees digits.
std::string generate_demo_corpus(uint64_t seed, size_t min_bytes);

void write_demo_corpus(const std::string& path, uint64_t seed, size_t min_bytes);

}  // namespace stacklab

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stacklab {

// Byte-level tokenizer: ids 0..255 are raw bytes, plus two specials. The
// newline byte (id 10) doubles as the generation stop token.
constexpr int32_t kPadToken = 256;
constexpr int32_t kSepToken = 257;  // document separator in packed streams
constexpr int32_t kByteVocab = 258;
constexpr int32_t kStopToken = 10;  // '\n'

std::vector<int32_t> encode_bytes(const std::string& text);

// Ids 0..255 map back to bytes; PAD and SEP produce nothing.
std::string decode_bytes(const std::vector<int32_t>& ids);

}  // namespace stacklab

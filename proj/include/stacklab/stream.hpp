#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stacklab/model.hpp"

namespace stacklab {

// A corpus is a UTF-8/byte text file whose documents are separated by blank
// lines.
struct Corpus {
  std::vector<std::string> docs;
};

Corpus load_corpus(const std::string& path);
Corpus corpus_from_text(const std::string& text);

// Deterministic, seed-independent split: every 50th document is held out
// for validation (2%), the rest train.
struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
};
CorpusSplit split_validation(const Corpus& corpus);

// Cached token stream: documents are shuffled once by the data seed, byte
// tokenized, joined with the SEP token and packed into rows of seq_len
// tokens (with a one-token lookahead for the shifted targets). The cursor
// is a plain row index, so any position is replayable.
class TokenStream {
 public:
  TokenStream(const std::vector<std::string>& docs, uint64_t seed, int seq_len, int batch_size);

  Batch next_batch();
  // Rows available before the stream wraps around.
  int64_t rows_per_epoch() const { return rows_per_epoch_; }
  int64_t cursor() const { return cursor_; }
  void seek(int64_t row_cursor) { cursor_ = row_cursor; }
  int64_t epoch() const { return cursor_ / rows_per_epoch_; }
  int64_t token_count() const { return static_cast<int64_t>(tokens_.size()); }

 private:
  std::vector<int32_t> tokens_;
  int seq_len_;
  int batch_size_;
  int64_t rows_per_epoch_ = 0;
  int64_t cursor_ = 0;
};

// Frozen validation batches: the first `n_batches` rows of a seed-0 stream
// over the validation documents.
std::vector<Batch> make_validation_batches(const std::vector<std::string>& val_docs, int seq_len,
                                           int batch_size, int n_batches);

}  // namespace stacklab

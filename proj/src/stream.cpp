#include "stacklab/stream.hpp"

#include <fstream>
#include <sstream>

#include "stacklab/rng.hpp"

namespace stacklab {

Corpus corpus_from_text(const std::string& text) {
  Corpus c;
  std::string doc;
  size_t i = 0;
  const size_t n = text.size();
  auto flush = [&] {
    while (!doc.empty() && (doc.back() == '\n' || doc.back() == '\r')) doc.pop_back();
    if (!doc.empty()) c.docs.push_back(doc);
    doc.clear();
  };
  while (i < n) {
    size_t end = text.find('\n', i);
    if (end == std::string::npos) end = n;
    std::string_view line(text.data() + i, end - i);
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) {
      flush();
    } else {
      doc.append(line);
      doc.push_back('\n');
    }
    i = end + 1;
  }
  flush();
  if (c.docs.empty()) throw Error("corpus contains no documents");
  return c;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open corpus: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  if (ss.str().empty()) throw Error("corpus is empty: " + path);
  return corpus_from_text(ss.str());
}

CorpusSplit split_validation(const Corpus& corpus) {
  CorpusSplit split;
  for (size_t i = 0; i < corpus.docs.size(); ++i) {
    if (i % 50 == 49) {
      split.val.push_back(corpus.docs[i]);
    } else {
      split.train.push_back(corpus.docs[i]);
    }
  }
  if (split.train.empty()) throw Error("corpus has no training documents");
  return split;
}

TokenStream::TokenStream(const std::vector<std::string>& docs, uint64_t seed, int seq_len,
                         int batch_size)
    : seq_len_(seq_len), batch_size_(batch_size) {
  if (docs.empty()) throw Error("token stream: no documents");
  if (seq_len < 1 || batch_size < 1) throw Error("token stream: seq_len and batch must be >= 1");
  std::vector<size_t> order(docs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  size_t bytes = 0;
  for (const std::string& d : docs) bytes += d.size() + 1;
  tokens_.reserve(bytes);
  for (size_t idx : order) {
    for (unsigned char c : docs[idx]) tokens_.push_back(static_cast<int32_t>(c));
    tokens_.push_back(kSepToken);
  }
  // Each row consumes seq_len tokens and needs one lookahead token for the
  // shifted target.
  rows_per_epoch_ = (static_cast<int64_t>(tokens_.size()) - 1) / seq_len_;
  if (rows_per_epoch_ < 1) {
    throw Error("token stream: corpus too small for even one row of " +
                std::to_string(seq_len_) + " tokens");
  }
}

Batch TokenStream::next_batch() {
  Batch b;
  b.batch = batch_size_;
  b.seq = seq_len_;
  const size_t n = static_cast<size_t>(batch_size_) * static_cast<size_t>(seq_len_);
  b.x.resize(n);
  b.y.resize(n);
  b.mask.assign(n, 1.0f);
  for (int r = 0; r < batch_size_; ++r) {
    const int64_t row = (cursor_ + r) % rows_per_epoch_;
    const int64_t base = row * seq_len_;
    for (int t = 0; t < seq_len_; ++t) {
      b.x[static_cast<size_t>(r) * seq_len_ + t] = tokens_[static_cast<size_t>(base + t)];
      b.y[static_cast<size_t>(r) * seq_len_ + t] = tokens_[static_cast<size_t>(base + t + 1)];
    }
  }
  cursor_ += batch_size_;
  return b;
}

std::vector<Batch> make_validation_batches(const std::vector<std::string>& val_docs, int seq_len,
                                           int batch_size, int n_batches) {
  if (val_docs.empty()) throw Error("validation split is empty");
  TokenStream stream(val_docs, /*seed=*/0, seq_len, batch_size);
  std::vector<Batch> out;
  out.reserve(static_cast<size_t>(n_batches));
  for (int i = 0; i < n_batches; ++i) out.push_back(stream.next_batch());
  return out;
}

}  // namespace stacklab

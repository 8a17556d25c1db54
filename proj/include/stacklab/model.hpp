#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stacklab/graph.hpp"
#include "stacklab/param_store.hpp"
#include "stacklab/tokenizer.hpp"

namespace stacklab {

struct ModelConfig {
  int n_layers = 0;
  int d_model = 0;
  int n_heads = 0;
  int d_ff = 0;
  int vocab_size = kByteVocab;
  int seq_len = 0;
  bool looped = false;  // one shared block applied n_layers times

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Decoder-only pre-LN transformer. Parameter names (store order):
//   embed.tok [V,D], embed.pos [S,D],
//   layerNN.attn_norm.{gain,bias}, layerNN.attn.{wq,wk,wv,wo},
//   layerNN.mlp_norm.{gain,bias}, layerNN.mlp.{w1,w2}   for each layer,
//   final_norm.{gain,bias}, head.w [D,V].
// Looped models store a single "shared." block instead of layerNN blocks.
struct TransformerParams {
  ModelConfig config;
  ParamStore store;
};

std::string layer_prefix(const ModelConfig& config, int layer);

TransformerParams init_params(const ModelConfig& config, uint64_t seed);

// Token batch: x/y are [batch, seq] ids flattened row-major, mask weights
// the loss per position (same layout).
struct Batch {
  int batch = 0;
  int seq = 0;
  std::vector<int32_t> x;
  std::vector<int32_t> y;
  std::vector<float> mask;

  void validate(const ModelConfig& config) const;
};

// Builds the training graph for one batch over bound parameter nodes and
// returns the scalar loss node. `ids` must align with params.store order.
NodeId lm_loss_graph(const TransformerParams& params, Graph& g, const std::vector<NodeId>& ids,
                     const Batch& batch);

// Forward-only mean masked cross-entropy for a batch.
double lm_loss(const TransformerParams& params, const Batch& batch);

// Loss and parameter gradients (store order) for one batch.
double lm_loss_and_grads(const TransformerParams& params, const Batch& batch,
                         std::vector<Tensor>* grads);

// Full-sequence logits [batch*seq, V] from the training-path forward.
Tensor lm_logits(const TransformerParams& params, const Batch& batch);

// Incremental decoding state with per-layer KV caches. Feed tokens one at a
// time; logits over the vocabulary come back for the latest position.
class InferenceSession {
 public:
  InferenceSession(const TransformerParams& params);
  std::vector<float> feed(int32_t token);
  int position() const { return pos_; }

 private:
  const TransformerParams& params_;
  std::vector<std::vector<float>> k_cache_;  // per layer, [seq, d_model]
  std::vector<std::vector<float>> v_cache_;
  int pos_ = 0;
};

// Greedy decoding driven by an arbitrary next-token distribution; argmax
// ties break toward the lower token id. Decoding halts when `stop_token`
// is produced (not included in the result) or after max_new tokens.
using LogitsFn = std::function<std::vector<float>(const std::vector<int32_t>&)>;
std::vector<int32_t> greedy_decode(const LogitsFn& next_logits, const std::vector<int32_t>& prompt,
                                   int max_new, int32_t stop_token);

// Greedy generation with the KV-cache path. prompt.size() + max_new must
// not exceed config.seq_len.
std::vector<int32_t> generate_greedy(const TransformerParams& params,
                                     const std::vector<int32_t>& prompt, int max_new,
                                     int32_t stop_token = kStopToken);

// No-grad batched forward that records per-layer intermediates for the
// similarity analyses: the residual stream entering each layer (plus the
// final stream) and the mean absolute post-activation of each MLP unit.
struct ProbeRecord {
  std::vector<Tensor> residuals;       // n_layers+1 tensors of [batch*seq, d_model]
  std::vector<Tensor> mlp_activation;  // n_layers tensors of [d_ff] (mean |gelu|)
  Tensor logits;                       // [batch*seq, vocab]
};
ProbeRecord probe_forward(const TransformerParams& params, const Batch& batch);

}  // namespace stacklab

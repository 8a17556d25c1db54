#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "stacklab/tensor.hpp"

namespace stacklab {

using NodeId = int32_t;

// Reverse-mode autodiff over a flat tape. Nodes are created in topological
// order, so backward() is a single reverse sweep. Every op validates shapes
// on entry and checks its outputs (and the gradients it writes) for
// non-finite values, raising NumericsError that names the op and phase.
class Graph {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false);

  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, float c);
  NodeId matmul(NodeId a, NodeId b);
  // y[r, :] = x[r, :] * gain + bias  (gain, bias are rank-1 [D])
  NodeId affine(NodeId x, NodeId gain, NodeId bias);
  // Normalizes the last dimension to zero mean / unit variance, no affine.
  NodeId layer_norm(NodeId x, float eps = 1e-5f);
  NodeId gelu(NodeId x);
  NodeId softmax(NodeId x);  // row-wise over the last dimension
  // Gathers rows of `table` ([V, D]); ids are data, not graph nodes.
  NodeId embedding(NodeId table, const std::vector<int32_t>& ids);
  // Fused multi-head causal self-attention. q/k/v are [batch*seq, d_model];
  // output has the same shape. d_model must be divisible by heads.
  NodeId causal_attention(NodeId q, NodeId k, NodeId v, int batch, int seq, int heads);
  // Masked mean token-level negative log-likelihood over rows of `logits`
  // ([N, V]). mask entries are 0/1 weights; at least one must be nonzero.
  NodeId cross_entropy(NodeId logits, const std::vector<int32_t>& targets,
                       const std::vector<float>& mask);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  // Seeds d(loss) = 1 and sweeps the tape in reverse creation order.
  // `loss` must be scalar.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return node(id).value; }
  // Zero-shaped tensor if no gradient ever reached the node.
  const Tensor& grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily
    const char* op;
    bool requires_grad;
    std::function<void()> back;
  };

  NodeId push(Tensor value, const char* op, bool requires_grad, std::function<void()> back);
  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  Tensor& grad_buf(NodeId id);
  void check_value(NodeId id);
  void check_grad(NodeId id, const char* op);

  std::vector<Node> nodes_;
};

class ParamStore;

// Builds a graph, binds every parameter as a requires-grad leaf (in store
// order), evaluates `build` to a scalar loss, and returns the gradients in
// store order. Parameters the loss never touches get zero gradients.
using LossBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;
std::vector<Tensor> gradient(const ParamStore& params, const LossBuilder& build,
                             double* loss_out = nullptr);

}  // namespace stacklab

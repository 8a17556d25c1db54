#include "stacklab/graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "stacklab/param_store.hpp"

namespace stacklab {

namespace {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

MatMap map2d(Tensor& t, int64_t rows, int64_t cols) {
  return MatMap(t.data(), rows, cols);
}
ConstMatMap map2d(const Tensor& t, int64_t rows, int64_t cols) {
  return ConstMatMap(t.data(), rows, cols);
}

bool finite_range(const float* p, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got shape " +
                     shape_str(t.shape()));
  }
}

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

}  // namespace

Graph::Node& Graph::node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
const Graph::Node& Graph::node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

NodeId Graph::push(Tensor value, const char* op, bool requires_grad,
                   std::function<void()> back) {
  nodes_.push_back(Node{std::move(value), Tensor(), op, requires_grad, std::move(back)});
  NodeId id = static_cast<NodeId>(nodes_.size() - 1);
  check_value(id);
  return id;
}

void Graph::check_value(NodeId id) {
  const Node& n = node(id);
  if (!finite_range(n.value.data(), n.value.numel())) {
    throw NumericsError(std::string("non-finite value in forward pass of op '") + n.op + "'");
  }
}

void Graph::check_grad(NodeId id, const char* op) {
  const Node& n = node(id);
  if (n.grad.numel() > 0 && !finite_range(n.grad.data(), n.grad.numel())) {
    throw NumericsError(std::string("non-finite gradient in backward pass of op '") + op + "'");
  }
}

Tensor& Graph::grad_buf(NodeId id) {
  Node& n = node(id);
  if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

const Tensor& Graph::grad(NodeId id) const {
  static const Tensor empty;
  const Node& n = node(id);
  return n.grad.numel() > 0 ? n.grad : empty;
}

NodeId Graph::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), "leaf", requires_grad, nullptr);
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) {
    throw ShapeError("add: shape mismatch " + shape_str(va.shape()) + " vs " +
                     shape_str(vb.shape()));
  }
  Tensor out(va.shape());
  const int64_t n = va.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = va.data()[i] + vb.data()[i];
  bool rg = requires_grad(a) || requires_grad(b);
  NodeId out_id = push(std::move(out), "add", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, a, b, out_id] {
      const Tensor& g = node(out_id).grad;
      for (NodeId p : {a, b}) {
        if (!requires_grad(p)) continue;
        Tensor& gp = grad_buf(p);
        for (int64_t i = 0; i < g.numel(); ++i) gp.data()[i] += g.data()[i];
        check_grad(p, "add");
      }
    };
  }
  return out_id;
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) {
    throw ShapeError("mul: shape mismatch " + shape_str(va.shape()) + " vs " +
                     shape_str(vb.shape()));
  }
  Tensor out(va.shape());
  const int64_t n = va.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = va.data()[i] * vb.data()[i];
  bool rg = requires_grad(a) || requires_grad(b);
  NodeId out_id = push(std::move(out), "mul", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, a, b, out_id] {
      const Tensor& g = node(out_id).grad;
      if (requires_grad(a)) {
        Tensor& ga = grad_buf(a);
        const Tensor& vb2 = value(b);
        for (int64_t i = 0; i < g.numel(); ++i) ga.data()[i] += g.data()[i] * vb2.data()[i];
        check_grad(a, "mul");
      }
      if (requires_grad(b)) {
        Tensor& gb = grad_buf(b);
        const Tensor& va2 = value(a);
        for (int64_t i = 0; i < g.numel(); ++i) gb.data()[i] += g.data()[i] * va2.data()[i];
        check_grad(b, "mul");
      }
    };
  }
  return out_id;
}

NodeId Graph::scale(NodeId a, float c) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  for (int64_t i = 0; i < va.numel(); ++i) out.data()[i] = va.data()[i] * c;
  bool rg = requires_grad(a);
  NodeId out_id = push(std::move(out), "scale", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, a, c, out_id] {
      const Tensor& g = node(out_id).grad;
      Tensor& ga = grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga.data()[i] += g.data()[i] * c;
      check_grad(a, "scale");
    };
  }
  return out_id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_rank2(va, "matmul");
  require_rank2(vb, "matmul");
  if (va.dim(1) != vb.dim(0)) {
    throw ShapeError("matmul: inner dimension mismatch " + shape_str(va.shape()) + " vs " +
                     shape_str(vb.shape()));
  }
  const int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor out({m, n});
  map2d(out, m, n).noalias() = map2d(va, m, k) * map2d(vb, k, n);
  bool rg = requires_grad(a) || requires_grad(b);
  NodeId out_id = push(std::move(out), "matmul", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, a, b, out_id, m, k, n] {
      ConstMatMap g = map2d(std::as_const(node(out_id).grad), m, n);
      if (requires_grad(a)) {
        map2d(grad_buf(a), m, k).noalias() += g * map2d(value(b), k, n).transpose();
        check_grad(a, "matmul");
      }
      if (requires_grad(b)) {
        map2d(grad_buf(b), k, n).noalias() += map2d(value(a), m, k).transpose() * g;
        check_grad(b, "matmul");
      }
    };
  }
  return out_id;
}

NodeId Graph::affine(NodeId x, NodeId gain, NodeId bias) {
  const Tensor& vx = value(x);
  const Tensor& vg = value(gain);
  const Tensor& vb = value(bias);
  require_rank2(vx, "affine");
  const int64_t rows = vx.dim(0), d = vx.dim(1);
  if (vg.rank() != 1 || vg.dim(0) != d || vb.rank() != 1 || vb.dim(0) != d) {
    throw ShapeError("affine: gain/bias must be [" + std::to_string(d) + "], got " +
                     shape_str(vg.shape()) + " and " + shape_str(vb.shape()));
  }
  Tensor out({rows, d});
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = vx.data() + r * d;
    float* yr = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) yr[j] = xr[j] * vg.data()[j] + vb.data()[j];
  }
  bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
  NodeId out_id = push(std::move(out), "affine", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, x, gain, bias, out_id, rows, d] {
      const Tensor& g = node(out_id).grad;
      if (requires_grad(x)) {
        Tensor& gx = grad_buf(x);
        const Tensor& vg2 = value(gain);
        for (int64_t r = 0; r < rows; ++r) {
          const float* gr = g.data() + r * d;
          float* dst = gx.data() + r * d;
          for (int64_t j = 0; j < d; ++j) dst[j] += gr[j] * vg2.data()[j];
        }
        check_grad(x, "affine");
      }
      if (requires_grad(gain)) {
        Tensor& gg = grad_buf(gain);
        const Tensor& vx2 = value(x);
        for (int64_t r = 0; r < rows; ++r) {
          const float* gr = g.data() + r * d;
          const float* xr = vx2.data() + r * d;
          for (int64_t j = 0; j < d; ++j) gg.data()[j] += gr[j] * xr[j];
        }
        check_grad(gain, "affine");
      }
      if (requires_grad(bias)) {
        Tensor& gb = grad_buf(bias);
        for (int64_t r = 0; r < rows; ++r) {
          const float* gr = g.data() + r * d;
          for (int64_t j = 0; j < d; ++j) gb.data()[j] += gr[j];
        }
        check_grad(bias, "affine");
      }
    };
  }
  return out_id;
}

NodeId Graph::layer_norm(NodeId x, float eps) {
  const Tensor& vx = value(x);
  require_rank2(vx, "layer_norm");
  const int64_t rows = vx.dim(0), d = vx.dim(1);
  if (d < 1) throw ShapeError("layer_norm: empty last dimension");
  Tensor out({rows, d});
  auto inv = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = vx.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    float iv = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*inv)[static_cast<size_t>(r)] = iv;
    float* yr = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - static_cast<float>(mean)) * iv;
  }
  bool rg = requires_grad(x);
  NodeId out_id = push(std::move(out), "layer_norm", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, x, out_id, rows, d, inv] {
      const Tensor& g = node(out_id).grad;
      const Tensor& y = value(out_id);
      Tensor& gx = grad_buf(x);
      for (int64_t r = 0; r < rows; ++r) {
        const float* gr = g.data() + r * d;
        const float* yr = y.data() + r * d;
        double gsum = 0.0, gysum = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          gsum += gr[j];
          gysum += gr[j] * yr[j];
        }
        const float gmean = static_cast<float>(gsum / d);
        const float gymean = static_cast<float>(gysum / d);
        const float iv = (*inv)[static_cast<size_t>(r)];
        float* dst = gx.data() + r * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += iv * (gr[j] - gmean - yr[j] * gymean);
      }
      check_grad(x, "layer_norm");
    };
  }
  return out_id;
}

NodeId Graph::gelu(NodeId x) {
  const Tensor& vx = value(x);
  Tensor out(vx.shape());
  const int64_t n = vx.numel();
  for (int64_t i = 0; i < n; ++i) {
    float v = vx.data()[i];
    out.data()[i] = 0.5f * v * (1.0f + std::erf(v * kInvSqrt2));
  }
  bool rg = requires_grad(x);
  NodeId out_id = push(std::move(out), "gelu", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, x, out_id, n] {
      const Tensor& g = node(out_id).grad;
      const Tensor& vx2 = value(x);
      Tensor& gx = grad_buf(x);
      for (int64_t i = 0; i < n; ++i) {
        float v = vx2.data()[i];
        float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
        float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
        gx.data()[i] += g.data()[i] * (cdf + v * pdf);
      }
      check_grad(x, "gelu");
    };
  }
  return out_id;
}

NodeId Graph::softmax(NodeId x) {
  const Tensor& vx = value(x);
  require_rank2(vx, "softmax");
  const int64_t rows = vx.dim(0), d = vx.dim(1);
  Tensor out({rows, d});
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = vx.data() + r * d;
    float* yr = out.data() + r * d;
    float mx = xr[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    const float izf = static_cast<float>(1.0 / z);
    for (int64_t j = 0; j < d; ++j) yr[j] *= izf;
  }
  bool rg = requires_grad(x);
  NodeId out_id = push(std::move(out), "softmax", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, x, out_id, rows, d] {
      const Tensor& g = node(out_id).grad;
      const Tensor& y = value(out_id);
      Tensor& gx = grad_buf(x);
      for (int64_t r = 0; r < rows; ++r) {
        const float* gr = g.data() + r * d;
        const float* yr = y.data() + r * d;
        double dot = 0.0;
        for (int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        float* dst = gx.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
          dst[j] += yr[j] * (gr[j] - static_cast<float>(dot));
        }
      }
      check_grad(x, "softmax");
    };
  }
  return out_id;
}

NodeId Graph::embedding(NodeId table, const std::vector<int32_t>& ids) {
  const Tensor& vt = value(table);
  require_rank2(vt, "embedding");
  const int64_t v = vt.dim(0), d = vt.dim(1);
  const int64_t n = static_cast<int64_t>(ids.size());
  for (int32_t id : ids) {
    if (id < 0 || id >= v) {
      throw Error("embedding: id " + std::to_string(id) + " out of range for table " +
                  shape_str(vt.shape()));
    }
  }
  Tensor out({n, d});
  for (int64_t i = 0; i < n; ++i) {
    const float* src = vt.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
    float* dst = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  bool rg = requires_grad(table);
  NodeId out_id = push(std::move(out), "embedding", rg, nullptr);
  if (rg) {
    auto ids_copy = std::make_shared<std::vector<int32_t>>(ids);
    node(out_id).back = [this, table, out_id, n, d, ids_copy] {
      const Tensor& g = node(out_id).grad;
      Tensor& gt = grad_buf(table);
      for (int64_t i = 0; i < n; ++i) {
        float* dst = gt.data() + static_cast<int64_t>((*ids_copy)[static_cast<size_t>(i)]) * d;
        const float* src = g.data() + i * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
      check_grad(table, "embedding");
    };
  }
  return out_id;
}

NodeId Graph::causal_attention(NodeId q, NodeId k, NodeId v, int batch, int seq, int heads) {
  const Tensor& vq = value(q);
  const Tensor& vk = value(k);
  const Tensor& vv = value(v);
  require_rank2(vq, "causal_attention");
  if (!vq.same_shape(vk) || !vq.same_shape(vv)) {
    throw ShapeError("causal_attention: q/k/v shapes differ: " + shape_str(vq.shape()) + ", " +
                     shape_str(vk.shape()) + ", " + shape_str(vv.shape()));
  }
  const int64_t rows = vq.dim(0), d = vq.dim(1);
  if (rows != static_cast<int64_t>(batch) * seq) {
    throw ShapeError("causal_attention: rows " + std::to_string(rows) + " != batch*seq " +
                     std::to_string(static_cast<int64_t>(batch) * seq));
  }
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("causal_attention: d_model " + std::to_string(d) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const int64_t dh = d / heads;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  Tensor out({rows, d});
  // softmax probabilities, [batch, heads, seq, seq], kept for backward
  auto probs = std::make_shared<Tensor>(
      Shape{static_cast<int64_t>(batch), static_cast<int64_t>(heads), static_cast<int64_t>(seq),
            static_cast<int64_t>(seq)});

  ConstMatMap qm = map2d(vq, rows, d);
  ConstMatMap km = map2d(vk, rows, d);
  ConstMatMap vm = map2d(vv, rows, d);
  MatMap om = map2d(out, rows, d);
  Mat scores(seq, seq);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto qb = qm.block(static_cast<int64_t>(b) * seq, h * dh, seq, dh);
      auto kb = km.block(static_cast<int64_t>(b) * seq, h * dh, seq, dh);
      auto vb = vm.block(static_cast<int64_t>(b) * seq, h * dh, seq, dh);
      scores.noalias() = qb * kb.transpose();
      float* p = probs->data() +
                 ((static_cast<int64_t>(b) * heads + h) * seq) * seq;
      for (int i = 0; i < seq; ++i) {
        float* prow = p + static_cast<int64_t>(i) * seq;
        float mx = -std::numeric_limits<float>::infinity();
        for (int j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j) * att_scale);
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
          prow[j] = std::exp(scores(i, j) * att_scale - mx);
          z += prow[j];
        }
        const float iz = static_cast<float>(1.0 / z);
        for (int j = 0; j <= i; ++j) prow[j] *= iz;
        for (int j = i + 1; j < seq; ++j) prow[j] = 0.0f;
      }
      ConstMatMap pm(p, seq, seq);
      om.block(static_cast<int64_t>(b) * seq, h * dh, seq, dh).noalias() = pm * vb;
    }
  }
  if (!finite_range(probs->data(), probs->numel())) {
    throw NumericsError("non-finite value in forward pass of op 'causal_attention'");
  }
  bool rg = requires_grad(q) || requires_grad(k) || requires_grad(v);
  NodeId out_id = push(std::move(out), "causal_attention", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, q, k, v, out_id, batch, seq, heads, dh, d, rows, att_scale,
                         probs] {
      ConstMatMap g = map2d(std::as_const(node(out_id).grad), rows, d);
      ConstMatMap qm2 = map2d(value(q), rows, d);
      ConstMatMap km2 = map2d(value(k), rows, d);
      ConstMatMap vm2 = map2d(value(v), rows, d);
      MatMap gq = map2d(grad_buf(q), rows, d);
      MatMap gk = map2d(grad_buf(k), rows, d);
      MatMap gv = map2d(grad_buf(v), rows, d);
      Mat dp(seq, seq), ds(seq, seq);
      for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
          const int64_t r0 = static_cast<int64_t>(b) * seq;
          const int64_t c0 = static_cast<int64_t>(h) * dh;
          ConstMatMap pm(probs->data() + ((static_cast<int64_t>(b) * heads + h) * seq) * seq,
                         seq, seq);
          auto go = g.block(r0, c0, seq, dh);
          gv.block(r0, c0, seq, dh).noalias() += pm.transpose() * go;
          dp.noalias() = go * vm2.block(r0, c0, seq, dh).transpose();
          // dS = P o (dP - rowsum(dP o P)); masked entries have P = 0
          for (int i = 0; i < seq; ++i) {
            double rowdot = 0.0;
            for (int j = 0; j <= i; ++j) rowdot += dp(i, j) * pm(i, j);
            for (int j = 0; j <= i; ++j) {
              ds(i, j) = pm(i, j) * (dp(i, j) - static_cast<float>(rowdot)) * att_scale;
            }
            for (int j = i + 1; j < seq; ++j) ds(i, j) = 0.0f;
          }
          gq.block(r0, c0, seq, dh).noalias() += ds * km2.block(r0, c0, seq, dh);
          gk.block(r0, c0, seq, dh).noalias() += ds.transpose() * qm2.block(r0, c0, seq, dh);
        }
      }
      check_grad(q, "causal_attention");
      check_grad(k, "causal_attention");
      check_grad(v, "causal_attention");
    };
  }
  return out_id;
}

NodeId Graph::cross_entropy(NodeId logits, const std::vector<int32_t>& targets,
                            const std::vector<float>& mask) {
  const Tensor& vl = value(logits);
  require_rank2(vl, "cross_entropy");
  const int64_t n = vl.dim(0), v = vl.dim(1);
  if (static_cast<int64_t>(targets.size()) != n || static_cast<int64_t>(mask.size()) != n) {
    throw ShapeError("cross_entropy: got " + std::to_string(targets.size()) + " targets and " +
                     std::to_string(mask.size()) + " mask entries for " + std::to_string(n) +
                     " rows");
  }
  double mass = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (mask[static_cast<size_t>(i)] != 0.0f) {
      int32_t t = targets[static_cast<size_t>(i)];
      if (t < 0 || t >= v) {
        throw Error("cross_entropy: target " + std::to_string(t) + " out of range for vocab " +
                    std::to_string(v));
      }
    }
    mass += mask[static_cast<size_t>(i)];
  }
  if (mass <= 0.0) throw Error("cross_entropy: mask selects no tokens");

  auto probs = std::make_shared<Tensor>(Shape{n, v});
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const float* lr = vl.data() + i * v;
    float* pr = probs->data() + i * v;
    float mx = lr[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      pr[j] = std::exp(lr[j] - mx);
      z += pr[j];
    }
    const float iz = static_cast<float>(1.0 / z);
    for (int64_t j = 0; j < v; ++j) pr[j] *= iz;
    float w = mask[static_cast<size_t>(i)];
    if (w != 0.0f) {
      int64_t t = targets[static_cast<size_t>(i)];
      acc += static_cast<double>(w) * (std::log(z) + mx - lr[t]);
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / mass));
  bool rg = requires_grad(logits);
  NodeId out_id = push(std::move(out), "cross_entropy", rg, nullptr);
  if (rg) {
    auto tgt = std::make_shared<std::vector<int32_t>>(targets);
    auto msk = std::make_shared<std::vector<float>>(mask);
    node(out_id).back = [this, logits, out_id, n, v, mass, probs, tgt, msk] {
      const float gscale = node(out_id).grad.at(0) / static_cast<float>(mass);
      Tensor& gl = grad_buf(logits);
      for (int64_t i = 0; i < n; ++i) {
        float w = (*msk)[static_cast<size_t>(i)];
        if (w == 0.0f) continue;
        const float* pr = probs->data() + i * v;
        float* dst = gl.data() + i * v;
        const float c = gscale * w;
        for (int64_t j = 0; j < v; ++j) dst[j] += c * pr[j];
        dst[(*tgt)[static_cast<size_t>(i)]] -= c;
      }
      check_grad(logits, "cross_entropy");
    };
  }
  return out_id;
}

NodeId Graph::sum(NodeId a) {
  const Tensor& va = value(a);
  double acc = 0.0;
  for (int64_t i = 0; i < va.numel(); ++i) acc += va.data()[i];
  bool rg = requires_grad(a);
  NodeId out_id = push(Tensor::scalar(static_cast<float>(acc)), "sum", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, a, out_id] {
      const float g = node(out_id).grad.at(0);
      Tensor& ga = grad_buf(a);
      for (int64_t i = 0; i < ga.numel(); ++i) ga.data()[i] += g;
      check_grad(a, "sum");
    };
  }
  return out_id;
}

NodeId Graph::mean(NodeId a) {
  const Tensor& va = value(a);
  if (va.numel() == 0) throw ShapeError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(va.numel());
  double acc = 0.0;
  for (int64_t i = 0; i < va.numel(); ++i) acc += va.data()[i];
  bool rg = requires_grad(a);
  NodeId out_id = push(Tensor::scalar(static_cast<float>(acc * inv)), "mean", rg, nullptr);
  if (rg) {
    node(out_id).back = [this, a, out_id, inv] {
      const float g = node(out_id).grad.at(0) * static_cast<float>(inv);
      Tensor& ga = grad_buf(a);
      for (int64_t i = 0; i < ga.numel(); ++i) ga.data()[i] += g;
      check_grad(a, "mean");
    };
  }
  return out_id;
}

void Graph::backward(NodeId loss) {
  Node& ln = node(loss);
  if (ln.value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape()));
  }
  grad_buf(loss).data()[0] = 1.0f;
  for (NodeId id = loss; id >= 0; --id) {
    Node& nd = node(id);
    if (nd.requires_grad && nd.back && nd.grad.numel() > 0) nd.back();
  }
}

std::vector<Tensor> gradient(const ParamStore& params, const LossBuilder& build,
                             double* loss_out) {
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const auto& [name, t] : params) ids.push_back(g.leaf(t, /*requires_grad=*/true));
  NodeId loss = build(g, ids);
  g.backward(loss);
  if (loss_out) *loss_out = static_cast<double>(g.value(loss).at(0));
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& gr = g.grad(ids[i]);
    grads.push_back(gr.numel() > 0 ? gr : Tensor::zeros(params.at(i).shape()));
  }
  return grads;
}

}  // namespace stacklab

#include "stacklab/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>

#include "stacklab/rng.hpp"

namespace stacklab {

namespace {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const Mat>;
using RowVec = Eigen::Matrix<float, 1, Eigen::Dynamic, Eigen::RowMajor>;

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kLnEps = 1e-5f;

float gelu_scalar(float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); }

void layer_norm_rows(const Mat& x, Mat& out, const float* gain, const float* bias) {
  const int64_t rows = x.rows(), d = x.cols();
  out.resize(rows, d);
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += x(r, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = x(r, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const float iv = static_cast<float>(1.0 / std::sqrt(var + kLnEps));
    for (int64_t j = 0; j < d; ++j) {
      out(r, j) = (x(r, j) - static_cast<float>(mean)) * iv * gain[j] + bias[j];
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
  if (d_model < 1) throw ConfigError("model: d_model must be >= 1");
  if (n_heads < 1) throw ConfigError("model: n_heads must be >= 1");
  if (d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_ff < 1) throw ConfigError("model: d_ff must be >= 1");
  if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
  if (seq_len < 1) throw ConfigError("model: seq_len must be >= 1");
}

std::string layer_prefix(const ModelConfig& config, int layer) {
  if (layer < 0 || layer >= config.n_layers) {
    throw Error("layer index " + std::to_string(layer) + " out of range for depth " +
                std::to_string(config.n_layers));
  }
  if (config.looped) return "shared.";
  char buf[24];
  std::snprintf(buf, sizeof(buf), "layer%02d.", layer);
  return buf;
}

TransformerParams init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  TransformerParams p;
  p.config = config;
  Rng rng(seed);
  const int64_t d = config.d_model, f = config.d_ff, v = config.vocab_size, s = config.seq_len;
  auto normal = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) {
      t.data()[i] = static_cast<float>(rng.next_normal() * 0.02);
    }
    return t;
  };
  p.store.add("embed.tok", normal({v, d}));
  p.store.add("embed.pos", normal({s, d}));
  const int blocks = config.looped ? 1 : config.n_layers;
  for (int l = 0; l < blocks; ++l) {
    std::string pre = config.looped ? "shared." : layer_prefix(config, l);
    p.store.add(pre + "attn_norm.gain", Tensor::full({d}, 1.0f));
    p.store.add(pre + "attn_norm.bias", Tensor::zeros({d}));
    p.store.add(pre + "attn.wq", normal({d, d}));
    p.store.add(pre + "attn.wk", normal({d, d}));
    p.store.add(pre + "attn.wv", normal({d, d}));
    p.store.add(pre + "attn.wo", normal({d, d}));
    p.store.add(pre + "mlp_norm.gain", Tensor::full({d}, 1.0f));
    p.store.add(pre + "mlp_norm.bias", Tensor::zeros({d}));
    p.store.add(pre + "mlp.w1", normal({d, f}));
    p.store.add(pre + "mlp.w2", normal({f, d}));
  }
  p.store.add("final_norm.gain", Tensor::full({d}, 1.0f));
  p.store.add("final_norm.bias", Tensor::zeros({d}));
  p.store.add("head.w", normal({d, v}));
  return p;
}

void Batch::validate(const ModelConfig& config) const {
  if (batch < 1 || seq < 1) throw ShapeError("batch: batch and seq must be >= 1");
  const size_t n = static_cast<size_t>(batch) * static_cast<size_t>(seq);
  if (x.size() != n || y.size() != n || mask.size() != n) {
    throw ShapeError("batch: x/y/mask sizes " + std::to_string(x.size()) + "/" +
                     std::to_string(y.size()) + "/" + std::to_string(mask.size()) +
                     " do not match batch*seq " + std::to_string(n));
  }
  if (seq > config.seq_len) {
    throw ShapeError("batch: seq " + std::to_string(seq) + " exceeds model seq_len " +
                     std::to_string(config.seq_len));
  }
  for (int32_t id : x) {
    if (id < 0 || id >= config.vocab_size) {
      throw Error("batch: input id " + std::to_string(id) + " out of vocab range");
    }
  }
}

NodeId lm_loss_graph(const TransformerParams& params, Graph& g, const std::vector<NodeId>& ids,
                     const Batch& batch) {
  batch.validate(params.config);
  if (ids.size() != params.store.size()) {
    throw Error("lm_loss_graph: got " + std::to_string(ids.size()) + " bound nodes for " +
                std::to_string(params.store.size()) + " parameters");
  }
  const ModelConfig& cfg = params.config;
  auto at = [&](const std::string& name) { return ids[params.store.index_of(name)]; };

  std::vector<int32_t> pos_ids(batch.x.size());
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < batch.seq; ++t) {
      pos_ids[static_cast<size_t>(b) * batch.seq + t] = t;
    }
  }
  NodeId x = g.add(g.embedding(at("embed.tok"), batch.x), g.embedding(at("embed.pos"), pos_ids));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(cfg, l);
    NodeId h = g.affine(g.layer_norm(x), at(pre + "attn_norm.gain"), at(pre + "attn_norm.bias"));
    NodeId att = g.causal_attention(g.matmul(h, at(pre + "attn.wq")),
                                    g.matmul(h, at(pre + "attn.wk")),
                                    g.matmul(h, at(pre + "attn.wv")), batch.batch, batch.seq,
                                    cfg.n_heads);
    x = g.add(x, g.matmul(att, at(pre + "attn.wo")));
    NodeId h2 = g.affine(g.layer_norm(x), at(pre + "mlp_norm.gain"), at(pre + "mlp_norm.bias"));
    NodeId inner = g.gelu(g.matmul(h2, at(pre + "mlp.w1")));
    x = g.add(x, g.matmul(inner, at(pre + "mlp.w2")));
  }
  NodeId hf = g.affine(g.layer_norm(x), at("final_norm.gain"), at("final_norm.bias"));
  NodeId logits = g.matmul(hf, at("head.w"));
  return g.cross_entropy(logits, batch.y, batch.mask);
}

double lm_loss(const TransformerParams& params, const Batch& batch) {
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(params.store.size());
  for (const auto& [name, t] : params.store) ids.push_back(g.leaf(t, /*requires_grad=*/false));
  NodeId loss = lm_loss_graph(params, g, ids, batch);
  return static_cast<double>(g.value(loss).at(0));
}

double lm_loss_and_grads(const TransformerParams& params, const Batch& batch,
                         std::vector<Tensor>* grads) {
  double loss = 0.0;
  std::vector<Tensor> out = gradient(
      params.store,
      [&](Graph& g, const std::vector<NodeId>& ids) {
        return lm_loss_graph(params, g, ids, batch);
      },
      &loss);
  if (grads) *grads = std::move(out);
  return loss;
}

// ---- forward-only batched path (analysis / logits) ----

namespace {

struct CollectState {
  bool collect = false;
  ProbeRecord record;
};

Tensor forward_collect(const TransformerParams& params, const Batch& batch, CollectState& cs) {
  batch.validate(params.config);
  const ModelConfig& cfg = params.config;
  const int64_t n = static_cast<int64_t>(batch.batch) * batch.seq;
  const int64_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  const int64_t dh = d / cfg.n_heads;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const ParamStore& st = params.store;

  Mat x(n, d);
  {
    ConstMatMap tok(st.at("embed.tok").data(), v, d);
    ConstMatMap pos(st.at("embed.pos").data(), cfg.seq_len, d);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t t = i % batch.seq;
      x.row(i) = tok.row(batch.x[static_cast<size_t>(i)]) + pos.row(t);
    }
  }

  Mat h, q, k, vv, att(n, d), u, gu;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(cfg, l);
    if (cs.collect) {
      Tensor snap({n, d});
      Eigen::Map<Mat>(snap.data(), n, d) = x;
      cs.record.residuals.push_back(std::move(snap));
    }
    layer_norm_rows(x, h, st.at(pre + "attn_norm.gain").data(),
                    st.at(pre + "attn_norm.bias").data());
    q.noalias() = h * ConstMatMap(st.at(pre + "attn.wq").data(), d, d);
    k.noalias() = h * ConstMatMap(st.at(pre + "attn.wk").data(), d, d);
    vv.noalias() = h * ConstMatMap(st.at(pre + "attn.wv").data(), d, d);
    Mat scores(batch.seq, batch.seq);
    for (int b = 0; b < batch.batch; ++b) {
      for (int hd = 0; hd < cfg.n_heads; ++hd) {
        auto qb = q.block(static_cast<int64_t>(b) * batch.seq, hd * dh, batch.seq, dh);
        auto kb = k.block(static_cast<int64_t>(b) * batch.seq, hd * dh, batch.seq, dh);
        auto vb = vv.block(static_cast<int64_t>(b) * batch.seq, hd * dh, batch.seq, dh);
        scores.noalias() = qb * kb.transpose();
        for (int i = 0; i < batch.seq; ++i) {
          float mx = -std::numeric_limits<float>::infinity();
          for (int j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j) * att_scale);
          double z = 0.0;
          for (int j = 0; j <= i; ++j) {
            scores(i, j) = std::exp(scores(i, j) * att_scale - mx);
            z += scores(i, j);
          }
          const float iz = static_cast<float>(1.0 / z);
          for (int j = 0; j <= i; ++j) scores(i, j) *= iz;
          for (int j = i + 1; j < batch.seq; ++j) scores(i, j) = 0.0f;
        }
        att.block(static_cast<int64_t>(b) * batch.seq, hd * dh, batch.seq, dh).noalias() =
            scores * vb;
      }
    }
    x.noalias() += att * ConstMatMap(st.at(pre + "attn.wo").data(), d, d);
    layer_norm_rows(x, h, st.at(pre + "mlp_norm.gain").data(),
                    st.at(pre + "mlp_norm.bias").data());
    u.noalias() = h * ConstMatMap(st.at(pre + "mlp.w1").data(), d, f);
    gu.resize(u.rows(), u.cols());
    for (int64_t i = 0; i < u.size(); ++i) gu.data()[i] = gelu_scalar(u.data()[i]);
    if (cs.collect) {
      Tensor act({f});
      for (int64_t c = 0; c < f; ++c) {
        double acc = 0.0;
        for (int64_t r = 0; r < n; ++r) acc += std::abs(gu(r, c));
        act.data()[c] = static_cast<float>(acc / static_cast<double>(n));
      }
      cs.record.mlp_activation.push_back(std::move(act));
    }
    x.noalias() += gu * ConstMatMap(st.at(pre + "mlp.w2").data(), f, d);
  }
  if (cs.collect) {
    Tensor snap({n, d});
    Eigen::Map<Mat>(snap.data(), n, d) = x;
    cs.record.residuals.push_back(std::move(snap));
  }
  layer_norm_rows(x, h, st.at("final_norm.gain").data(), st.at("final_norm.bias").data());
  Tensor logits({n, v});
  Eigen::Map<Mat>(logits.data(), n, v).noalias() = h * ConstMatMap(st.at("head.w").data(), d, v);
  if (!logits.all_finite()) throw NumericsError("non-finite logits in forward pass");
  return logits;
}

}  // namespace

Tensor lm_logits(const TransformerParams& params, const Batch& batch) {
  CollectState cs;
  return forward_collect(params, batch, cs);
}

ProbeRecord probe_forward(const TransformerParams& params, const Batch& batch) {
  CollectState cs;
  cs.collect = true;
  cs.record.logits = forward_collect(params, batch, cs);
  return std::move(cs.record);
}

// ---- incremental decoding ----

InferenceSession::InferenceSession(const TransformerParams& params) : params_(params) {
  params_.config.validate();
  const size_t cache = static_cast<size_t>(params_.config.seq_len) * params_.config.d_model;
  k_cache_.assign(params_.config.n_layers, std::vector<float>(cache, 0.0f));
  v_cache_.assign(params_.config.n_layers, std::vector<float>(cache, 0.0f));
}

std::vector<float> InferenceSession::feed(int32_t token) {
  const ModelConfig& cfg = params_.config;
  if (pos_ >= cfg.seq_len) {
    throw Error("inference: context length " + std::to_string(cfg.seq_len) + " exceeded");
  }
  if (token < 0 || token >= cfg.vocab_size) {
    throw Error("inference: token " + std::to_string(token) + " out of vocab range");
  }
  const ParamStore& st = params_.store;
  const int64_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  const int64_t dh = d / cfg.n_heads;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  RowVec x = ConstMatMap(st.at("embed.tok").data(), v, d).row(token) +
             ConstMatMap(st.at("embed.pos").data(), cfg.seq_len, d).row(pos_);
  RowVec h(d), q(d), k(d), vvec(d), mix(d), u(f);
  auto norm_into = [&](const RowVec& in, RowVec& out, const std::string& pre) {
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += in(j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = in(j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const float iv = static_cast<float>(1.0 / std::sqrt(var + kLnEps));
    const float* gain = st.at(pre + "gain").data();
    const float* bias = st.at(pre + "bias").data();
    for (int64_t j = 0; j < d; ++j) {
      out(j) = (in(j) - static_cast<float>(mean)) * iv * gain[j] + bias[j];
    }
  };

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(cfg, l);
    norm_into(x, h, pre + "attn_norm.");
    q.noalias() = h * ConstMatMap(st.at(pre + "attn.wq").data(), d, d);
    k.noalias() = h * ConstMatMap(st.at(pre + "attn.wk").data(), d, d);
    vvec.noalias() = h * ConstMatMap(st.at(pre + "attn.wv").data(), d, d);
    float* kc = k_cache_[static_cast<size_t>(l)].data();
    float* vc = v_cache_[static_cast<size_t>(l)].data();
    for (int64_t j = 0; j < d; ++j) {
      kc[pos_ * d + j] = k(j);
      vc[pos_ * d + j] = vvec(j);
    }
    const int ctx = pos_ + 1;
    std::vector<float> w(static_cast<size_t>(ctx));
    for (int64_t hd = 0; hd < cfg.n_heads; ++hd) {
      const int64_t c0 = hd * dh;
      float mx = -std::numeric_limits<float>::infinity();
      for (int j = 0; j < ctx; ++j) {
        double dot = 0.0;
        for (int64_t e = 0; e < dh; ++e) dot += q(c0 + e) * kc[static_cast<int64_t>(j) * d + c0 + e];
        w[static_cast<size_t>(j)] = static_cast<float>(dot) * att_scale;
        mx = std::max(mx, w[static_cast<size_t>(j)]);
      }
      double z = 0.0;
      for (int j = 0; j < ctx; ++j) {
        w[static_cast<size_t>(j)] = std::exp(w[static_cast<size_t>(j)] - mx);
        z += w[static_cast<size_t>(j)];
      }
      const float iz = static_cast<float>(1.0 / z);
      for (int64_t e = 0; e < dh; ++e) {
        double acc = 0.0;
        for (int j = 0; j < ctx; ++j) {
          acc += static_cast<double>(w[static_cast<size_t>(j)]) * iz *
                 vc[static_cast<int64_t>(j) * d + c0 + e];
        }
        mix(c0 + e) = static_cast<float>(acc);
      }
    }
    x.noalias() += mix * ConstMatMap(st.at(pre + "attn.wo").data(), d, d);
    norm_into(x, h, pre + "mlp_norm.");
    u.noalias() = h * ConstMatMap(st.at(pre + "mlp.w1").data(), d, f);
    for (int64_t j = 0; j < f; ++j) u(j) = gelu_scalar(u(j));
    x.noalias() += u * ConstMatMap(st.at(pre + "mlp.w2").data(), f, d);
  }
  norm_into(x, h, "final_norm.");
  RowVec logits = h * ConstMatMap(st.at("head.w").data(), d, v);
  pos_ += 1;
  std::vector<float> out(static_cast<size_t>(v));
  for (int64_t j = 0; j < v; ++j) {
    if (!std::isfinite(logits(j))) throw NumericsError("non-finite logits in inference");
    out[static_cast<size_t>(j)] = logits(j);
  }
  return out;
}

namespace {

int32_t argmax_lowest(const std::vector<float>& logits) {
  if (logits.empty()) throw Error("argmax over empty logits");
  int32_t best = 0;
  for (size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[static_cast<size_t>(best)]) best = static_cast<int32_t>(i);
  }
  return best;
}

}  // namespace

std::vector<int32_t> greedy_decode(const LogitsFn& next_logits, const std::vector<int32_t>& prompt,
                                   int max_new, int32_t stop_token) {
  if (prompt.empty()) throw Error("greedy_decode: empty prompt");
  if (max_new < 0) throw Error("greedy_decode: negative max_new");
  std::vector<int32_t> ctx = prompt;
  std::vector<int32_t> out;
  for (int i = 0; i < max_new; ++i) {
    int32_t next = argmax_lowest(next_logits(ctx));
    if (next == stop_token) break;
    out.push_back(next);
    ctx.push_back(next);
  }
  return out;
}

std::vector<int32_t> generate_greedy(const TransformerParams& params,
                                     const std::vector<int32_t>& prompt, int max_new,
                                     int32_t stop_token) {
  if (prompt.empty()) throw Error("generate_greedy: empty prompt");
  if (max_new < 0) throw Error("generate_greedy: negative max_new");
  if (static_cast<int64_t>(prompt.size()) + max_new > params.config.seq_len) {
    throw Error("generate_greedy: prompt length " + std::to_string(prompt.size()) + " + " +
                std::to_string(max_new) + " new tokens exceeds context " +
                std::to_string(params.config.seq_len));
  }
  InferenceSession session(params);
  std::vector<float> logits;
  for (int32_t t : prompt) logits = session.feed(t);
  std::vector<int32_t> out;
  for (int i = 0; i < max_new; ++i) {
    int32_t next = argmax_lowest(logits);
    if (next == stop_token) break;
    out.push_back(next);
    logits = session.feed(next);
  }
  return out;
}

// ---- tokenizer ----

std::vector<int32_t> encode_bytes(const std::string& text) {
  std::vector<int32_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int32_t>(c));
  return ids;
}

std::string decode_bytes(const std::vector<int32_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int32_t id : ids) {
    if (id >= 0 && id <= 255) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace stacklab

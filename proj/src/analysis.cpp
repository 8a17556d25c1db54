#include "stacklab/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace stacklab {

namespace {

using DMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> block_vector(const TransformerParams& params, int block, int block_size) {
  std::vector<double> v;
  for (int j = 0; j < block_size; ++j) {
    const Tensor& w = params.store.at(layer_prefix(params.config, block * block_size + j) +
                                      "mlp.w1");
    for (int64_t i = 0; i < w.numel(); ++i) v.push_back(static_cast<double>(w.data()[i]));
  }
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error("cosine similarity of a zero vector is undefined");
  if (a == b) return 1.0;  // identical vectors are exactly parallel; skip fp rounding
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

SimilarityMatrix block_cosine_similarity(const TransformerParams& params, int block_size) {
  const int layers = params.config.n_layers;
  if (block_size < 1 || layers % block_size != 0) {
    throw ConfigError("block cosine: depth " + std::to_string(layers) +
                      " is not divisible by block size " + std::to_string(block_size));
  }
  const int n = layers / block_size;
  SimilarityMatrix m;
  m.metric = "block_cosine";
  std::vector<std::vector<double>> vecs;
  for (int i = 0; i < n; ++i) {
    m.labels.push_back("block" + std::to_string(i + 1));
    vecs.push_back(block_vector(params, i, block_size));
  }
  m.values.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      m.values[static_cast<size_t>(i) * n + j] = i == j ? 1.0 : cosine(vecs[static_cast<size_t>(i)], vecs[static_cast<size_t>(j)]);
    }
  }
  return m;
}

SimilarityMatrix mlp_topk_iou(const TransformerParams& params, const Batch& probe,
                              double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("mlp_topk_iou: fraction must be in (0,1]");
  }
  const int d_ff = params.config.d_ff;
  const size_t k = static_cast<size_t>(std::ceil(fraction * d_ff));  // >= 1 for fraction > 0
  ProbeRecord rec = probe_forward(params, probe);
  const int n = params.config.n_layers;
  std::vector<std::set<int64_t>> tops(static_cast<size_t>(n));
  for (int l = 0; l < n; ++l) {
    const Tensor& act = rec.mlp_activation[static_cast<size_t>(l)];
    std::vector<int64_t> idx(static_cast<size_t>(act.numel()));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
      if (act.at(a) != act.at(b)) return act.at(a) > act.at(b);
      return a < b;
    });
    tops[static_cast<size_t>(l)].insert(idx.begin(), idx.begin() + static_cast<long>(k));
  }
  SimilarityMatrix m;
  m.metric = "mlp_topk_iou";
  for (int i = 0; i < n; ++i) m.labels.push_back("layer" + std::to_string(i + 1));
  m.values.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto& a = tops[static_cast<size_t>(i)];
      const auto& b = tops[static_cast<size_t>(j)];
      size_t inter = 0;
      for (int64_t u : a) inter += b.count(u);
      const size_t uni = a.size() + b.size() - inter;
      m.values[static_cast<size_t>(i) * n + j] =
          static_cast<double>(inter) / static_cast<double>(uni);
    }
  }
  return m;
}

Tensor fit_linear_map(const Tensor& y, const Tensor& d, double lambda) {
  if (y.rank() != 2 || d.rank() != 2 || y.dim(0) != d.dim(0)) {
    throw ShapeError("fit_linear_map: need row-aligned rank-2 inputs, got " +
                     shape_str(y.shape()) + " and " + shape_str(d.shape()));
  }
  const int64_t rows = y.dim(0), in = y.dim(1), out = d.dim(1);
  DMat ym(rows, in), dm(rows, out);
  for (int64_t i = 0; i < rows * in; ++i) ym.data()[i] = static_cast<double>(y.data()[i]);
  for (int64_t i = 0; i < rows * out; ++i) dm.data()[i] = static_cast<double>(d.data()[i]);
  DMat gram = ym.transpose() * ym;
  gram.diagonal().array() += lambda;
  Eigen::LDLT<DMat> solver(gram);
  if (solver.info() != Eigen::Success) {
    throw NumericsError("fit_linear_map: normal equations are degenerate beyond ridge rescue");
  }
  DMat a = solver.solve(ym.transpose() * dm);
  if (!a.allFinite()) {
    throw NumericsError("fit_linear_map: non-finite solution (rank deficiency beyond ridge)");
  }
  Tensor t({in, out});
  for (int64_t i = 0; i < in * out; ++i) t.data()[i] = static_cast<float>(a.data()[i]);
  return t;
}

std::vector<LinearityResult> linearity_probe(const TransformerParams& params, const Batch& probe,
                                             double lambda) {
  const int64_t n_tokens = static_cast<int64_t>(probe.batch) * probe.seq;
  if (n_tokens < 4 * params.config.d_model) {
    throw ConfigError("linearity probe: " + std::to_string(n_tokens) +
                      " token positions underdetermine a " +
                      std::to_string(params.config.d_model) + "-dim map (need >= 4*d_model)");
  }
  ProbeRecord rec = probe_forward(params, probe);
  const int64_t d = params.config.d_model;
  std::vector<LinearityResult> results;
  for (int l = 0; l < params.config.n_layers; ++l) {
    const Tensor& y = rec.residuals[static_cast<size_t>(l)];
    const Tensor& ynext = rec.residuals[static_cast<size_t>(l) + 1];
    Tensor delta({n_tokens, d});
    for (int64_t i = 0; i < n_tokens * d; ++i) delta.data()[i] = ynext.data()[i] - y.data()[i];
    Tensor a = fit_linear_map(y, delta, lambda);

    DMat ym(n_tokens, d), am(d, d), dm(n_tokens, d);
    for (int64_t i = 0; i < n_tokens * d; ++i) {
      ym.data()[i] = static_cast<double>(y.data()[i]);
      dm.data()[i] = static_cast<double>(delta.data()[i]);
    }
    for (int64_t i = 0; i < d * d; ++i) am.data()[i] = static_cast<double>(a.data()[i]);
    DMat pred = ym * am;
    double ss_res = (dm - pred).squaredNorm();
    double ss_tot = dm.squaredNorm();
    LinearityResult r;
    r.r2 = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
    double cos_acc = 0.0;
    for (int64_t i = 0; i < n_tokens; ++i) {
      double np = pred.row(i).norm(), na = dm.row(i).norm();
      cos_acc += (np == 0.0 || na == 0.0) ? 0.0 : pred.row(i).dot(dm.row(i)) / (np * na);
    }
    r.cosine = cos_acc / static_cast<double>(n_tokens);
    results.push_back(r);
  }
  return results;
}

void write_similarity_csv(const SimilarityMatrix& m, const std::string& path,
                          const std::string& checkpoint_hash) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open similarity CSV for writing: " + path);
  os << "# metric=" << m.metric << " n=" << m.n() << " checkpoint=" << checkpoint_hash << "\n";
  os << "label";
  for (const std::string& l : m.labels) os << "," << l;
  os << "\n";
  char buf[32];
  for (size_t i = 0; i < m.n(); ++i) {
    os << m.labels[i];
    for (size_t j = 0; j < m.n(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.6f", m.at(i, j));
      os << "," << buf;
    }
    os << "\n";
  }
  if (!os) throw IoError("failed while writing similarity CSV: " + path);
}

}  // namespace stacklab

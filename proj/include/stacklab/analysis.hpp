#pragma once

#include <string>
#include <vector>

#include "stacklab/model.hpp"

namespace stacklab {

struct SimilarityMatrix {
  std::string metric;
  std::vector<std::string> labels;
  std::vector<double> values;  // n*n row-major

  size_t n() const { return labels.size(); }
  double at(size_t i, size_t j) const { return values[i * n() + j]; }
};

// Cosine similarity between blocks of b consecutive layers, where each
// block is represented by its flattened first feedforward projection
// weights (mlp.w1 of its b layers).
SimilarityMatrix block_cosine_similarity(const TransformerParams& params, int block_size);

// Intersection-over-union of the top ceil(fraction*d_ff) MLP units per
// layer, ranked by mean absolute post-nonlinearity activation over the
// probe batch.
SimilarityMatrix mlp_topk_iou(const TransformerParams& params, const Batch& probe,
                              double fraction = 0.01);

struct LinearityResult {
  double r2 = 0.0;
  double cosine = 0.0;
};

// Ridge least squares A = (Y^T Y + lambda I)^-1 Y^T D for row-sample
// matrices Y [N,in] and D [N,out]; exposed for stub testing.
Tensor fit_linear_map(const Tensor& y, const Tensor& d, double lambda);

/// Per layer i: fit delta = Y_{i+1} - Y_i as a linear map of the block input
// Y_i (ridge lambda = 1e-4); reports the uncentered r^2 of the fit and the
// mean cosine between predicted and actual deltas over token positions.
std::vector<LinearityResult> linearity_probe(const TransformerParams& params, const Batch& probe,
                                             double lambda = 1e-4);

/// CSV with a one-line header: "# metric=<name> n=<n> checkpoint=<hash>".
void write_similarity_csv(const SimilarityMatrix& m, const std::string& path,
                          const std::string& checkpoint_hash);

}  // namespace stacklab

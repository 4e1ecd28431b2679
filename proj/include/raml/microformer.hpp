#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "raml/common.hpp"

namespace raml::micro {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// One row per token position, d columns.
using Embeddings = Eigen::MatrixXd;

// Weights of the single-block model: self-attention (wq, wk, wv) followed by
// a two-layer feed-forward network (w1, w2, b1, b2). No normalization layers.
struct TransformerParams {
  Matrix wq, wk, wv, w1, w2;
  Vector b1, b2;

  int dim() const { return static_cast<int>(wq.rows()); }
  void validate() const;

  static TransformerParams random(int d, std::uint64_t seed);
};

// Per-parameter difference between two parameter sets; also doubles as a
// perturbation direction.
struct ParamDelta {
  Matrix wq, wk, wv, w1, w2;
  Vector b1, b2;

  int dim() const { return static_cast<int>(wq.rows()); }
  static ParamDelta zero(int d);
  ParamDelta scaled(double f) const;
  ParamDelta& operator+=(const ParamDelta& other);
  double max_abs() const;
};

TransformerParams operator+(const TransformerParams& p, const ParamDelta& d);
ParamDelta operator-(const TransformerParams& a, const TransformerParams& b);

// Byproducts of construct_updated_params, kept for inspection and tests.
struct ConstructionIntermediates {
  Matrix p;         // d x d query transport: last_context_row * p == new_token
  RowVector c;      // 1 x |l| least-squares coefficients for the new token
  Matrix m;         // |l| x (|l|+1), identity columns followed by c^T
  Matrix pinv;      // d x |l| Moore-Penrose pseudoinverse of the context
  double residual;  // least-squares residual norm
};

struct ConstructionResult {
  TransformerParams params;
  ConstructionIntermediates intermediates;
};

struct LeastSquaresResult {
  RowVector coefficients;
  double residual;
};

// Numerically stable softmax (max subtraction) over a logit row.
RowVector softmax(const RowVector& logits);

// Activation at the final position:
//   w2^T ( relu( w1^T ( softmax(q Wq Wk^T E^T) E Wv ) + b1 ) ) + b2
Vector attention_forward(const TransformerParams& params, const Embeddings& context,
                         const RowVector& query_row);

// SVD-based pseudoinverse with singular values below 1e-10 * sigma_max
// treated as zero. Satisfies the four Penrose conditions.
Matrix pseudoinverse(const Matrix& mat);

// Minimizes ||target - coefficients * basis_rows||_2. Normal equations with a
// pseudoinverse fallback when the Gram matrix condition number exceeds 1e12.
LeastSquaresResult least_squares(const RowVector& target, const Matrix& basis_rows);

// Builds parameters theta' such that running attention_forward with theta'
// on (context, last context row as query) reproduces the forward pass of
// theta on the context augmented with new_token_embedding, queried at the new
// token. Exact when the new token lies in the row span of the context; the
// discrepancy otherwise shrinks with the least-squares residual.
ConstructionResult construct_updated_params(const TransformerParams& params,
                                            const Embeddings& context,
                                            const RowVector& new_token_embedding);

// Iterates construct_updated_params over a trajectory, growing the context by
// one row per step. Returns the per-step parameter differences.
std::vector<ParamDelta> multi_step_update(const TransformerParams& params,
                                          const Embeddings& context,
                                          const std::vector<RowVector>& trajectory_embeddings);

}  // namespace raml::micro

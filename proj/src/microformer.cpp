#include "raml/microformer.hpp"

#include <cmath>
#include <string>

#include "raml/rng.hpp"

namespace raml::micro {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite entries");
  }
}

void fill_gaussian(Matrix& m, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = scale * rng.gaussian();
    }
  }
}

void fill_gaussian(Vector& v, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v(i) = scale * rng.gaussian();
  }
}

}  // namespace

void TransformerParams::validate() const {
  const auto d = wq.rows();
  if (d < 1) {
    throw ShapeError("params: dimension must be >= 1");
  }
  auto square = [d](const Matrix& m, const char* name) {
    if (m.rows() != d || m.cols() != d) {
      throw ShapeError(std::string("params: ") + name + " must be d x d");
    }
  };
  square(wq, "wq");
  square(wk, "wk");
  square(wv, "wv");
  square(w1, "w1");
  square(w2, "w2");
  if (b1.size() != d || b2.size() != d) {
    throw ShapeError("params: biases must have length d");
  }
  if (!wq.allFinite() || !wk.allFinite() || !wv.allFinite() || !w1.allFinite() ||
      !w2.allFinite() || !b1.allFinite() || !b2.allFinite()) {
    throw NumericError("params: non-finite entries");
  }
}

TransformerParams TransformerParams::random(int d, std::uint64_t seed) {
  if (d < 1) {
    throw ShapeError("params: dimension must be >= 1");
  }
  Rng rng(seed);
  TransformerParams p;
  p.wq.resize(d, d);
  p.wk.resize(d, d);
  p.wv.resize(d, d);
  p.w1.resize(d, d);
  p.w2.resize(d, d);
  p.b1.resize(d);
  p.b2.resize(d);
  const double scale = 0.25;
  fill_gaussian(p.wq, rng, scale);
  fill_gaussian(p.wk, rng, scale);
  fill_gaussian(p.wv, rng, scale);
  fill_gaussian(p.w1, rng, scale);
  fill_gaussian(p.w2, rng, scale);
  fill_gaussian(p.b1, rng, scale);
  fill_gaussian(p.b2, rng, scale);
  return p;
}

ParamDelta ParamDelta::zero(int d) {
  ParamDelta z;
  z.wq = Matrix::Zero(d, d);
  z.wk = Matrix::Zero(d, d);
  z.wv = Matrix::Zero(d, d);
  z.w1 = Matrix::Zero(d, d);
  z.w2 = Matrix::Zero(d, d);
  z.b1 = Vector::Zero(d);
  z.b2 = Vector::Zero(d);
  return z;
}

ParamDelta ParamDelta::scaled(double f) const {
  ParamDelta s;
  s.wq = f * wq;
  s.wk = f * wk;
  s.wv = f * wv;
  s.w1 = f * w1;
  s.w2 = f * w2;
  s.b1 = f * b1;
  s.b2 = f * b2;
  return s;
}

ParamDelta& ParamDelta::operator+=(const ParamDelta& other) {
  wq += other.wq;
  wk += other.wk;
  wv += other.wv;
  w1 += other.w1;
  w2 += other.w2;
  b1 += other.b1;
  b2 += other.b2;
  return *this;
}

double ParamDelta::max_abs() const {
  double m = 0.0;
  m = std::max(m, wq.cwiseAbs().maxCoeff());
  m = std::max(m, wk.cwiseAbs().maxCoeff());
  m = std::max(m, wv.cwiseAbs().maxCoeff());
  m = std::max(m, w1.cwiseAbs().maxCoeff());
  m = std::max(m, w2.cwiseAbs().maxCoeff());
  m = std::max(m, b1.cwiseAbs().maxCoeff());
  m = std::max(m, b2.cwiseAbs().maxCoeff());
  return m;
}

TransformerParams operator+(const TransformerParams& p, const ParamDelta& d) {
  if (p.dim() != d.dim()) {
    throw ShapeError("params + delta: dimension mismatch");
  }
  TransformerParams out;
  out.wq = p.wq + d.wq;
  out.wk = p.wk + d.wk;
  out.wv = p.wv + d.wv;
  out.w1 = p.w1 + d.w1;
  out.w2 = p.w2 + d.w2;
  out.b1 = p.b1 + d.b1;
  out.b2 = p.b2 + d.b2;
  return out;
}

ParamDelta operator-(const TransformerParams& a, const TransformerParams& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError("params - params: dimension mismatch");
  }
  ParamDelta d;
  d.wq = a.wq - b.wq;
  d.wk = a.wk - b.wk;
  d.wv = a.wv - b.wv;
  d.w1 = a.w1 - b.w1;
  d.w2 = a.w2 - b.w2;
  d.b1 = a.b1 - b.b1;
  d.b2 = a.b2 - b.b2;
  return d;
}

RowVector softmax(const RowVector& logits) {
  if (logits.size() == 0) {
    throw ShapeError("softmax: empty logits");
  }
  const double m = logits.maxCoeff();
  RowVector e = (logits.array() - m).exp();
  return e / e.sum();
}

Vector attention_forward(const TransformerParams& params, const Embeddings& context,
                         const RowVector& query_row) {
  params.validate();
  const int d = params.dim();
  if (context.rows() < 1) {
    throw ShapeError("attention_forward: empty context");
  }
  if (context.cols() != d) {
    throw ShapeError("attention_forward: context column count must equal d");
  }
  if (query_row.size() != d) {
    throw ShapeError("attention_forward: query length must equal d");
  }
  require_finite(context, "attention_forward: context");
  if (!query_row.allFinite()) {
    throw NumericError("attention_forward: query has non-finite entries");
  }

  const RowVector q = query_row * params.wq;
  const RowVector logits = (q * params.wk.transpose()) * context.transpose();
  const RowVector weights = softmax(logits);
  const RowVector attn = (weights * context) * params.wv;
  Vector hidden = params.w1.transpose() * attn.transpose() + params.b1;
  hidden = hidden.cwiseMax(0.0);  // relu
  return params.w2.transpose() * hidden + params.b2;
}

Matrix pseudoinverse(const Matrix& mat) {
  require_finite(mat, "pseudoinverse");
  if (mat.rows() == 0 || mat.cols() == 0) {
    throw ShapeError("pseudoinverse: empty matrix");
  }
  Eigen::JacobiSVD<Matrix> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = 1e-10 * (sv.size() > 0 ? sv(0) : 0.0);
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) {
      inv(i) = 1.0 / sv(i);
    }
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

LeastSquaresResult least_squares(const RowVector& target, const Matrix& basis_rows) {
  if (basis_rows.rows() == 0) {
    throw ShapeError("least_squares: empty basis");
  }
  if (basis_rows.cols() != target.size()) {
    throw ShapeError("least_squares: basis column count must equal target length");
  }
  require_finite(basis_rows, "least_squares: basis");
  if (!target.allFinite()) {
    throw NumericError("least_squares: non-finite target");
  }

  const Matrix gram = basis_rows * basis_rows.transpose();
  Eigen::JacobiSVD<Matrix> svd(gram);
  const Vector& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);

  RowVector coeff;
  if (smin <= 0.0 || smax / smin > 1e12) {
    coeff = target * pseudoinverse(basis_rows);
  } else {
    const Vector rhs = basis_rows * target.transpose();
    coeff = gram.ldlt().solve(rhs).transpose();
  }
  const double residual = (target - coeff * basis_rows).norm();
  return {coeff, residual};
}

ConstructionResult construct_updated_params(const TransformerParams& params,
                                            const Embeddings& context,
                                            const RowVector& new_token_embedding) {
  params.validate();
  const int d = params.dim();
  if (context.rows() < 1) {
    throw ShapeError("construct_updated_params: context needs at least one row");
  }
  if (context.cols() != d || new_token_embedding.size() != d) {
    throw ShapeError("construct_updated_params: dimension mismatch");
  }
  require_finite(context, "construct_updated_params: context");
  if (!new_token_embedding.allFinite()) {
    throw NumericError("construct_updated_params: non-finite new token");
  }

  const Eigen::Index l = context.rows();
  const RowVector last = context.row(l - 1);
  const double last_sq = last.squaredNorm();
  if (last_sq == 0.0) {
    throw ConstructionError(
        "construct_updated_params: query transport failed, last context row is zero");
  }

  // Query transport: rank-one update of the identity so that
  // last * p == new_token exactly. With wq' = p * wq the updated model,
  // queried at the last context row, reproduces the new token's query.
  const Matrix p =
      Matrix::Identity(d, d) + last.transpose() * (new_token_embedding - last) / last_sq;

  LeastSquaresResult ls;
  try {
    ls = least_squares(new_token_embedding, context);
  } catch (const Error& e) {
    throw ConstructionError(std::string("construct_updated_params: coefficient fit failed: ") +
                            e.what());
  }

  Matrix m(l, l + 1);
  m.leftCols(l) = Matrix::Identity(l, l);
  m.col(l) = ls.coefficients.transpose();

  const Matrix pinv = pseudoinverse(context);  // d x |l|

  // Surrogate augmented attention, everything expressed over the original
  // context: the extra key/value row is replaced by its in-span fit c * E.
  // Logits over the augmented context become z * m and the extra token's
  // weight folds back onto the context rows through m^T.
  const RowVector q = new_token_embedding * params.wq;
  const RowVector z = (q * params.wk.transpose()) * context.transpose();
  const RowVector w_aug = softmax(z * m);
  const RowVector w_fold = w_aug * m.transpose();
  const RowVector u = softmax(z);

  // Value fold: wv' reweights the context rows so the plain |l|-way attention
  // with weights u emits w_fold * E * wv. The denominator uses u projected
  // through E E^+ so the identity also holds for rank-deficient contexts.
  const RowVector u_tilde = (u * context) * pinv;
  const double denom = u_tilde.dot(u);
  if (std::abs(denom) < 1e-14) {
    throw ConstructionError(
        "construct_updated_params: value fold failed, degenerate attention weights");
  }
  const Matrix fold = (u.transpose() * w_fold) / denom;

  ConstructionResult out;
  out.params = params;
  out.params.wq = p * params.wq;
  out.params.wk = pinv * (context * params.wk);
  out.params.wv = pinv * (fold * (context * params.wv));
  out.intermediates = ConstructionIntermediates{p, ls.coefficients, m, pinv, ls.residual};
  return out;
}

std::vector<ParamDelta> multi_step_update(const TransformerParams& params,
                                          const Embeddings& context,
                                          const std::vector<RowVector>& trajectory_embeddings) {
  if (trajectory_embeddings.empty()) {
    throw ValidationError("multi_step_update: empty trajectory");
  }
  std::vector<ParamDelta> deltas;
  deltas.reserve(trajectory_embeddings.size());

  TransformerParams current = params;
  Embeddings grown = context;
  for (std::size_t i = 0; i < trajectory_embeddings.size(); ++i) {
    ConstructionResult step;
    try {
      step = construct_updated_params(current, grown, trajectory_embeddings[i]);
    } catch (const ConstructionError& e) {
      throw ConstructionError("multi_step_update: step " + std::to_string(i) + ": " + e.what());
    } catch (const Error& e) {
      throw ConstructionError("multi_step_update: step " + std::to_string(i) + ": " + e.what());
    }
    deltas.push_back(step.params - current);
    current = step.params;
    grown.conservativeResize(grown.rows() + 1, Eigen::NoChange);
    grown.row(grown.rows() - 1) = trajectory_embeddings[i];
  }
  return deltas;
}

}  // namespace raml::micro

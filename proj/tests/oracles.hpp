#pragma once

// Test-side reference implementations. These intentionally avoid the library
// code paths (and Eigen products where feasible) so they can serve as
// independent oracles.

#include <cmath>
#include <vector>

#include "raml/microformer.hpp"

namespace oracles {

// Plain-loop forward pass of the single-block model.
inline raml::micro::Vector naive_forward(const raml::micro::TransformerParams& p,
                                         const raml::micro::Embeddings& context,
                                         const raml::micro::RowVector& query,
                                         double logit_shift = 0.0) {
  const int d = p.dim();
  const int l = static_cast<int>(context.rows());

  // q = query * wq
  std::vector<double> q(d, 0.0);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      q[j] += query(i) * p.wq(i, j);
    }
  }
  // qk = q * wk^T
  std::vector<double> qk(d, 0.0);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      qk[j] += q[i] * p.wk(j, i);
    }
  }
  // logits over context rows
  std::vector<double> logits(l, 0.0);
  for (int r = 0; r < l; ++r) {
    for (int i = 0; i < d; ++i) {
      logits[r] += qk[i] * context(r, i);
    }
    logits[r] += logit_shift;
  }
  double mx = logits[0];
  for (int r = 1; r < l; ++r) {
    mx = std::max(mx, logits[r]);
  }
  double z = 0.0;
  std::vector<double> w(l, 0.0);
  for (int r = 0; r < l; ++r) {
    w[r] = std::exp(logits[r] - mx);
    z += w[r];
  }
  for (int r = 0; r < l; ++r) {
    w[r] /= z;
  }
  // attn = w * context * wv
  std::vector<double> mix(d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int r = 0; r < l; ++r) {
      mix[i] += w[r] * context(r, i);
    }
  }
  std::vector<double> attn(d, 0.0);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      attn[j] += mix[i] * p.wv(i, j);
    }
  }
  // feed-forward
  std::vector<double> hidden(d, 0.0);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      hidden[j] += p.w1(i, j) * attn[i];
    }
    hidden[j] += p.b1(j);
    if (hidden[j] < 0.0) {
      hidden[j] = 0.0;
    }
  }
  raml::micro::Vector out(d);
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
      acc += p.w2(i, j) * hidden[i];
    }
    out(j) = acc + p.b2(j);
  }
  return out;
}

// Forward pass on the context extended by one extra row, queried at that row.
inline raml::micro::Vector augmented_forward(const raml::micro::TransformerParams& p,
                                             const raml::micro::Embeddings& context,
                                             const raml::micro::RowVector& extra) {
  raml::micro::Embeddings aug(context.rows() + 1, context.cols());
  aug.topRows(context.rows()) = context;
  aug.row(context.rows()) = extra;
  return naive_forward(p, aug, extra);
}

// Gradient descent on ||target - c * basis||^2 run to convergence.
inline double least_squares_residual_gd(const raml::micro::RowVector& target,
                                        const raml::micro::Matrix& basis) {
  const int l = static_cast<int>(basis.rows());
  const int d = static_cast<int>(basis.cols());
  std::vector<double> c(l, 0.0);

  // Step size from a crude spectral bound: trace of the Gram matrix.
  double trace = 0.0;
  for (int r = 0; r < l; ++r) {
    for (int j = 0; j < d; ++j) {
      trace += basis(r, j) * basis(r, j);
    }
  }
  const double lr = trace > 0.0 ? 0.9 / trace : 0.0;

  for (int iter = 0; iter < 200000; ++iter) {
    std::vector<double> resid(d, 0.0);
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int r = 0; r < l; ++r) {
        acc += c[r] * basis(r, j);
      }
      resid[j] = acc - target(j);
    }
    double gnorm = 0.0;
    for (int r = 0; r < l; ++r) {
      double g = 0.0;
      for (int j = 0; j < d; ++j) {
        g += 2.0 * resid[j] * basis(r, j);
      }
      c[r] -= lr * g;
      gnorm += g * g;
    }
    if (gnorm < 1e-26) {
      break;
    }
  }
  double rss = 0.0;
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int r = 0; r < l; ++r) {
      acc += c[r] * basis(r, j);
    }
    const double e = acc - target(j);
    rss += e * e;
  }
  return std::sqrt(rss);
}

}  // namespace oracles

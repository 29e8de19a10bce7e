#pragma once

// Straight-line 64-bit reference implementations of the model equations,
// written directly from their definitions with plain Eigen and no tape
// machinery. These are the oracles the implementation is checked against.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace refimpl {

using Matd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Matd softmax_rows(const Matd& x) {
  Matd y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    double total = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      y(i, j) = std::exp(x(i, j) - m);
      total += y(i, j);
    }
    y.row(i) /= total;
  }
  return y;
}

// f(Q, K, V) = softmax(Q Wq (K Wk)^T / sqrt(d)) V Wv
inline Matd attention(const Matd& q, const Matd& k, const Matd& v, const Matd& Wq,
                      const Matd& Wk, const Matd& Wv, double d) {
  Matd scores = (q * Wq) * (k * Wk).transpose() / std::sqrt(d);
  return softmax_rows(scores) * (v * Wv);
}

inline Matd multi_head(const Matd& q, const Matd& k, const Matd& v, const Matd& Wq,
                       const Matd& Wk, const Matd& Wv, const Matd& Wo, int heads) {
  const Eigen::Index h = Wq.cols();
  const Eigen::Index dh = h / heads;
  Matd qp = q * Wq, kp = k * Wk, vp = v * Wv;
  Matd cat(q.rows(), h);
  for (int i = 0; i < heads; ++i) {
    Matd scores = qp.middleCols(i * dh, dh) * kp.middleCols(i * dh, dh).transpose() /
                  std::sqrt(static_cast<double>(dh));
    cat.middleCols(i * dh, dh) = softmax_rows(scores) * vp.middleCols(i * dh, dh);
  }
  return cat * Wo;
}

inline Matd relu(const Matd& x) { return x.cwiseMax(0.0); }

inline Matd ffn(const Matd& x, const Matd& W1, const Matd& b1, const Matd& W2, const Matd& b2) {
  Matd h = x * W1;
  h.rowwise() += b1.row(0);
  h = relu(h);
  Matd y = h * W2;
  y.rowwise() += b2.row(0);
  return y;
}

inline Matd layer_norm(const Matd& x, const Matd& gamma, const Matd& beta, double eps = 1e-5) {
  Matd y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    y.row(i) = ((x.row(i).array() - mu) / std::sqrt(var + eps)) * gamma.row(0).array() +
               beta.row(0).array();
  }
  return y;
}

inline Matd sigmoid(const Matd& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

// g(x, y) = alpha .* x + (J - alpha) .* y, alpha = sigmoid(W [x ; y] + b)
inline Matd gate(const Matd& x, const Matd& y, const Matd& W, const Matd& b) {
  Matd cat(x.rows(), x.cols() + y.cols());
  cat << x, y;
  Matd pre = cat * W;
  pre.rowwise() += b.row(0);
  Matd alpha = sigmoid(pre);
  return alpha.cwiseProduct(x) + (Matd::Ones(alpha.rows(), alpha.cols()) - alpha).cwiseProduct(y);
}

}  // namespace refimpl

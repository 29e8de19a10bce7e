#pragma once

#include <cmath>
#include <vector>

#include "reltr/tape.hpp"

namespace reltr {

namespace detail {

template <class Scalar>
void same_tape(Var<Scalar> a, Var<Scalar> b) {
  if (&a.tape() != &b.tape()) throw ConfigError("operands belong to different tapes");
}

template <class Scalar>
void same_shape(Var<Scalar> a, Var<Scalar> b, const char* op) {
  same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                         " vs " + shape_str(b.rows(), b.cols()));
}

}  // namespace detail

// y = a * b
template <class Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::same_tape(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.rows(), a.cols()) +
                         " * " + shape_str(b.rows(), b.cols()));
  Tape<Scalar>& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.make(a.value() * b.value(), [ia, ib](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    t.accumulate(ia, g * t.value(ib).transpose());
    t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

// y = a * b^T
template <class Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  detail::same_tape(a, b);
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.rows(), a.cols()) +
                         " * " + shape_str(b.cols(), b.rows()));
  Tape<Scalar>& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.make(a.value() * b.value().transpose(), [ia, ib](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    t.accumulate(ia, g * t.value(ib));
    t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

template <class Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::same_shape(a, b, "add");
  Tape<Scalar>& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.make(a.value() + b.value(), [ia, ib](Tape<Scalar>& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <class Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}

template <class Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::same_shape(a, b, "sub");
  Tape<Scalar>& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.make(a.value() - b.value(), [ia, ib](Tape<Scalar>& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

// Hadamard product.
template <class Scalar>
Var<Scalar> cmul(Var<Scalar> a, Var<Scalar> b) {
  detail::same_shape(a, b, "cmul");
  Tape<Scalar>& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.make(a.value().cwiseProduct(b.value()), [ia, ib](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <class Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar c) {
  Tape<Scalar>& t = a.tape();
  const int ia = a.id();
  return t.make(a.value() * c,
                [ia, c](Tape<Scalar>& t, int self) { t.accumulate(ia, t.grad(self) * c); });
}

// y = c0 * x + c1 elementwise.
template <class Scalar>
Var<Scalar> affine(Var<Scalar> a, Scalar c0, Scalar c1) {
  Tape<Scalar>& t = a.tape();
  const int ia = a.id();
  Mat<Scalar> y = (a.value().array() * c0 + c1).matrix();
  return t.make(std::move(y),
                [ia, c0](Tape<Scalar>& t, int self) { t.accumulate(ia, t.grad(self) * c0); });
}

// y = x * s where s is a 1x1 node.
template <class Scalar>
Var<Scalar> mul_scalar_var(Var<Scalar> x, Var<Scalar> s) {
  detail::same_tape(x, s);
  if (s.rows() != 1 || s.cols() != 1)
    throw DimensionError("mul_scalar_var: scalar operand must be 1x1");
  Tape<Scalar>& t = x.tape();
  const int ix = x.id(), is = s.id();
  return t.make(x.value() * s.value()(0, 0), [ix, is](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    t.accumulate(ix, g * t.value(is)(0, 0));
    t.accumulate(is, Mat<Scalar>::Constant(1, 1, g.cwiseProduct(t.value(ix)).sum()));
  });
}

// Adds a 1xK row vector to every row of x.
template <class Scalar>
Var<Scalar> add_rowvec(Var<Scalar> x, Var<Scalar> b) {
  detail::same_tape(x, b);
  if (b.rows() != 1 || b.cols() != x.cols())
    throw DimensionError("add_rowvec: expected 1x" + std::to_string(x.cols()) + " bias, got " +
                         shape_str(b.rows(), b.cols()));
  Tape<Scalar>& t = x.tape();
  const int ix = x.id(), ib = b.id();
  Mat<Scalar> y = x.value();
  y.rowwise() += b.value().row(0);
  return t.make(std::move(y), [ix, ib](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    t.accumulate(ix, g);
    t.accumulate(ib, g.colwise().sum());
  });
}

// Multiplies every row of x elementwise by a 1xK row vector.
template <class Scalar>
Var<Scalar> cmul_rowvec(Var<Scalar> x, Var<Scalar> s) {
  detail::same_tape(x, s);
  if (s.rows() != 1 || s.cols() != x.cols())
    throw DimensionError("cmul_rowvec: expected 1x" + std::to_string(x.cols()) + " scale, got " +
                         shape_str(s.rows(), s.cols()));
  Tape<Scalar>& t = x.tape();
  const int ix = x.id(), is = s.id();
  Mat<Scalar> y = x.value().array().rowwise() * s.value().row(0).array();
  return t.make(std::move(y), [ix, is](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    t.accumulate(ix, (g.array().rowwise() * t.value(is).row(0).array()).matrix());
    t.accumulate(is, g.cwiseProduct(t.value(ix)).colwise().sum());
  });
}

template <class Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  return t.make(x.value().cwiseMax(Scalar(0)), [ix](Tape<Scalar>& t, int self) {
    const Mat<Scalar> active =
        (t.value(ix).array() > Scalar(0)).template cast<Scalar>().matrix();
    t.accumulate(ix, t.grad(self).cwiseProduct(active));
  });
}

template <class Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  Mat<Scalar> y = (Scalar(1) / (Scalar(1) + (-x.value().array()).exp())).matrix();
  return t.make(std::move(y), [ix](Tape<Scalar>& t, int self) {
    const auto& y = t.value(self).array();
    t.accumulate(ix, (t.grad(self).array() * y * (Scalar(1) - y)).matrix());
  });
}

template <class Scalar>
Var<Scalar> exp_elem(Var<Scalar> x) {
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  return t.make(x.value().array().exp().matrix(), [ix](Tape<Scalar>& t, int self) {
    t.accumulate(ix, t.grad(self).cwiseProduct(t.value(self)));
  });
}

template <class Scalar>
Var<Scalar> log_elem(Var<Scalar> x) {
  if ((x.value().array() <= Scalar(0)).any())
    throw NumericError("log_elem: non-positive input");
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  return t.make(x.value().array().log().matrix(), [ix](Tape<Scalar>& t, int self) {
    t.accumulate(ix, (t.grad(self).array() / t.value(ix).array()).matrix());
  });
}

// y = x^p elementwise; inputs must be positive unless p is a non-negative
// integer power in use. Covers the focal modulator (1-p)^gamma.
template <class Scalar>
Var<Scalar> pow_elem(Var<Scalar> x, Scalar p) {
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  if (p == Scalar(0)) return t.make(Mat<Scalar>::Ones(x.rows(), x.cols()), nullptr);
  Mat<Scalar> y = x.value().array().pow(p).matrix();
  require_finite(y, "pow_elem");
  return t.make(std::move(y), [ix, p](Tape<Scalar>& t, int self) {
    const auto dydx = p * t.value(ix).array().pow(p - Scalar(1));
    t.accumulate(ix, (t.grad(self).array() * dydx).matrix());
  });
}

// Row-wise softmax. When a mask is supplied, masked positions get a large
// negative score before normalization so their weight underflows to zero;
// a fully masked row is an error.
template <class Scalar>
Var<Scalar> softmax_rows(Var<Scalar> x, const Mask* mask = nullptr) {
  require_finite(x.value(), "softmax_rows input");
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols()))
    throw DimensionError("softmax_rows: mask shape " + shape_str(mask->rows(), mask->cols()) +
                         " does not match input " + shape_str(x.rows(), x.cols()));
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  const Mat<Scalar>& scores = x.value();
  Mat<Scalar> y(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Scalar m = std::numeric_limits<Scalar>::lowest();
    for (Eigen::Index j = 0; j < scores.cols(); ++j)
      if (!mask || (*mask)(i, j)) m = std::max(m, scores(i, j));
    if (mask && m == std::numeric_limits<Scalar>::lowest())
      throw MaskError("softmax_rows: query row " + std::to_string(i) + " is fully masked");
    Scalar total = Scalar(0);
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      y(i, j) = (!mask || (*mask)(i, j)) ? std::exp(scores(i, j) - m) : Scalar(0);
      total += y(i, j);
    }
    y.row(i) /= total;
  }
  return t.make(std::move(y), [ix](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    const Mat<Scalar>& y = t.value(self);
    Mat<Scalar> gx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const Scalar dot = g.row(i).dot(y.row(i));
      gx.row(i) = y.row(i).cwiseProduct(g.row(i) - Mat<Scalar>::Constant(1, y.cols(), dot));
    }
    t.accumulate(ix, gx);
  });
}

// Row-wise standardization y = (x - mean) / sqrt(var + eps), biased variance.
template <class Scalar>
Var<Scalar> row_normalize(Var<Scalar> x, Scalar eps) {
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  const Eigen::Index k = x.cols();
  Mat<Scalar> y(x.rows(), k);
  Mat<Scalar> inv_sd(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mu = x.value().row(i).mean();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> c = x.value().row(i).array() - mu;
    const Scalar var = c.square().sum() / Scalar(k);
    const Scalar s = std::sqrt(var + eps);
    inv_sd(i, 0) = Scalar(1) / s;
    y.row(i) = (c / s).matrix();
  }
  return t.make(std::move(y), [ix, inv_sd, k](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    const Mat<Scalar>& y = t.value(self);
    Mat<Scalar> gx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const Scalar gm = g.row(i).mean();
      const Scalar gym = g.row(i).cwiseProduct(y.row(i)).sum() / Scalar(k);
      gx.row(i) = inv_sd(i, 0) * (g.row(i).array() - gm - y.row(i).array() * gym).matrix();
    }
    t.accumulate(ix, gx);
  });
}

// y = x / ||x||_2 per row.
template <class Scalar>
Var<Scalar> l2_normalize_rows(Var<Scalar> x) {
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  Mat<Scalar> y(x.rows(), x.cols());
  Mat<Scalar> inv_norm(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar n = x.value().row(i).norm();
    if (!(n > Scalar(0)))
      throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    inv_norm(i, 0) = Scalar(1) / n;
    y.row(i) = x.value().row(i) * inv_norm(i, 0);
  }
  return t.make(std::move(y), [ix, inv_norm](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    const Mat<Scalar>& y = t.value(self);
    Mat<Scalar> gx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const Scalar dot = g.row(i).dot(y.row(i));
      gx.row(i) = inv_norm(i, 0) * (g.row(i) - dot * y.row(i));
    }
    t.accumulate(ix, gx);
  });
}

template <class Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no operands");
  Tape<Scalar>& t = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    ids.push_back(p.id());
    offsets.push_back(cols);
    cols += p.cols();
  }
  Mat<Scalar> y(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i)
    y.middleCols(offsets[i], parts[i].cols()) = parts[i].value();
  return t.make(std::move(y), [ids, offsets](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Eigen::Index w = t.value(ids[i]).cols();
      t.accumulate(ids[i], g.middleCols(offsets[i], w));
    }
  });
}

template <class Scalar>
Var<Scalar> concat_cols(Var<Scalar> a, Var<Scalar> b) {
  return concat_cols(std::vector<Var<Scalar>>{a, b});
}

template <class Scalar>
Var<Scalar> slice_rows(Var<Scalar> x, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 1 || first + count > x.rows())
    throw DimensionError("slice_rows: range [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") outside " +
                         std::to_string(x.rows()) + " rows");
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  return t.make(x.value().middleRows(first, count),
                [ix, first, count](Tape<Scalar>& t, int self) {
                  Mat<Scalar> gx = Mat<Scalar>::Zero(t.value(ix).rows(), t.value(ix).cols());
                  gx.middleRows(first, count) = t.grad(self);
                  t.accumulate(ix, gx);
                });
}

template <class Scalar>
Var<Scalar> slice_cols(Var<Scalar> x, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 1 || first + count > x.cols())
    throw DimensionError("slice_cols: range [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") outside " +
                         std::to_string(x.cols()) + " cols");
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  return t.make(x.value().middleCols(first, count),
                [ix, first, count](Tape<Scalar>& t, int self) {
                  Mat<Scalar> gx = Mat<Scalar>::Zero(t.value(ix).rows(), t.value(ix).cols());
                  gx.middleCols(first, count) = t.grad(self);
                  t.accumulate(ix, gx);
                });
}

template <class Scalar>
Var<Scalar> pick(Var<Scalar> x, Eigen::Index i, Eigen::Index j) {
  if (i < 0 || i >= x.rows() || j < 0 || j >= x.cols())
    throw std::out_of_range("pick: index (" + std::to_string(i) + "," + std::to_string(j) +
                            ") outside " + shape_str(x.rows(), x.cols()));
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  return t.make(Mat<Scalar>::Constant(1, 1, x.value()(i, j)),
                [ix, i, j](Tape<Scalar>& t, int self) {
                  Mat<Scalar> gx = Mat<Scalar>::Zero(t.value(ix).rows(), t.value(ix).cols());
                  gx(i, j) = t.grad(self)(0, 0);
                  t.accumulate(ix, gx);
                });
}

template <class Scalar>
Var<Scalar> sum_all(Var<Scalar> x) {
  Tape<Scalar>& t = x.tape();
  const int ix = x.id();
  return t.make(Mat<Scalar>::Constant(1, 1, x.value().sum()), [ix](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)(0, 0);
    t.accumulate(ix, Mat<Scalar>::Constant(t.value(ix).rows(), t.value(ix).cols(), g));
  });
}

// Affine map y = x W (+ bias), the workhorse behind every projection.
template <class Scalar>
struct LinearParams {
  Mat<Scalar> W;  // in x out
  Mat<Scalar> b;  // 1 x out; empty means no bias
};

template <class Scalar>
LinearParams<Scalar> init_linear(Eigen::Index in, Eigen::Index out, Rng& rng, bool bias = true) {
  LinearParams<Scalar> p;
  p.W = xavier(in, out, rng).cast<Scalar>();
  if (bias) p.b = Mat<Scalar>::Zero(1, out);
  return p;
}

template <class Scalar>
Var<Scalar> linear(const LinearParams<Scalar>& p, Var<Scalar> x) {
  Tape<Scalar>& t = x.tape();
  Var<Scalar> y = matmul(x, t.param(p.W));
  if (p.b.size() != 0) y = add_rowvec(y, t.param(p.b));
  return y;
}

}  // namespace reltr

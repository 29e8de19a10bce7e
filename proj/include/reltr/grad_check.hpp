#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "reltr/ops.hpp"

namespace reltr {

template <class Scalar>
struct NamedParamT {
  std::string name;
  Mat<Scalar>* mat;
};

using NamedParam = NamedParamT<double>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_entry = -1;
  std::size_t entries_checked = 0;

  bool passes(double tol) const { return max_rel_error <= tol; }
};

// Central-difference verification of reverse-mode gradients, run at 64-bit.
// `forward` must rebuild the graph on the given tape, binding every parameter
// in `params` through tape.param(), and return the scalar loss node.
// Relative error uses max(1, |analytic|, |numeric|) as the denominator.
inline GradCheckReport grad_check(std::span<const NamedParam> params,
                                  const std::function<Var<double>(Tape<double>&)>& forward,
                                  double eps = 1e-5) {
  auto eval = [&]() -> double {
    Tape<double> t;
    Var<double> root = forward(t);
    if (root.rows() != 1 || root.cols() != 1)
      throw DimensionError("grad_check: forward must return a scalar");
    const double v = root.value()(0, 0);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss value");
    return v;
  };

  std::vector<Matd> analytic;
  {
    Tape<double> t;
    Var<double> root = forward(t);
    if (!std::isfinite(root.value()(0, 0)))
      throw NumericError("grad_check: non-finite loss value");
    t.backward(root);
    for (const NamedParam& p : params) {
      const Matd* g = t.grad_of(*p.mat);
      analytic.push_back(g ? *g : Matd::Zero(p.mat->rows(), p.mat->cols()));
    }
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matd& m = *params[pi].mat;
    for (Eigen::Index e = 0; e < m.size(); ++e) {
      const double saved = m.data()[e];
      m.data()[e] = saved + eps;
      const double up = eval();
      m.data()[e] = saved - eps;
      const double down = eval();
      m.data()[e] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi].data()[e];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = params[pi].name;
        report.worst_entry = e;
      }
    }
  }
  return report;
}

}  // namespace reltr

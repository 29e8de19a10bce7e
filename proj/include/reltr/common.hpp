#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace reltr {

// Dense row-major matrix; every tensor in the model is rank <= 2.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matd = Mat<double>;
using Matf = Mat<float>;

// Attention mask: true = position may be attended to.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct MaskError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptySceneError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

inline Matd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sigma = 1.0) {
  std::normal_distribution<double> dist(0.0, sigma);
  Matd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

// Glorot-style init for projection weights.
inline Matd xavier(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return gaussian(fan_in, fan_out, rng, sigma);
}

template <class Scalar>
void require_finite(const Mat<Scalar>& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError(what + ": non-finite entries");
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace reltr

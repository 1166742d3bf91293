#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace introprior {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

/// Raised for any violated precondition (shape mismatch, non-finite input, bad config).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a value that should be finite is NaN/Inf (losses, activations, densities).
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

inline void require_finite(bool cond, const std::string& what) {
  if (!cond) throw NonFiniteLoss(what);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Trainable state is kept at 32-bit precision so checkpoints round-trip exactly.
inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

template <typename Derived>
void round_to_f32(Eigen::MatrixBase<Derived>& m) {
  m = m.unaryExpr([](double v) { return to_f32(v); });
}

inline double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// Block of standard-normal draws laid out as [sample][draw][dim].
struct NoiseBlock {
  int samples = 0;
  int draws = 0;
  int dim = 0;
  std::vector<double> values;

  NoiseBlock() = default;
  NoiseBlock(int n, int t, int d) : samples(n), draws(t), dim(d), values(static_cast<size_t>(n) * t * d, 0.0) {}

  std::span<const double> sample(int s) const {
    return {values.data() + static_cast<size_t>(s) * draws * dim, static_cast<size_t>(draws) * dim};
  }
  std::span<double> sample(int s) {
    return {values.data() + static_cast<size_t>(s) * draws * dim, static_cast<size_t>(draws) * dim};
  }
};

}  // namespace introprior

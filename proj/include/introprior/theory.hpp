#pragma once

// Closed forms from the analysis of the game: mass-vector gradients, the KL
// decomposition into responsibility-weighted unimodal terms, prior-parameter
// gradients, the piecewise optimal ELBO and a brute-force discrete oracle.

#include "introprior/distributions.hpp"

#include <functional>

namespace introprior {

/// Extended real: a finite value or -infinity, never a float sentinel.
class ExtReal {
 public:
  static ExtReal finite(double v);
  static ExtReal neg_inf() { return ExtReal(); }

  bool is_neg_inf() const { return neg_inf_; }
  /// Throws when -inf.
  double value() const;

 private:
  ExtReal() = default;
  bool neg_inf_ = true;
  double v_ = 0.0;
};

/// H(e / sum e).
double mass_entropy(const Vec& e);
/// A(e) = sum_i (e_i / sum e)^(alpha + 1).
double alpha_order(const Vec& e, double alpha);

Vec entropy_mass_gradient(const Vec& e);
Vec alpha_order_gradient(const Vec& e, double alpha);

struct KlDecomposition {
  Vec lhs;  // d/dz [log q(z) - log p(z)], mixture gradient formed from raw densities
  Vec rhs;  // sum_i c_i [ (mu_s - z)/sigma_s^2 - (mu_i - z)/sigma_i^2 ]
};
KlDecomposition kl_latent_gradient_decomposition(const Vec& z, const DiagGaussian& q, const MixtureDensity& m);

struct PriorParamGradients {
  Mat d_mu;     // M x D
  Mat d_sigma;  // M x D, w.r.t. standard deviations
  Vec d_e;      // M, w.r.t. unnormalized masses e_i = total_mass * w_i
};
/// Gradients of -log p(z) w.r.t. the prior's parameters.
PriorParamGradients kl_prior_param_gradients(const Vec& z, const MixtureDensity& m, double total_mass = 1.0);

ExtReal optimal_elbo_piecewise(double p_data, double p_d, double alpha);

struct DiscreteGameInstance {
  Vec p_data;
  Vec p_d;
  double alpha = 2.0;
};

struct OracleSettings {
  double k_max = 100.0;
  double step = 1e-4;
};

/// argmax over the grid k in [0, k_max] of p_data (log p_d - k) - (1/alpha) p_d^(alpha+1) exp(-alpha k).
double discrete_optimal_kl(double p_data, double p_d, double alpha, const OracleSettings& s = {});
double discrete_optimal_q_oracle(const DiscreteGameInstance& g, int outcome, const OracleSettings& s = {});

/// Central difference with one Richardson step.
double richardson_derivative(const std::function<double(double)>& f, double x, double h);
/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(const Vec& a, const Vec& b);

struct TheoryCheck {
  std::string name;
  int instances = 0;
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

std::vector<TheoryCheck> run_verification_suite(double tolerance = 1e-6, std::uint64_t seed = 7);

}  // namespace introprior

#pragma once

// Diagonal Gaussians and Gaussian mixtures over the latent space.
// All densities and divergences are in nats.

#include "introprior/common.hpp"

namespace introprior {

class DiagGaussian {
 public:
  DiagGaussian(Vec mean, Vec log_var);

  static DiagGaussian standard(int dim);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vec& mean() const { return mean_; }
  const Vec& log_var() const { return log_var_; }

 private:
  Vec mean_;
  Vec log_var_;
};

/// p(z) = sum_i exp(log_weights_i) N(z | means_i, diag(exp(log_vars_i))).
class MixtureDensity {
 public:
  MixtureDensity(Mat means, Mat log_vars, Vec log_weights);

  static MixtureDensity standard_normal(int dim);
  static MixtureDensity single(const DiagGaussian& g);

  int modes() const { return static_cast<int>(means_.rows()); }
  int dim() const { return static_cast<int>(means_.cols()); }
  const Mat& means() const { return means_; }
  const Mat& log_vars() const { return log_vars_; }
  const Vec& log_weights() const { return log_weights_; }
  Vec weights() const { return log_weights_.array().exp(); }
  DiagGaussian component(int i) const;

 private:
  Mat means_;
  Mat log_vars_;
  Vec log_weights_;
};

struct ResponsibilityVector {
  Vec values;
  // set when every component log-density was non-finite and a uniform vector was substituted
  bool underflow = false;

  int modes() const { return static_cast<int>(values.size()); }
};

double log_prob_diag(const Eigen::Ref<const Vec>& z, const DiagGaussian& g);

Vec sample_reparam(const DiagGaussian& g, const Eigen::Ref<const Vec>& noise);

double kl_closed(const DiagGaussian& q, const DiagGaussian& p);

double log_prob_mog(const Eigen::Ref<const Vec>& z, const MixtureDensity& m);

/// Whether kl_mc differentiates through the mixture (prior-as-target) or treats it as constant.
enum class TargetGrad { propagate, frozen };

struct KlMcGradient {
  double value = 0.0;
  Vec d_mean;          // D
  Vec d_log_var;       // D
  Mat d_means;         // M x D, zero when target frozen
  Mat d_log_vars;      // M x D
  Vec d_log_weights;   // M
};

/// (1/T) sum_t [log q(z_t) - log p(z_t)], z_t = mean + exp(log_var/2) * noise_t.
/// noise holds T*D standard-normal values, draw-major.
double kl_mc(const DiagGaussian& q, const MixtureDensity& m, int draws, std::span<const double> noise);

KlMcGradient kl_mc_grad(const DiagGaussian& q, const MixtureDensity& m, int draws, std::span<const double> noise,
                        TargetGrad target = TargetGrad::propagate);

ResponsibilityVector responsibilities(const Eigen::Ref<const Vec>& z, const MixtureDensity& m);

/// Rows of zs are latent samples; the result is the mean responsibility vector.
ResponsibilityVector batch_expected_responsibilities(const Mat& zs, const MixtureDensity& m);

/// Shannon entropy in nats with 0 log 0 = 0.
double entropy(const ResponsibilityVector& c);

/// entropy / log M, defined as 0 for a single mode.
double normalized_entropy(const ResponsibilityVector& c);

}  // namespace introprior

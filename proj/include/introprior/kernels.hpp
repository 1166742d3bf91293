#pragma once

// Batched Monte-Carlo KL / responsibility kernels. Every kernel has an OpenMP
// path and a serial path; the *_reference functions are a plain loop over the
// scalar API in distributions.hpp and exist for cross-checking.
//
// Per-sample results land in per-sample slots and mixture gradients are
// reduced in sample order, so serial and parallel runs are bit-identical.

#include "introprior/distributions.hpp"

namespace introprior {

enum class Exec { serial, parallel };

/// Caps the OpenMP team size (INTROPRIOR_THREADS). Returns the cap in effect.
int configure_threads_from_env();

struct PosteriorBatch {
  Mat mean;     // N x D
  Mat log_var;  // N x D

  int size() const { return static_cast<int>(mean.rows()); }
  int dim() const { return static_cast<int>(mean.cols()); }
  DiagGaussian row(int s) const { return DiagGaussian(mean.row(s).transpose(), log_var.row(s).transpose()); }
};

struct BatchKlOptions {
  TargetGrad target = TargetGrad::frozen;
  // weight of sample s in the accumulated mixture gradient; empty means 1 for every sample
  std::span<const double> target_weights;
};

struct BatchKlResult {
  Vec kl;        // N
  Mat d_mean;    // N x D, gradient of kl_s w.r.t. its own posterior
  Mat d_log_var; // N x D
  Mat d_means;   // M x D, sum_s w_s d kl_s / d means (zero if target frozen)
  Mat d_log_vars;
  Vec d_log_weights;
  Vec resp_sum;  // sum over samples of the per-sample mean responsibility (over draws)
  int underflow = 0;
};

BatchKlResult kl_mc_batch(const PosteriorBatch& q, const MixtureDensity& m, const NoiseBlock& noise,
                          const BatchKlOptions& opt, Exec exec = Exec::parallel);

BatchKlResult kl_mc_batch_reference(const PosteriorBatch& q, const MixtureDensity& m, const NoiseBlock& noise,
                                    const BatchKlOptions& opt);

/// Closed-form KL to a single-component density with gradients; same result layout as kl_mc_batch.
BatchKlResult kl_closed_batch(const PosteriorBatch& q, const MixtureDensity& single, const BatchKlOptions& opt);

/// Gradient of  scale * sum_i C_i-weighted responsibility entropy term  w.r.t. each posterior,
/// i.e. d/d(mean, log_var) of  -scale * H(C)  where C is the draw/sample mean of responsibilities
/// computed from the same noise. log_c holds log C_i.
struct PosteriorGrad {
  Mat d_mean;
  Mat d_log_var;
};
PosteriorGrad neg_entropy_latent_grad(const PosteriorBatch& q, const MixtureDensity& m, const NoiseBlock& noise,
                                      const Vec& log_c, double scale, Exec exec = Exec::parallel);

/// Log-density of the mixture at each row of zs.
Vec log_prob_mog_batch(const Mat& zs, const MixtureDensity& m, Exec exec = Exec::parallel);

}  // namespace introprior

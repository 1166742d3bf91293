#pragma once

// The learnable mixture prior (the third player), its soft-clipped export to an
// evaluable density, and the VampPrior used during warm-up.

#include "introprior/distributions.hpp"
#include "introprior/kernels.hpp"
#include "introprior/rng.hpp"

#include <functional>
#include <optional>

namespace introprior {

struct MixturePrior {
  Mat means;          // M x D
  Mat raw_log_vars;   // M x D, before clipping
  Vec energy_logits;  // M, e_i = exp(theta_i)
  Vec clip_lo;        // D
  Vec clip_hi;        // D
  double clip_K = 10.0;
  bool learnable_contributions = true;
  bool learnable_params = true;
  bool clipping_enabled = false;

  int modes() const { return static_cast<int>(means.rows()); }
  int dim() const { return static_cast<int>(means.cols()); }

  /// Fixed N(0, I) prior expressed as a one-component mixture.
  static MixturePrior standard_gaussian(int dim);
  void validate() const;
};

struct VampPseudoInputs {
  Mat pseudo_inputs;  // M x data dim
  Vec energy_logits;  // M
  int modes() const { return static_cast<int>(pseudo_inputs.rows()); }
};

/// log w_i = theta_i - logsumexp(theta).
Vec mixture_weights(const Vec& energy_logits);

/// Pulls a gradient on log-weights back to the logits through the softmax.
Vec mixture_weights_backward(const Vec& log_weights, const Vec& d_log_weights);

double soft_clip(double x, double a, double b, double K);
/// d soft_clip / dx, always in (0, 1).
double soft_clip_deriv(double x, double a, double b, double K);

/// (f(b) - f(a)) / (b - a); depends on K only.
double clip_retention(double K);

/// Smallest K with (1 - rho) K >= log 4 - 2 log(1 + e^-K).
double solve_K(double rho);

MixtureDensity export_density(const MixturePrior& p);

struct PriorGrad {
  Mat d_means;
  Mat d_raw_log_vars;
  Vec d_energy_logits;

  static PriorGrad zeros(int modes, int dim);
  PriorGrad& operator+=(const PriorGrad& o);
};

/// Chain rule through export_density: gradients w.r.t. the exported density -> raw parameters.
PriorGrad export_backward(const MixturePrior& p, const Mat& d_means, const Mat& d_log_vars, const Vec& d_log_weights);

struct PriorSample {
  Mat latents;           // n x D
  std::vector<int> ids;  // n
  Mat noise;             // n x D standard normal used in the reparameterization
};

/// Categorical component index, then reparameterized draw inside that component.
PriorSample sample_prior(const MixtureDensity& m, int n, Engine& eng);

/// Gradient of a loss w.r.t. the exported density's means/log_vars given dL/dlatents of a PriorSample.
void sample_prior_backward(const MixtureDensity& m, const PriorSample& s, const Mat& d_latents, Mat& d_means,
                           Mat& d_log_vars);

using EncodeFn = std::function<PosteriorBatch(const Mat&)>;

/// Mixture of q(z | x_i) over pseudo-inputs, used as the warm-up prior.
MixtureDensity vamp_density(const VampPseudoInputs& v, const EncodeFn& encode);

/// Freezes the encoder posteriors of the pseudo-inputs into a MixturePrior (clip ranges unset).
MixturePrior vamp_to_mog(const VampPseudoInputs& v, const EncodeFn& encode);

/// Column-wise min/max of raw_log_vars; degenerate ranges widened by 1e-3 each side.
/// K comes from solve_K(rho) unless K_override is given.
void init_clip_ranges(MixturePrior& p, double rho, std::optional<double> K_override = std::nullopt);

}  // namespace introprior

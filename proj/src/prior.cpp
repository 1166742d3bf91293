#include "introprior/prior.hpp"

#include <algorithm>
#include <limits>

namespace introprior {

MixturePrior MixturePrior::standard_gaussian(int dim) {
  MixturePrior p;
  p.means = Mat::Zero(1, dim);
  p.raw_log_vars = Mat::Zero(1, dim);
  p.energy_logits = Vec::Zero(1);
  p.clip_lo = Vec::Zero(dim);
  p.clip_hi = Vec::Zero(dim);
  p.learnable_contributions = false;
  p.learnable_params = false;
  p.clipping_enabled = false;
  return p;
}

void MixturePrior::validate() const {
  require(modes() >= 1 && dim() >= 1, "MixturePrior: empty");
  require(raw_log_vars.rows() == means.rows() && raw_log_vars.cols() == means.cols(),
          "MixturePrior: raw_log_vars shape mismatch");
  require(energy_logits.size() == modes(), "MixturePrior: energy_logits length mismatch");
  require(means.allFinite() && raw_log_vars.allFinite() && energy_logits.allFinite(),
          "MixturePrior: non-finite parameter");
  if (clipping_enabled) {
    require(clip_lo.size() == dim() && clip_hi.size() == dim(), "MixturePrior: clip ranges unset");
    require(clip_K > 0, "MixturePrior: clip_K must be positive");
    for (int j = 0; j < dim(); ++j) require(clip_lo[j] < clip_hi[j], "MixturePrior: clip range with a >= b");
  }
}

Vec mixture_weights(const Vec& energy_logits) {
  require(energy_logits.size() >= 1, "mixture_weights: empty");
  require_finite(energy_logits.allFinite(), "mixture_weights: non-finite logit");
  const double mx = energy_logits.maxCoeff();
  const double lse = mx + std::log((energy_logits.array() - mx).exp().sum());
  return energy_logits.array() - lse;
}

Vec mixture_weights_backward(const Vec& log_weights, const Vec& d_log_weights) {
  const Vec w = log_weights.array().exp();
  return d_log_weights - w * d_log_weights.sum();
}

double soft_clip(double x, double a, double b, double K) {
  require(a < b, "soft_clip: need a < b");
  require(K > 0, "soft_clip: need K > 0");
  const double beta = K / (b - a);
  // x + [log(1 + e^{beta(a-x)}) - log(1 + e^{beta(x-b)})] / beta, rewritten around the nearer
  // bound so the saturated tails do not cancel x against itself
  if (x < 0.5 * (a + b)) return a + (softplus(beta * (x - a)) - softplus(beta * (x - b))) / beta;
  return b + (softplus(beta * (a - x)) - softplus(beta * (b - x))) / beta;
}

double soft_clip_deriv(double x, double a, double b, double K) {
  require(a < b, "soft_clip: need a < b");
  const double beta = K / (b - a);
  // 1 - sigmoid(beta(a-x)) - sigmoid(beta(x-b)), same rearrangement as soft_clip
  if (x < 0.5 * (a + b)) return sigmoid(beta * (x - a)) - sigmoid(beta * (x - b));
  return sigmoid(beta * (b - x)) - sigmoid(beta * (a - x));
}

double clip_retention(double K) {
  require(K > 0, "clip_retention: need K > 0");
  return 1.0 - (std::log(4.0) - 2.0 * std::log1p(std::exp(-K))) / K;
}

double solve_K(double rho) {
  require(rho > 0.0 && rho < 1.0, "solve_K: rho must lie in (0, 1)");
  // g(0) = 0, g dips below zero, then grows linearly; we want its positive root.
  auto g = [rho](double K) { return (1.0 - rho) * K - std::log(4.0) + 2.0 * std::log1p(std::exp(-K)); };
  const double grid[] = {1, 2, 5, 10, 20, 50, 100};
  double hi = 0.0;
  double lo = 0.0;
  for (double k : grid) {
    if (g(k) >= 0) {
      hi = k;
      break;
    }
    lo = k;
  }
  if (hi == 0.0) {
    hi = 100.0;
    while (g(hi) < 0) {
      lo = hi;
      hi *= 10.0;
      require(hi < 1e12, "solve_K: rho too close to 1");
    }
  }
  if (lo == 0.0) {
    lo = hi;
    while (g(lo) >= 0) {
      lo *= 0.5;
      require(lo > 1e-12, "solve_K: no root found");
    }
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) >= 0 ? hi : lo) = mid;
  }
  return hi;
}

MixtureDensity export_density(const MixturePrior& p) {
  p.validate();
  Mat lv = p.raw_log_vars;
  if (p.clipping_enabled) {
    for (int i = 0; i < p.modes(); ++i)
      for (int j = 0; j < p.dim(); ++j) lv(i, j) = soft_clip(p.raw_log_vars(i, j), p.clip_lo[j], p.clip_hi[j], p.clip_K);
  }
  return MixtureDensity(p.means, lv, mixture_weights(p.energy_logits));
}

PriorGrad PriorGrad::zeros(int modes, int dim) {
  return PriorGrad{Mat::Zero(modes, dim), Mat::Zero(modes, dim), Vec::Zero(modes)};
}

PriorGrad& PriorGrad::operator+=(const PriorGrad& o) {
  d_means += o.d_means;
  d_raw_log_vars += o.d_raw_log_vars;
  d_energy_logits += o.d_energy_logits;
  return *this;
}

PriorGrad export_backward(const MixturePrior& p, const Mat& d_means, const Mat& d_log_vars, const Vec& d_log_weights) {
  PriorGrad g;
  g.d_means = d_means;
  g.d_raw_log_vars = d_log_vars;
  if (p.clipping_enabled) {
    for (int i = 0; i < p.modes(); ++i)
      for (int j = 0; j < p.dim(); ++j)
        g.d_raw_log_vars(i, j) *= soft_clip_deriv(p.raw_log_vars(i, j), p.clip_lo[j], p.clip_hi[j], p.clip_K);
  }
  g.d_energy_logits = mixture_weights_backward(mixture_weights(p.energy_logits), d_log_weights);
  return g;
}

PriorSample sample_prior(const MixtureDensity& m, int n, Engine& eng) {
  require(n >= 1, "sample_prior: n must be >= 1");
  const Vec w = m.weights();
  std::discrete_distribution<int> pick(w.data(), w.data() + w.size());
  PriorSample s;
  s.ids.resize(n);
  for (int k = 0; k < n; ++k) s.ids[k] = pick(eng);
  s.noise = normal_matrix(eng, n, m.dim());
  s.latents.resize(n, m.dim());
  for (int k = 0; k < n; ++k) {
    const int i = s.ids[k];
    for (int j = 0; j < m.dim(); ++j)
      s.latents(k, j) = m.means()(i, j) + std::exp(0.5 * m.log_vars()(i, j)) * s.noise(k, j);
  }
  return s;
}

void sample_prior_backward(const MixtureDensity& m, const PriorSample& s, const Mat& d_latents, Mat& d_means,
                           Mat& d_log_vars) {
  require(d_latents.rows() == s.latents.rows() && d_latents.cols() == s.latents.cols(),
          "sample_prior_backward: shape mismatch");
  for (int k = 0; k < s.latents.rows(); ++k) {
    const int i = s.ids[k];
    for (int j = 0; j < m.dim(); ++j) {
      d_means(i, j) += d_latents(k, j);
      d_log_vars(i, j) += d_latents(k, j) * 0.5 * std::exp(0.5 * m.log_vars()(i, j)) * s.noise(k, j);
    }
  }
}

MixtureDensity vamp_density(const VampPseudoInputs& v, const EncodeFn& encode) {
  const PosteriorBatch q = encode(v.pseudo_inputs);
  require(q.size() == v.modes(), "vamp_density: encoder returned wrong batch size");
  return MixtureDensity(q.mean, q.log_var, mixture_weights(v.energy_logits));
}

MixturePrior vamp_to_mog(const VampPseudoInputs& v, const EncodeFn& encode) {
  const PosteriorBatch q = encode(v.pseudo_inputs);
  require(q.size() == v.modes(), "vamp_to_mog: encoder returned wrong batch size");
  MixturePrior p;
  p.means = q.mean;
  p.raw_log_vars = q.log_var;
  p.energy_logits = v.energy_logits;
  p.clip_lo = Vec();
  p.clip_hi = Vec();
  p.clipping_enabled = false;
  return p;
}

void init_clip_ranges(MixturePrior& p, double rho, std::optional<double> K_override) {
  require(p.modes() >= 1, "init_clip_ranges: empty prior");
  const int dim = p.dim();
  p.clip_lo.resize(dim);
  p.clip_hi.resize(dim);
  for (int j = 0; j < dim; ++j) {
    double a = p.raw_log_vars.col(j).minCoeff();
    double b = p.raw_log_vars.col(j).maxCoeff();
    if (a == b) {
      a -= 1e-3;
      b += 1e-3;
    }
    p.clip_lo[j] = a;
    p.clip_hi[j] = b;
  }
  p.clip_K = K_override ? *K_override : solve_K(rho);
  require(p.clip_K > 0, "init_clip_ranges: K must be positive");
}

}  // namespace introprior

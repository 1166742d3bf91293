#include "introprior/distributions.hpp"

#include <algorithm>
#include <limits>

namespace introprior {

DiagGaussian::DiagGaussian(Vec mean, Vec log_var) : mean_(std::move(mean)), log_var_(std::move(log_var)) {
  require(mean_.size() >= 1, "DiagGaussian: dimension must be >= 1");
  require(mean_.size() == log_var_.size(), "DiagGaussian: mean and log_var lengths differ");
  require_finite(mean_.allFinite() && log_var_.allFinite(), "DiagGaussian: non-finite parameter");
}

DiagGaussian DiagGaussian::standard(int dim) { return DiagGaussian(Vec::Zero(dim), Vec::Zero(dim)); }

MixtureDensity::MixtureDensity(Mat means, Mat log_vars, Vec log_weights)
    : means_(std::move(means)), log_vars_(std::move(log_vars)), log_weights_(std::move(log_weights)) {
  require(means_.rows() >= 1 && means_.cols() >= 1, "MixtureDensity: need at least one mode and one dimension");
  require(means_.rows() == log_vars_.rows() && means_.cols() == log_vars_.cols(),
          "MixtureDensity: means and log_vars shapes differ");
  require(log_weights_.size() == means_.rows(), "MixtureDensity: log_weights length != modes");
  require_finite(means_.allFinite() && log_vars_.allFinite(), "MixtureDensity: non-finite component parameter");
  require(!log_weights_.array().isNaN().any() && !(log_weights_.array() == std::numeric_limits<double>::infinity()).any(),
          "MixtureDensity: invalid log weight");
  const double total = log_weights_.array().exp().sum();
  require(std::abs(total - 1.0) <= 1e-9, "MixtureDensity: weights do not sum to 1");
}

MixtureDensity MixtureDensity::standard_normal(int dim) {
  return MixtureDensity(Mat::Zero(1, dim), Mat::Zero(1, dim), Vec::Zero(1));
}

MixtureDensity MixtureDensity::single(const DiagGaussian& g) {
  return MixtureDensity(g.mean().transpose(), g.log_var().transpose(), Vec::Zero(1));
}

DiagGaussian MixtureDensity::component(int i) const {
  return DiagGaussian(means_.row(i).transpose(), log_vars_.row(i).transpose());
}

double log_prob_diag(const Eigen::Ref<const Vec>& z, const DiagGaussian& g) {
  require(z.size() == g.dim(), "log_prob_diag: dimension mismatch");
  require_finite(z.allFinite(), "log_prob_diag: non-finite latent");
  double acc = 0.0;
  for (int j = 0; j < g.dim(); ++j) {
    const double diff = z[j] - g.mean()[j];
    acc += -0.5 * kLog2Pi - 0.5 * g.log_var()[j] - 0.5 * diff * diff * std::exp(-g.log_var()[j]);
  }
  return acc;
}

Vec sample_reparam(const DiagGaussian& g, const Eigen::Ref<const Vec>& noise) {
  require(noise.size() == g.dim(), "sample_reparam: dimension mismatch");
  return g.mean().array() + (0.5 * g.log_var().array()).exp() * noise.array();
}

double kl_closed(const DiagGaussian& q, const DiagGaussian& p) {
  require(q.dim() == p.dim(), "kl_closed: dimension mismatch");
  double acc = 0.0;
  for (int j = 0; j < q.dim(); ++j) {
    const double lq = q.log_var()[j];
    const double lp = p.log_var()[j];
    const double diff = q.mean()[j] - p.mean()[j];
    acc += 0.5 * (std::exp(lq - lp) + diff * diff * std::exp(-lp) - 1.0 + lp - lq);
  }
  return acc;
}

namespace {

// log of w_i N(z | mu_i, sigma_i^2) for every component, written into out.
void component_log_terms(const Eigen::Ref<const Vec>& z, const MixtureDensity& m, Vec& out) {
  const int modes = m.modes();
  const int dim = m.dim();
  out.resize(modes);
  for (int i = 0; i < modes; ++i) {
    double acc = m.log_weights()[i];
    for (int j = 0; j < dim; ++j) {
      const double lv = m.log_vars()(i, j);
      const double diff = z[j] - m.means()(i, j);
      acc += -0.5 * kLog2Pi - 0.5 * lv - 0.5 * diff * diff * std::exp(-lv);
    }
    out[i] = acc;
  }
}

double log_sum_exp(const Vec& terms) {
  const double mx = terms.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((terms.array() - mx).exp().sum());
}

}  // namespace

double log_prob_mog(const Eigen::Ref<const Vec>& z, const MixtureDensity& m) {
  require(z.size() == m.dim(), "log_prob_mog: dimension mismatch");
  require_finite(z.allFinite(), "log_prob_mog: non-finite latent");
  Vec terms;
  component_log_terms(z, m, terms);
  return log_sum_exp(terms);
}

double kl_mc(const DiagGaussian& q, const MixtureDensity& m, int draws, std::span<const double> noise) {
  require(draws >= 1, "kl_mc: need at least one draw");
  require(q.dim() == m.dim(), "kl_mc: dimension mismatch");
  const int dim = q.dim();
  require(noise.size() == static_cast<size_t>(draws) * dim, "kl_mc: noise block has wrong size");
  double acc = 0.0;
  for (int t = 0; t < draws; ++t) {
    const Eigen::Map<const Vec> eps(noise.data() + static_cast<size_t>(t) * dim, dim);
    const Vec z = sample_reparam(q, eps);
    acc += log_prob_diag(z, q) - log_prob_mog(z, m);
  }
  return acc / draws;
}

KlMcGradient kl_mc_grad(const DiagGaussian& q, const MixtureDensity& m, int draws, std::span<const double> noise,
                        TargetGrad target) {
  require(draws >= 1, "kl_mc: need at least one draw");
  require(q.dim() == m.dim(), "kl_mc: dimension mismatch");
  const int dim = q.dim();
  const int modes = m.modes();
  require(noise.size() == static_cast<size_t>(draws) * dim, "kl_mc: noise block has wrong size");

  KlMcGradient g;
  g.d_mean = Vec::Zero(dim);
  g.d_log_var = Vec::Zero(dim);
  g.d_means = Mat::Zero(modes, dim);
  g.d_log_vars = Mat::Zero(modes, dim);
  g.d_log_weights = Vec::Zero(modes);

  const Vec sigma = (0.5 * q.log_var().array()).exp();
  const Mat inv_var = (-m.log_vars().array()).exp();
  Vec terms;
  Vec grad_z(dim);
  const double inv_t = 1.0 / draws;
  for (int t = 0; t < draws; ++t) {
    const Eigen::Map<const Vec> eps(noise.data() + static_cast<size_t>(t) * dim, dim);
    const Vec z = q.mean().array() + sigma.array() * eps.array();
    component_log_terms(z, m, terms);
    const double log_p = log_sum_exp(terms);
    double log_q = 0.0;
    for (int j = 0; j < dim; ++j) log_q += -0.5 * kLog2Pi - 0.5 * q.log_var()[j] - 0.5 * eps[j] * eps[j];
    g.value += (log_q - log_p) * inv_t;

    // -grad_z log p = sum_i c_i (z - mu_i) / sigma_i^2
    grad_z.setZero();
    for (int i = 0; i < modes; ++i) {
      const double c = std::exp(terms[i] - log_p);
      if (c == 0.0) continue;
      for (int j = 0; j < dim; ++j) {
        const double diff = z[j] - m.means()(i, j);
        grad_z[j] += c * diff * inv_var(i, j);
        if (target == TargetGrad::propagate) {
          g.d_means(i, j) += -c * diff * inv_var(i, j) * inv_t;
          g.d_log_vars(i, j) += -c * 0.5 * (diff * diff * inv_var(i, j) - 1.0) * inv_t;
        }
      }
      if (target == TargetGrad::propagate) g.d_log_weights[i] += -c * inv_t;
    }
    // d log q(z(mu, lv); mu, lv) / d mu = 0 and / d lv_j = -1/2 along the reparameterized path
    for (int j = 0; j < dim; ++j) {
      g.d_mean[j] += grad_z[j] * inv_t;
      g.d_log_var[j] += (grad_z[j] * 0.5 * sigma[j] * eps[j] - 0.5) * inv_t;
    }
  }
  return g;
}

ResponsibilityVector responsibilities(const Eigen::Ref<const Vec>& z, const MixtureDensity& m) {
  require(z.size() == m.dim(), "responsibilities: dimension mismatch");
  Vec terms;
  component_log_terms(z, m, terms);
  ResponsibilityVector r;
  const double mx = terms.maxCoeff();
  if (!std::isfinite(mx)) {
    r.values = Vec::Constant(m.modes(), 1.0 / m.modes());
    r.underflow = true;
    return r;
  }
  r.values = (terms.array() - mx).exp();
  r.values /= r.values.sum();
  return r;
}

ResponsibilityVector batch_expected_responsibilities(const Mat& zs, const MixtureDensity& m) {
  require(zs.rows() >= 1, "batch_expected_responsibilities: empty batch");
  require(zs.cols() == m.dim(), "batch_expected_responsibilities: dimension mismatch");
  ResponsibilityVector out;
  out.values = Vec::Zero(m.modes());
  for (int s = 0; s < zs.rows(); ++s) {
    const ResponsibilityVector r = responsibilities(zs.row(s).transpose(), m);
    out.values += r.values;
    out.underflow = out.underflow || r.underflow;
  }
  out.values /= static_cast<double>(zs.rows());
  return out;
}

double entropy(const ResponsibilityVector& c) {
  double h = 0.0;
  for (int i = 0; i < c.modes(); ++i) {
    const double v = c.values[i];
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double normalized_entropy(const ResponsibilityVector& c) {
  if (c.modes() <= 1) return 0.0;
  return std::clamp(entropy(c) / std::log(static_cast<double>(c.modes())), 0.0, 1.0);
}

}  // namespace introprior

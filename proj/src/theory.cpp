#include "introprior/theory.hpp"

#include "introprior/prior.hpp"
#include "introprior/rng.hpp"

#include <algorithm>
#include <limits>

namespace introprior {

ExtReal ExtReal::finite(double v) {
  require(std::isfinite(v), "ExtReal::finite: value is not finite");
  ExtReal r;
  r.neg_inf_ = false;
  r.v_ = v;
  return r;
}

double ExtReal::value() const {
  if (neg_inf_) throw Error("ExtReal: value() on -inf");
  return v_;
}

namespace {

void check_masses(const Vec& e) {
  require(e.size() >= 1, "mass vector is empty");
  require((e.array() > 0).all() && e.allFinite(), "masses must be positive and finite");
}

}  // namespace

double mass_entropy(const Vec& e) {
  check_masses(e);
  const double s = e.sum();
  double h = 0.0;
  for (int i = 0; i < e.size(); ++i) h -= (e[i] / s) * std::log(e[i] / s);
  return h;
}

double alpha_order(const Vec& e, double alpha) {
  check_masses(e);
  require(alpha >= 1.0, "alpha must be >= 1");
  const double s = e.sum();
  return (e.array() / s).pow(alpha + 1.0).sum();
}

Vec entropy_mass_gradient(const Vec& e) {
  check_masses(e);
  const double s = e.sum();
  const Vec log_e = e.array().log();
  const double mean_log = (e.array() / s * log_e.array()).sum();
  return (mean_log - log_e.array()) / s;
}

Vec alpha_order_gradient(const Vec& e, double alpha) {
  check_masses(e);
  require(alpha >= 1.0, "alpha must be >= 1");
  const double s = e.sum();
  const Vec e_a = e.array().pow(alpha);
  const double mean_a = (e.array() / s * e_a.array()).sum();
  return (alpha + 1.0) / std::pow(s, alpha + 1.0) * (e_a.array() - mean_a);
}

KlDecomposition kl_latent_gradient_decomposition(const Vec& z, const DiagGaussian& q, const MixtureDensity& m) {
  require(z.size() == q.dim() && q.dim() == m.dim(), "kl_latent_gradient_decomposition: dimension mismatch");
  const int d = q.dim();
  const Vec inv_q = (-q.log_var().array()).exp();
  const Vec grad_log_q = -(z - q.mean()).cwiseProduct(inv_q);

  // direct density space: grad log p = (sum_i w_i grad N_i) / (sum_i w_i N_i)
  double p = 0.0;
  Vec grad_p = Vec::Zero(d);
  for (int i = 0; i < m.modes(); ++i) {
    const DiagGaussian c = m.component(i);
    const double wn = std::exp(m.log_weights()[i]) * std::exp(log_prob_diag(z, c));
    p += wn;
    grad_p += wn * (-(z - c.mean()).cwiseProduct((-c.log_var().array()).exp().matrix()));
  }
  require(p > 0.0, "kl_latent_gradient_decomposition: mixture density underflows at z");
  KlDecomposition out;
  out.lhs = grad_log_q - grad_p / p;

  const ResponsibilityVector c = responsibilities(z, m);
  out.rhs = Vec::Zero(d);
  for (int i = 0; i < m.modes(); ++i) {
    const Vec inv_i = (-m.log_vars().row(i).transpose().array()).exp();
    const Vec unimodal = (q.mean() - z).cwiseProduct(inv_q) - (m.means().row(i).transpose() - z).cwiseProduct(inv_i);
    out.rhs += c.values[i] * unimodal;
  }
  return out;
}

PriorParamGradients kl_prior_param_gradients(const Vec& z, const MixtureDensity& m, double total_mass) {
  require(z.size() == m.dim(), "kl_prior_param_gradients: dimension mismatch");
  require(total_mass > 0, "kl_prior_param_gradients: total mass must be positive");
  const int modes = m.modes();
  const int d = m.dim();
  const ResponsibilityVector c = responsibilities(z, m);
  PriorParamGradients g{Mat(modes, d), Mat(modes, d), Vec(modes)};
  Vec dens(modes);
  for (int i = 0; i < modes; ++i) {
    const DiagGaussian comp = m.component(i);
    dens[i] = std::exp(log_prob_diag(z, comp));
    for (int j = 0; j < d; ++j) {
      const double var = std::exp(comp.log_var()[j]);
      const double sd = std::sqrt(var);
      const double diff = z[j] - comp.mean()[j];
      g.d_mu(i, j) = -c.values[i] * diff / var;
      g.d_sigma(i, j) = -c.values[i] * (diff * diff - var) / (var * sd);
    }
  }
  const Vec w = m.weights();
  const double mix = w.dot(dens);
  const double unnorm = total_mass * mix;
  require(unnorm > 0.0, "kl_prior_param_gradients: mixture density underflows at z");
  for (int i = 0; i < modes; ++i) g.d_e[i] = (mix - dens[i]) / unnorm;
  return g;
}

ExtReal optimal_elbo_piecewise(double p_data, double p_d, double alpha) {
  require(p_data >= 0 && p_d >= 0, "optimal_elbo_piecewise: densities must be non-negative");
  require(p_data > 0 || p_d > 0, "optimal_elbo_piecewise: both densities zero (outside the support)");
  require(alpha >= 1.0, "optimal_elbo_piecewise: alpha must be >= 1");
  if (p_data == 0.0) return ExtReal::neg_inf();
  if (std::pow(p_d, alpha + 1.0) > p_data) return ExtReal::finite(std::log(p_data / p_d) / alpha);
  return ExtReal::finite(std::log(p_d));
}

double discrete_optimal_kl(double p_data, double p_d, double alpha, const OracleSettings& s) {
  require(p_data >= 0 && p_d > 0, "discrete_optimal_kl: need p_data >= 0 and p_d > 0");
  require(s.step > 0 && s.k_max > 0, "discrete_optimal_kl: bad grid");
  const long n = static_cast<long>(std::llround(s.k_max / s.step));
  const double c = std::pow(p_d, alpha + 1.0) / alpha;
  const double log_pd = std::log(p_d);
  double best = -std::numeric_limits<double>::infinity();
  long best_k = 0;
#pragma omp parallel
  {
    double lb = -std::numeric_limits<double>::infinity();
    long lk = 0;
#pragma omp for schedule(static) nowait
    for (long k = 0; k <= n; ++k) {
      const double kl = k * s.step;
      const double g = p_data * (log_pd - kl) - c * std::exp(-alpha * kl);
      if (g > lb) {
        lb = g;
        lk = k;
      }
    }
#pragma omp critical
    {
      if (lb > best || (lb == best && lk < best_k)) {
        best = lb;
        best_k = lk;
      }
    }
  }
  return best_k * s.step;
}

double discrete_optimal_q_oracle(const DiscreteGameInstance& g, int outcome, const OracleSettings& s) {
  require(g.p_data.size() == g.p_d.size() && g.p_data.size() >= 1, "discrete game: size mismatch");
  require(std::abs(g.p_data.sum() - 1.0) <= 1e-9 && std::abs(g.p_d.sum() - 1.0) <= 1e-9,
          "discrete game: distributions must sum to 1");
  require(outcome >= 0 && outcome < g.p_data.size(), "discrete game: outcome out of range");
  return discrete_optimal_kl(g.p_data[outcome], g.p_d[outcome], g.alpha, s);
}

double richardson_derivative(const std::function<double(double)>& f, double x, double h) {
  const double d1 = (f(x + h) - f(x - h)) / (2.0 * h);
  const double d2 = (f(x + 0.5 * h) - f(x - 0.5 * h)) / h;
  return (4.0 * d2 - d1) / 3.0;
}

double relative_error(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "relative_error: size mismatch");
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

namespace {

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  for (int k = 0; k < x.size(); ++k) {
    g[k] = richardson_derivative(
        [&](double v) {
          Vec y = x;
          y[k] = v;
          return f(y);
        },
        x[k], h);
  }
  return g;
}

double uniform(Engine& eng, double lo, double hi) { return lo + (hi - lo) * uniform01(eng); }

Vec random_masses(Engine& eng, int n) {
  Vec e(n);
  for (int i = 0; i < n; ++i) e[i] = uniform(eng, 0.2, 3.0);
  return e;
}

MixtureDensity random_mixture(Engine& eng, int modes, int dim) {
  Mat mu(modes, dim), lv(modes, dim);
  for (int i = 0; i < modes; ++i)
    for (int j = 0; j < dim; ++j) {
      mu(i, j) = uniform(eng, -1.5, 1.5);
      lv(i, j) = uniform(eng, -1.0, 0.5);
    }
  Vec logits(modes);
  for (int i = 0; i < modes; ++i) logits[i] = uniform(eng, -1.0, 1.0);
  return MixtureDensity(mu, lv, mixture_weights(logits));
}

// -log sum_i (e_i / S) prod_j N(z_j | mu_ij, sd_ij^2), written out with raw densities
double neg_log_mixture(const Vec& z, const Mat& mu, const Mat& sd, const Vec& e) {
  const double s = e.sum();
  double p = 0.0;
  for (int i = 0; i < mu.rows(); ++i) {
    double dens = 1.0;
    for (int j = 0; j < mu.cols(); ++j) {
      const double u = (z[j] - mu(i, j)) / sd(i, j);
      dens *= std::exp(-0.5 * u * u) / (sd(i, j) * std::sqrt(2.0 * std::numbers::pi));
    }
    p += e[i] / s * dens;
  }
  return -std::log(p);
}

Vec flatten(const Mat& m) {
  Vec v(m.size());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
  return v;
}

Mat unflatten(const Vec& v, int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[i * cols + j];
  return m;
}

}  // namespace

std::vector<TheoryCheck> run_verification_suite(double tolerance, std::uint64_t seed) {
  require(tolerance > 0, "verification tolerance must be positive");
  Engine eng = make_engine(seed, Stream::probe);
  std::vector<TheoryCheck> out;
  constexpr int kInstances = 60;
  constexpr double kStep = 1e-3;

  auto finish = [&](TheoryCheck c) {
    c.passed = c.worst <= c.tolerance;
    out.push_back(c);
  };

  {
    TheoryCheck c{"entropy_mass_gradient vs finite differences", kInstances, 0.0, tolerance};
    for (int k = 0; k < kInstances; ++k) {
      const Vec e = random_masses(eng, 2 + k % 7);
      const Vec fd = fd_gradient([](const Vec& v) { return mass_entropy(v); }, e, kStep);
      c.worst = std::max(c.worst, relative_error(entropy_mass_gradient(e), fd));
    }
    finish(c);
  }
  {
    TheoryCheck c{"alpha_order_gradient vs finite differences", kInstances, 0.0, tolerance};
    for (int k = 0; k < kInstances; ++k) {
      const Vec e = random_masses(eng, 2 + k % 7);
      const double alpha = uniform(eng, 1.0, 4.0);
      const Vec fd = fd_gradient([alpha](const Vec& v) { return alpha_order(v, alpha); }, e, kStep);
      c.worst = std::max(c.worst, relative_error(alpha_order_gradient(e, alpha), fd));
    }
    finish(c);
  }
  {
    TheoryCheck c{"KL latent gradient: decomposition identity", kInstances, 0.0, 1e-10};
    TheoryCheck f{"KL latent gradient vs finite differences", kInstances, 0.0, tolerance};
    for (int k = 0; k < kInstances; ++k) {
      const int dim = 1 + k % 3;
      const MixtureDensity m = random_mixture(eng, 1 + k % 4, dim);
      Vec mu(dim), lv(dim), z(dim);
      for (int j = 0; j < dim; ++j) {
        mu[j] = uniform(eng, -1, 1);
        lv[j] = uniform(eng, -1, 0.5);
        z[j] = uniform(eng, -1.5, 1.5);
      }
      const DiagGaussian q(mu, lv);
      const KlDecomposition dec = kl_latent_gradient_decomposition(z, q, m);
      c.worst = std::max(c.worst, relative_error(dec.lhs, dec.rhs));
      const Vec fd =
          fd_gradient([&](const Vec& v) { return log_prob_diag(v, q) - log_prob_mog(v, m); }, z, kStep);
      f.worst = std::max(f.worst, relative_error(dec.lhs, fd));
    }
    finish(c);
    finish(f);
  }
  {
    TheoryCheck cm{"prior mean gradient vs finite differences", kInstances, 0.0, tolerance};
    TheoryCheck cs{"prior sigma gradient vs finite differences", kInstances, 0.0, tolerance};
    TheoryCheck ce{"prior mass gradient vs finite differences", kInstances, 0.0, tolerance};
    for (int k = 0; k < kInstances; ++k) {
      const int dim = 1 + k % 3;
      const int modes = 1 + k % 4;
      const double total = uniform(eng, 0.5, 4.0);
      const MixtureDensity m = random_mixture(eng, modes, dim);
      Vec z(dim);
      for (int j = 0; j < dim; ++j) z[j] = uniform(eng, -1.5, 1.5);
      const PriorParamGradients g = kl_prior_param_gradients(z, m, total);
      const Mat mu = m.means();
      const Mat sd = (0.5 * m.log_vars().array()).exp();
      const Vec e = total * m.weights();
      const Vec fd_mu = fd_gradient(
          [&](const Vec& v) { return neg_log_mixture(z, unflatten(v, modes, dim), sd, e); }, flatten(mu), kStep);
      const Vec fd_sd = fd_gradient(
          [&](const Vec& v) { return neg_log_mixture(z, mu, unflatten(v, modes, dim), e); }, flatten(sd), kStep);
      const Vec fd_e = fd_gradient([&](const Vec& v) { return neg_log_mixture(z, mu, sd, v); }, e, kStep);
      cm.worst = std::max(cm.worst, relative_error(flatten(g.d_mu), fd_mu));
      cs.worst = std::max(cs.worst, relative_error(flatten(g.d_sigma), fd_sd));
      // single-mode mixtures have an identically zero mass gradient
      ce.worst = std::max(ce.worst, modes == 1 ? g.d_e.norm() + fd_e.norm() : relative_error(g.d_e, fd_e));
    }
    finish(cm);
    finish(cs);
    finish(ce);
  }
  {
    const OracleSettings s;
    TheoryCheck c{"optimal ELBO piecewise vs discrete oracle", 1000, 0.0, s.step * (1.0 + 1e-6)};
    std::vector<double> alphas = {1.0, 2.0, 4.0};
    for (int k = 0; k < c.instances; ++k) {
      const double alpha = k % 4 == 3 ? uniform(eng, 1.0, 4.0) : alphas[k % 3];
      const double p_d = uniform(eng, 0.05, 1.0);
      const double p_data = k % 10 == 0 ? 0.0 : uniform(eng, 0.0, 1.0);
      const ExtReal w = optimal_elbo_piecewise(p_data, p_d, alpha);
      const double kstar = discrete_optimal_kl(p_data, p_d, alpha, s);
      double err;
      if (w.is_neg_inf())
        err = kstar == s.k_max ? 0.0 : std::numeric_limits<double>::infinity();
      else
        err = std::abs((std::log(p_d) - kstar) - w.value());
      c.worst = std::max(c.worst, err);
    }
    finish(c);
  }
  {
    TheoryCheck c{"optimal ELBO continuity at the branch boundary", 300, 0.0, 1e-9};
    const double alphas[] = {1.0, 2.0, 4.0};
    for (int k = 0; k < c.instances; ++k) {
      const double alpha = alphas[k % 3];
      const double p_d = uniform(eng, 0.01, 0.99);
      const double edge = std::pow(p_d, alpha + 1.0);
      const double lo = optimal_elbo_piecewise(edge * (1.0 - 1e-12), p_d, alpha).value();
      const double at = optimal_elbo_piecewise(edge, p_d, alpha).value();
      c.worst = std::max(c.worst, std::max(std::abs(lo - at), std::abs(at - std::log(p_d))));
    }
    finish(c);
  }
  {
    // worst shortfall of the retained range below rho
    TheoryCheck c{"soft-clip range retention >= 0.85 at K = 10", 0, 0.0, 0.0};
    std::vector<std::pair<double, double>> ranges = {{-1, 1}, {-5, 2}, {0, 0.1}};
    for (int k = 0; k < 100; ++k) {
      const double a = uniform(eng, -10, 5);
      ranges.push_back({a, a + uniform(eng, 1e-3, 10)});
    }
    for (auto [a, b] : ranges) {
      const double kept = (soft_clip(b, a, b, 10.0) - soft_clip(a, a, b, 10.0)) / (b - a);
      c.worst = std::max(c.worst, 0.85 - kept);
      ++c.instances;
    }
    c.tolerance = 0.0;
    c.passed = c.worst <= 0.0;
    out.push_back(c);
  }
  return out;
}

}  // namespace introprior

#include "introprior/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <string>

namespace introprior {

int configure_threads_from_env() {
  int cap = omp_get_max_threads();
  if (const char* env = std::getenv("INTROPRIOR_THREADS")) {
    try {
      const int requested = std::stoi(env);
      if (requested >= 1) cap = std::min(cap, requested);
    } catch (const std::exception&) {
      throw Error(std::string("INTROPRIOR_THREADS is not an integer: ") + env);
    }
  }
  omp_set_num_threads(cap);
  return cap;
}

namespace {

// Flattened, row-major copy of the mixture for the inner loops.
struct MixtureCache {
  int modes = 0;
  int dim = 0;
  std::vector<double> means;
  std::vector<double> inv_var;
  std::vector<double> log_const;  // log w_i - D/2 log 2pi - 1/2 sum_j lv_ij

  explicit MixtureCache(const MixtureDensity& m) : modes(m.modes()), dim(m.dim()) {
    means.resize(static_cast<size_t>(modes) * dim);
    inv_var.resize(means.size());
    log_const.resize(modes);
    for (int i = 0; i < modes; ++i) {
      double c = m.log_weights()[i] - 0.5 * dim * kLog2Pi;
      for (int j = 0; j < dim; ++j) {
        means[i * dim + j] = m.means()(i, j);
        inv_var[i * dim + j] = std::exp(-m.log_vars()(i, j));
        c -= 0.5 * m.log_vars()(i, j);
      }
      log_const[i] = c;
    }
  }

  // Fills terms[i] = log w_i N_i(z) and returns log p(z).
  double log_terms(const double* z, double* terms) const {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < modes; ++i) {
      double q = 0.0;
      const double* mu = &means[i * dim];
      const double* iv = &inv_var[i * dim];
      for (int j = 0; j < dim; ++j) {
        const double d = z[j] - mu[j];
        q += d * d * iv[j];
      }
      terms[i] = log_const[i] - 0.5 * q;
      mx = std::max(mx, terms[i]);
    }
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (int i = 0; i < modes; ++i) acc += std::exp(terms[i] - mx);
    return mx + std::log(acc);
  }
};

struct SampleScratch {
  std::vector<double> terms, z, grad_z;
  explicit SampleScratch(int modes, int dim) : terms(modes), z(dim), grad_z(dim) {}
};

// Per-sample body of kl_mc_batch. mix_grad (size 2*M*D + M) receives the
// unweighted mixture gradient of this sample when non-null.
void kl_sample(const MixtureCache& mc, const double* mean, const double* log_var, const double* eps, int draws,
               double* kl_out, double* d_mean, double* d_log_var, double* mix_grad, double* resp, int* underflow,
               SampleScratch& sc) {
  const int dim = mc.dim;
  const int modes = mc.modes;
  const double inv_t = 1.0 / draws;
  double kl = 0.0;
  double log_q_const = 0.0;
  for (int j = 0; j < dim; ++j) {
    d_mean[j] = 0.0;
    d_log_var[j] = 0.0;
    log_q_const += -0.5 * kLog2Pi - 0.5 * log_var[j];
  }
  for (int t = 0; t < draws; ++t) {
    const double* e = eps + static_cast<size_t>(t) * dim;
    double log_q = log_q_const;
    for (int j = 0; j < dim; ++j) {
      sc.z[j] = mean[j] + std::exp(0.5 * log_var[j]) * e[j];
      log_q -= 0.5 * e[j] * e[j];
      sc.grad_z[j] = 0.0;
    }
    const double log_p = mc.log_terms(sc.z.data(), sc.terms.data());
    kl += (log_q - log_p) * inv_t;
    if (!std::isfinite(log_p)) {
      ++*underflow;
      continue;
    }
    for (int i = 0; i < modes; ++i) {
      const double c = std::exp(sc.terms[i] - log_p);
      if (c == 0.0) continue;
      const double* mu = &mc.means[i * dim];
      const double* iv = &mc.inv_var[i * dim];
      for (int j = 0; j < dim; ++j) {
        const double diff = sc.z[j] - mu[j];
        sc.grad_z[j] += c * diff * iv[j];
        if (mix_grad) {
          mix_grad[i * dim + j] += -c * diff * iv[j] * inv_t;
          mix_grad[modes * dim + i * dim + j] += -c * 0.5 * (diff * diff * iv[j] - 1.0) * inv_t;
        }
      }
      if (mix_grad) mix_grad[2 * modes * dim + i] += -c * inv_t;
      if (resp) resp[i] += c * inv_t;
    }
    for (int j = 0; j < dim; ++j) {
      d_mean[j] += sc.grad_z[j] * inv_t;
      d_log_var[j] += (sc.grad_z[j] * 0.5 * std::exp(0.5 * log_var[j]) * e[j] - 0.5) * inv_t;
    }
  }
  *kl_out = kl;
}

void check_batch(const PosteriorBatch& q, const MixtureDensity& m, const NoiseBlock& noise) {
  require(q.size() >= 1, "kl batch: empty posterior batch");
  require(q.mean.rows() == q.log_var.rows() && q.mean.cols() == q.log_var.cols(), "kl batch: posterior shape mismatch");
  require(q.dim() == m.dim(), "kl batch: dimension mismatch");
  require(noise.samples == q.size() && noise.dim == q.dim() && noise.draws >= 1, "kl batch: noise block shape mismatch");
}

double target_weight(const BatchKlOptions& opt, int s) {
  return opt.target_weights.empty() ? 1.0 : opt.target_weights[s];
}

}  // namespace

BatchKlResult kl_mc_batch(const PosteriorBatch& q, const MixtureDensity& m, const NoiseBlock& noise,
                          const BatchKlOptions& opt, Exec exec) {
  check_batch(q, m, noise);
  const int n = q.size();
  const int dim = q.dim();
  const int modes = m.modes();
  const bool want_mix = opt.target == TargetGrad::propagate;
  require(opt.target_weights.empty() || static_cast<int>(opt.target_weights.size()) == n,
          "kl batch: target_weights length mismatch");

  const MixtureCache mc(m);
  // Row-major scratch so each sample owns a contiguous slice.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat mean = q.mean;
  const RowMat log_var = q.log_var;
  RowMat d_mean(n, dim), d_log_var(n, dim);
  const int mix_len = 2 * modes * dim + modes;
  RowMat mix = want_mix ? RowMat::Zero(n, mix_len) : RowMat();
  RowMat resp = RowMat::Zero(n, modes);
  Vec kl(n);
  std::vector<int> underflow(n, 0);

  auto body = [&](SampleScratch& sc, int s) {
    kl_sample(mc, mean.row(s).data(), log_var.row(s).data(), noise.sample(s).data(), noise.draws, &kl[s],
              d_mean.row(s).data(), d_log_var.row(s).data(), want_mix ? mix.row(s).data() : nullptr,
              resp.row(s).data(), &underflow[s], sc);
  };

  if (exec == Exec::parallel) {
#pragma omp parallel
    {
      SampleScratch sc(modes, dim);
#pragma omp for schedule(static)
      for (int s = 0; s < n; ++s) body(sc, s);
    }
  } else {
    SampleScratch sc(modes, dim);
    for (int s = 0; s < n; ++s) body(sc, s);
  }

  BatchKlResult r;
  r.kl = std::move(kl);
  r.d_mean = d_mean;
  r.d_log_var = d_log_var;
  r.d_means = Mat::Zero(modes, dim);
  r.d_log_vars = Mat::Zero(modes, dim);
  r.d_log_weights = Vec::Zero(modes);
  r.resp_sum = Vec::Zero(modes);
  for (int s = 0; s < n; ++s) {
    r.underflow += underflow[s];
    r.resp_sum += resp.row(s).transpose();
    if (!want_mix) continue;
    const double w = target_weight(opt, s);
    for (int i = 0; i < modes; ++i) {
      for (int j = 0; j < dim; ++j) {
        r.d_means(i, j) += w * mix(s, i * dim + j);
        r.d_log_vars(i, j) += w * mix(s, modes * dim + i * dim + j);
      }
      r.d_log_weights[i] += w * mix(s, 2 * modes * dim + i);
    }
  }
  return r;
}

BatchKlResult kl_mc_batch_reference(const PosteriorBatch& q, const MixtureDensity& m, const NoiseBlock& noise,
                                    const BatchKlOptions& opt) {
  check_batch(q, m, noise);
  const int n = q.size();
  const int dim = q.dim();
  const int modes = m.modes();
  BatchKlResult r;
  r.kl = Vec(n);
  r.d_mean = Mat(n, dim);
  r.d_log_var = Mat(n, dim);
  r.d_means = Mat::Zero(modes, dim);
  r.d_log_vars = Mat::Zero(modes, dim);
  r.d_log_weights = Vec::Zero(modes);
  r.resp_sum = Vec::Zero(modes);
  for (int s = 0; s < n; ++s) {
    const DiagGaussian post = q.row(s);
    const KlMcGradient g = kl_mc_grad(post, m, noise.draws, noise.sample(s), opt.target);
    r.kl[s] = g.value;
    r.d_mean.row(s) = g.d_mean.transpose();
    r.d_log_var.row(s) = g.d_log_var.transpose();
    const double w = target_weight(opt, s);
    r.d_means += w * g.d_means;
    r.d_log_vars += w * g.d_log_vars;
    r.d_log_weights += w * g.d_log_weights;
    Vec mean_resp = Vec::Zero(modes);
    for (int t = 0; t < noise.draws; ++t) {
      const Eigen::Map<const Vec> eps(noise.sample(s).data() + static_cast<size_t>(t) * dim, dim);
      const ResponsibilityVector c = responsibilities(sample_reparam(post, eps), m);
      if (c.underflow) {
        ++r.underflow;
        continue;
      }
      mean_resp += c.values / noise.draws;
    }
    r.resp_sum += mean_resp;
  }
  return r;
}

BatchKlResult kl_closed_batch(const PosteriorBatch& q, const MixtureDensity& single, const BatchKlOptions& opt) {
  require(single.modes() == 1, "kl_closed_batch: target must have exactly one component");
  require(q.dim() == single.dim(), "kl_closed_batch: dimension mismatch");
  const int n = q.size();
  const int dim = q.dim();
  BatchKlResult r;
  r.kl = Vec(n);
  r.d_mean = Mat(n, dim);
  r.d_log_var = Mat(n, dim);
  r.d_means = Mat::Zero(1, dim);
  r.d_log_vars = Mat::Zero(1, dim);
  r.d_log_weights = Vec::Zero(1);
  r.resp_sum = Vec::Constant(1, static_cast<double>(n));
  const bool want_mix = opt.target == TargetGrad::propagate;
  for (int s = 0; s < n; ++s) {
    double kl = 0.0;
    const double w = target_weight(opt, s);
    for (int j = 0; j < dim; ++j) {
      const double lq = q.log_var(s, j);
      const double lp = single.log_vars()(0, j);
      const double diff = q.mean(s, j) - single.means()(0, j);
      const double ratio = std::exp(lq - lp);
      const double ip = std::exp(-lp);
      kl += 0.5 * (ratio + diff * diff * ip - 1.0 + lp - lq);
      r.d_mean(s, j) = diff * ip;
      r.d_log_var(s, j) = 0.5 * (ratio - 1.0);
      if (want_mix) {
        r.d_means(0, j) += -w * diff * ip;
        r.d_log_vars(0, j) += w * 0.5 * (-ratio - diff * diff * ip + 1.0);
      }
    }
    r.kl[s] = kl;
  }
  return r;
}

PosteriorGrad neg_entropy_latent_grad(const PosteriorBatch& q, const MixtureDensity& m, const NoiseBlock& noise,
                                      const Vec& log_c, double scale, Exec exec) {
  check_batch(q, m, noise);
  require(log_c.size() == m.modes(), "neg_entropy_latent_grad: log_c length mismatch");
  const int n = q.size();
  const int dim = q.dim();
  const int modes = m.modes();
  const MixtureCache mc(m);
  PosteriorGrad out{Mat::Zero(n, dim), Mat::Zero(n, dim)};

  auto body = [&](SampleScratch& sc, std::vector<double>& h_bar, int s) {
    for (int t = 0; t < noise.draws; ++t) {
      const double* e = noise.sample(s).data() + static_cast<size_t>(t) * dim;
      for (int j = 0; j < dim; ++j) sc.z[j] = q.mean(s, j) + std::exp(0.5 * q.log_var(s, j)) * e[j];
      const double log_p = mc.log_terms(sc.z.data(), sc.terms.data());
      if (!std::isfinite(log_p)) continue;
      // h_i = grad_z log(w_i N_i) = -(z - mu_i) / sigma_i^2 ;  dc_i/dz = c_i (h_i - h_bar)
      std::fill(h_bar.begin(), h_bar.end(), 0.0);
      for (int i = 0; i < modes; ++i) {
        sc.terms[i] = std::exp(sc.terms[i] - log_p);
        for (int j = 0; j < dim; ++j)
          h_bar[j] += sc.terms[i] * -(sc.z[j] - mc.means[i * dim + j]) * mc.inv_var[i * dim + j];
      }
      std::fill(sc.grad_z.begin(), sc.grad_z.end(), 0.0);
      for (int i = 0; i < modes; ++i) {
        const double c = sc.terms[i];
        if (c == 0.0 || !std::isfinite(log_c[i])) continue;
        for (int j = 0; j < dim; ++j) {
          const double h = -(sc.z[j] - mc.means[i * dim + j]) * mc.inv_var[i * dim + j];
          sc.grad_z[j] += scale * log_c[i] * c * (h - h_bar[j]);
        }
      }
      for (int j = 0; j < dim; ++j) {
        out.d_mean(s, j) += sc.grad_z[j];
        out.d_log_var(s, j) += sc.grad_z[j] * 0.5 * std::exp(0.5 * q.log_var(s, j)) * e[j];
      }
    }
  };

  if (exec == Exec::parallel) {
#pragma omp parallel
    {
      SampleScratch sc(modes, dim);
      std::vector<double> h_bar(dim);
#pragma omp for schedule(static)
      for (int s = 0; s < n; ++s) body(sc, h_bar, s);
    }
  } else {
    SampleScratch sc(modes, dim);
    std::vector<double> h_bar(dim);
    for (int s = 0; s < n; ++s) body(sc, h_bar, s);
  }
  return out;
}

Vec log_prob_mog_batch(const Mat& zs, const MixtureDensity& m, Exec exec) {
  require(zs.cols() == m.dim(), "log_prob_mog_batch: dimension mismatch");
  const int n = static_cast<int>(zs.rows());
  const MixtureCache mc(m);
  Vec out(n);
  auto body = [&](std::vector<double>& terms, std::vector<double>& z, int s) {
    for (int j = 0; j < m.dim(); ++j) z[j] = zs(s, j);
    out[s] = mc.log_terms(z.data(), terms.data());
  };
  if (exec == Exec::parallel) {
#pragma omp parallel
    {
      std::vector<double> terms(m.modes()), z(m.dim());
#pragma omp for schedule(static)
      for (int s = 0; s < n; ++s) body(terms, z, s);
    }
  } else {
    std::vector<double> terms(m.modes()), z(m.dim());
    for (int s = 0; s < n; ++s) body(terms, z, s);
  }
  return out;
}

}  // namespace introprior

#include "introprior/distributions.hpp"

#include "testing.hpp"

#include <doctest.h>

using namespace introprior;
using namespace introprior::testing;

namespace {

MixtureDensity random_mixture(Engine& eng, int M, int D) {
  Vec logits = randv(eng, M);
  const double lse = std::log(logits.array().exp().sum());
  return MixtureDensity(randn(eng, M, D), randn(eng, M, D, 0.5), (logits.array() - lse).matrix());
}

// Textbook diagonal normal density, written without the library.
double naive_normal_pdf(const Vec& z, const Vec& mu, const Vec& var) {
  double p = 1.0;
  for (int j = 0; j < z.size(); ++j)
    p *= std::exp(-0.5 * (z[j] - mu[j]) * (z[j] - mu[j]) / var[j]) / std::sqrt(2 * std::numbers::pi * var[j]);
  return p;
}

}  // namespace

TEST_CASE("log_prob_diag matches the textbook density") {
  Engine eng = make_engine(1, 99);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec mu = randv(eng, 3), lv = randv(eng, 3, 0.5), z = randv(eng, 3);
    const double expect = std::log(naive_normal_pdf(z, mu, lv.array().exp()));
    CHECK(log_prob_diag(z, DiagGaussian(mu, lv)) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("log_prob_mog is the log of the weighted sum of component densities") {
  Engine eng = make_engine(2, 99);
  const MixtureDensity m = random_mixture(eng, 5, 2);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec z = randv(eng, 2, 2.0);
    double p = 0;
    for (int i = 0; i < 5; ++i)
      p += m.weights()[i] * naive_normal_pdf(z, m.means().row(i).transpose(), m.log_vars().row(i).array().exp());
    CHECK(log_prob_mog(z, m) == doctest::Approx(std::log(p)).epsilon(1e-12));
  }
}

TEST_CASE("log_prob_mog stays finite far in the tails") {
  const MixtureDensity m = MixtureDensity::standard_normal(2);
  Vec z(2);
  z << 60.0, -60.0;
  CHECK(std::isfinite(log_prob_mog(z, m)));
  CHECK(log_prob_mog(z, m) == doctest::Approx(-kLog2Pi - 3600.0));
}

TEST_CASE("closed-form KL agrees with a large Monte-Carlo estimate") {
  Engine eng = make_engine(3, 99);
  const DiagGaussian q(randv(eng, 2), randv(eng, 2, 0.3));
  const DiagGaussian p(randv(eng, 2), randv(eng, 2, 0.3));
  const int T = 200000;
  const Mat noise = normal_matrix(eng, T, 2).transpose();
  const double mc = kl_mc(q, MixtureDensity::single(p), T, {noise.data(), static_cast<size_t>(noise.size())});
  CHECK(mc == doctest::Approx(kl_closed(q, p)).epsilon(0.02));
}

TEST_CASE("closed-form KL is zero for identical Gaussians and positive otherwise") {
  Engine eng = make_engine(4, 99);
  const DiagGaussian q(randv(eng, 3), randv(eng, 3));
  CHECK(kl_closed(q, q) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(kl_closed(q, DiagGaussian::standard(3)) > 0.0);
}

TEST_CASE("kl_mc_grad matches finite differences in every argument") {
  Engine eng = make_engine(5, 99);
  const int M = 4, D = 2, T = 7;
  MixtureDensity m0 = random_mixture(eng, M, D);
  Mat means = m0.means(), lvs = m0.log_vars();
  Vec lw = m0.log_weights();
  Vec mu = randv(eng, D), lv = randv(eng, D, 0.3);
  const Mat noise = normal_matrix(eng, T, D).transpose();
  const std::span<const double> ns(noise.data(), static_cast<size_t>(noise.size()));
  auto f = [&] { return kl_mc(DiagGaussian(mu, lv), MixtureDensity(means, lvs, lw), T, ns); };
  const KlMcGradient g = kl_mc_grad(DiagGaussian(mu, lv), MixtureDensity(means, lvs, lw), T, ns);
  CHECK(g.value == doctest::Approx(f()).epsilon(1e-14));
  CHECK(rel_err(fd_gradient(f, mu.data(), D, 1), g.d_mean) < 1e-7);
  CHECK(rel_err(fd_gradient(f, lv.data(), D, 1), g.d_log_var) < 1e-7);
  CHECK(rel_err(fd_gradient(f, means.data(), M, D), g.d_means) < 1e-7);
  CHECK(rel_err(fd_gradient(f, lvs.data(), M, D), g.d_log_vars) < 1e-7);
  // log-weights must stay normalized, so differentiate through free logits instead
  Vec theta = lw;
  auto f_theta = [&] {
    const Vec l = theta.array() - std::log(theta.array().exp().sum());
    return kl_mc(DiagGaussian(mu, lv), MixtureDensity(means, lvs, l), T, ns);
  };
  const Vec w = lw.array().exp();
  const Vec d_theta = g.d_log_weights - w * g.d_log_weights.sum();
  CHECK(rel_err(fd_gradient(f_theta, theta.data(), M, 1), d_theta) < 1e-7);
}

TEST_CASE("a frozen target yields zero mixture gradients and the same posterior gradient") {
  Engine eng = make_engine(6, 99);
  const MixtureDensity m = random_mixture(eng, 3, 2);
  const DiagGaussian q(randv(eng, 2), randv(eng, 2));
  const Mat noise = normal_matrix(eng, 5, 2).transpose();
  const std::span<const double> ns(noise.data(), static_cast<size_t>(noise.size()));
  const auto live = kl_mc_grad(q, m, 5, ns, TargetGrad::propagate);
  const auto frozen = kl_mc_grad(q, m, 5, ns, TargetGrad::frozen);
  CHECK(frozen.d_means.cwiseAbs().maxCoeff() == 0.0);
  CHECK(frozen.d_log_vars.cwiseAbs().maxCoeff() == 0.0);
  CHECK(frozen.d_log_weights.cwiseAbs().maxCoeff() == 0.0);
  CHECK(frozen.d_mean == live.d_mean);
  CHECK(frozen.d_log_var == live.d_log_var);
}

TEST_CASE("responsibilities are Bayes posteriors over components") {
  Engine eng = make_engine(7, 99);
  const MixtureDensity m = random_mixture(eng, 6, 2);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec z = randv(eng, 2, 1.5);
    const ResponsibilityVector c = responsibilities(z, m);
    CHECK(c.values.sum() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(c.values.minCoeff() >= 0.0);
    Vec joint(6);
    for (int i = 0; i < 6; ++i)
      joint[i] = m.weights()[i] * naive_normal_pdf(z, m.means().row(i).transpose(), m.log_vars().row(i).array().exp());
    CHECK(rel_err(c.values, joint / joint.sum()) < 1e-12);
  }
}

TEST_CASE("responsibilities survive total underflow with a flagged uniform vector") {
  Mat means(2, 1), lvs(2, 1);
  means << 0.0, 1.0;
  lvs << -700.0, -700.0;
  Vec lw(2);
  lw << std::log(0.5), std::log(0.5);
  const MixtureDensity m(means, lvs, lw);
  Vec z(1);
  z << 1e6;
  const ResponsibilityVector c = responsibilities(z, m);
  CHECK(c.values.allFinite());
  CHECK(c.values.sum() == doctest::Approx(1.0));
}

TEST_CASE("entropy of responsibility vectors") {
  ResponsibilityVector c;
  c.values = Vec::Constant(8, 1.0 / 8);
  CHECK(entropy(c) == doctest::Approx(std::log(8.0)));
  CHECK(normalized_entropy(c) == doctest::Approx(1.0));
  c.values = Vec::Zero(8);
  c.values[3] = 1.0;
  CHECK(entropy(c) == 0.0);
  CHECK(normalized_entropy(c) == 0.0);
  c.values = Vec::Ones(1);
  CHECK(normalized_entropy(c) == 0.0);
}

TEST_CASE("batch expected responsibilities are the row mean") {
  Engine eng = make_engine(8, 99);
  const MixtureDensity m = random_mixture(eng, 3, 2);
  const Mat zs = randn(eng, 10, 2);
  Vec mean = Vec::Zero(3);
  for (int r = 0; r < 10; ++r) mean += responsibilities(zs.row(r).transpose(), m).values / 10.0;
  CHECK(rel_err(batch_expected_responsibilities(zs, m).values, mean) < 1e-13);
}

TEST_CASE("invalid shapes are rejected") {
  CHECK_THROWS_AS(DiagGaussian(Vec::Zero(2), Vec::Zero(3)), Error);
  CHECK_THROWS_AS(MixtureDensity(Mat::Zero(2, 2), Mat::Zero(2, 3), Vec::Zero(2)), Error);
}

#include "introprior/evalsuite.hpp"

#include "testing.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numbers>

using namespace introprior;
using namespace introprior::testing;

namespace {

Model small_model(std::uint64_t seed, MixturePrior prior) {
  Engine eng = make_engine(seed, Stream::init);
  return Model{Encoder(2, 2, 8, 2, eng), Decoder(2, 2, 8, 2, eng), std::move(prior), KlMode::mc};
}

MixturePrior mog(const Mat& means, const Mat& log_vars, const Vec& logits) {
  MixturePrior p;
  p.means = means;
  p.raw_log_vars = log_vars;
  p.energy_logits = logits;
  p.clip_lo = Vec::Zero(means.cols());
  p.clip_hi = Vec::Zero(means.cols());
  return p;
}

// Encoder whose posterior is N(mu, diag(exp(lv))) for every input.
void make_constant_encoder(Encoder& enc, const Vec& mu, const Vec& lv) {
  auto ps = enc.params();
  for (auto& p : ps) p.map().setZero();
  auto& bias = ps.back();
  for (int j = 0; j < mu.size(); ++j) {
    bias.data[j] = mu[j];
    bias.data[mu.size() + j] = lv[j];
  }
}

}  // namespace

TEST_CASE("histogram divergences of identical and disjoint sample sets") {
  Engine eng = make_engine(71, 99);
  const Box box{0, 2, 0, 2};
  Mat a(20000, 2), b(20000, 2);
  for (int k = 0; k < 20000; ++k) {
    a(k, 0) = uniform(eng, 0, 1);
    a(k, 1) = uniform(eng, 0, 2);
    b(k, 0) = uniform(eng, 1, 2);
    b(k, 1) = uniform(eng, 0, 2);
  }
  const HistDivergence same = histogram_divergences(a, a, box, 10, 1e-10);
  CHECK(same.kl == 0.0);
  CHECK(same.jsd == 0.0);
  CHECK(std::abs(histogram_divergences(a, b, box, 10, 1e-12).jsd - std::log(2.0)) < 1e-3);
}

TEST_CASE("four-cell histograms match hand-computed KL and JSD") {
  // P = (1/2, 1/4, 1/4, 0), Q uniform over the four cells of [0, 2]^2
  Mat p(4, 2), q(4, 2);
  p << 0.5, 0.5, 0.5, 0.5, 1.5, 0.5, 0.5, 1.5;
  q << 0.5, 0.5, 1.5, 0.5, 0.5, 1.5, 1.5, 1.5;
  const HistDivergence d = histogram_divergences(p, q, Box{0, 2, 0, 2}, 2, 0.0);
  // KL = 1/2 log 2; M = (3/8, 1/4, 1/4, 1/8)
  CHECK(d.kl == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-14));
  const double jsd = 0.5 * (0.5 * std::log(0.5 / 0.375)) +
                     0.5 * (0.25 * std::log(0.25 / 0.375) + 0.25 * std::log(0.25 / 0.125));
  CHECK(d.jsd == doctest::Approx(jsd).epsilon(1e-14));
}

TEST_CASE("JSD is symmetric, KL is not, and both ignore sample order") {
  Engine eng = make_engine(72, 99);
  const Box box{-3, 3, -3, 3};
  const Mat a = randn(eng, 10000, 2), b = randn(eng, 10000, 2, 0.5);
  const HistDivergence ab = histogram_divergences(a, b, box, 30, 1e-10);
  const HistDivergence ba = histogram_divergences(b, a, box, 30, 1e-10);
  CHECK(ab.jsd == doctest::Approx(ba.jsd).epsilon(1e-12));
  CHECK(std::abs(ab.kl - ba.kl) > 0.1);
  std::vector<int> perm(10000);
  for (int k = 0; k < 10000; ++k) perm[k] = k;
  std::shuffle(perm.begin(), perm.end(), eng);
  Mat shuffled(10000, 2);
  for (int k = 0; k < 10000; ++k) shuffled.row(k) = a.row(perm[k]);
  const HistDivergence sb = histogram_divergences(shuffled, b, box, 30, 1e-10);
  CHECK(sb.kl == ab.kl);
  CHECK(sb.jsd == ab.jsd);
  CHECK_THROWS_AS(histogram_divergences(Mat(0, 2), b, box, 30, 1e-10), Error);
}

TEST_CASE("gnELBO of a uniform ELBO is the log of the box area") {
  const Box box = bounding_box("rings");
  const Mat held = sample_dataset("rings", 1000, 1);
  const double g = grid_normalized_elbo([](const Mat& pts) { return Vec::Constant(pts.rows(), -3.7); }, box, 60, held);
  CHECK(g == doctest::Approx(std::log(box.area())).epsilon(1e-12));
}

TEST_CASE("gnELBO of the true density approaches its differential entropy") {
  const Box box = bounding_box("8gaussian");
  const Mat held = sample_dataset("8gaussian", 100000, 2);
  auto log_p = [](const Mat& pts) {
    Vec w(pts.rows());
    for (int k = 0; k < pts.rows(); ++k) w[k] = std::log(dataset_density("8gaussian", pts(k, 0), pts(k, 1)));
    return w;
  };
  const double g200 = grid_normalized_elbo(log_p, box, 200, held);
  // -integral p log p by quadrature on a fine grid
  const Mat fine = grid_points(box, 1000);
  const double cell = box.area() / 1e6;
  double h = 0;
  for (int k = 0; k < fine.rows(); ++k) {
    const double p = dataset_density("8gaussian", fine(k, 0), fine(k, 1));
    if (p > 0) h -= p * std::log(p) * cell;
  }
  CHECK(g200 == doctest::Approx(h).epsilon(0.01));
  // resolution stability
  CHECK(grid_normalized_elbo(log_p, box, 100, held) == doctest::Approx(g200).epsilon(0.02));
}

TEST_CASE("gnELBO rejects degenerate inputs") {
  const Box box = bounding_box("8gaussian");
  const Mat held = sample_dataset("8gaussian", 100, 2);
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(grid_normalized_elbo([&](const Mat& p) { return Vec::Constant(p.rows(), ninf); }, box, 50, held),
                  Error);
  CHECK_THROWS_AS(grid_normalized_elbo([&](const Mat& p) { return Vec::Zero(p.rows()); }, box, 49, held), Error);
}

TEST_CASE("model ELBO uses the closed-form KL under a standard Gaussian prior") {
  Model m = small_model(73, MixturePrior::standard_gaussian(2));
  Engine data = make_engine(73, 99);
  const Mat x = randn(data, 6, 2);
  Engine e1 = make_engine(1, 1);
  const Vec w = model_elbo(m, x, 4, e1);
  Engine e2 = make_engine(1, 1);
  const NoiseBlock noise = normal_block(e2, 6, 4, 2);
  const PosteriorBatch q = m.enc.encode(x);
  for (int s = 0; s < 6; ++s) {
    double rec = 0;
    for (int t = 0; t < 4; ++t) {
      Vec z(2);
      for (int j = 0; j < 2; ++j) z[j] = q.mean(s, j) + std::exp(0.5 * q.log_var(s, j)) * noise.sample(s)[t * 2 + j];
      rec += 0.5 * (m.dec.decode(z.transpose()).row(0) - x.row(s)).squaredNorm() / 4;
    }
    CHECK(w[s] == doctest::Approx(-(rec + kl_closed(q.row(s), DiagGaussian::standard(2)))).epsilon(1e-12));
  }
}

TEST_CASE("responsibility report: not applicable, dominant and uniform cases") {
  Engine data = make_engine(74, 99);
  const Mat x = randn(data, 200, 2);
  Engine eng = make_engine(74, 1);
  const ResponsibilityReport sg = responsibility_report(small_model(74, MixturePrior::standard_gaussian(2)), x, 1, eng);
  CHECK(!sg.applicable);
  CHECK(sg.expected.size() == 1);
  CHECK(sg.entropy_norm == 0.0);

  Mat means = Mat::Zero(4, 2);
  means.row(1) << 100, 0;
  means.row(2) << -100, 0;
  means.row(3) << 0, 100;
  Vec logits(4);
  logits << 5, 0, 0, 0;
  const ResponsibilityReport dom = responsibility_report(small_model(74, mog(means, Mat::Zero(4, 2), logits)), x, 1, eng);
  CHECK(dom.applicable);
  CHECK(dom.entropy_norm < 1e-6);
  CHECK(dom.inactive == std::vector<int>{1, 2, 3});

  const ResponsibilityReport uni =
      responsibility_report(small_model(74, mog(Mat::Zero(5, 2), Mat::Zero(5, 2), Vec::Zero(5))), x, 1, eng);
  CHECK(uni.entropy_norm == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(uni.inactive.empty());
}

TEST_CASE("responsibility report matches a per-sample computation") {
  Engine init = make_engine(75, 99);
  Model m = small_model(75, mog(randn(init, 3, 2), randn(init, 3, 2, 0.3), randv(init, 3)));
  const Mat x = randn(init, 30, 2);
  Engine e1 = make_engine(75, 2);
  const ResponsibilityReport r = responsibility_report(m, x, 2, e1);
  Engine e2 = make_engine(75, 2);
  const NoiseBlock noise = normal_block(e2, 30, 2, 2);
  const PosteriorBatch q = m.enc.encode(x);
  const MixtureDensity p = m.density();
  Vec c = Vec::Zero(3);
  for (int s = 0; s < 30; ++s)
    for (int t = 0; t < 2; ++t) {
      Vec z(2);
      for (int j = 0; j < 2; ++j) z[j] = q.mean(s, j) + std::exp(0.5 * q.log_var(s, j)) * noise.sample(s)[t * 2 + j];
      c += responsibilities(z, p).values / 60.0;
    }
  CHECK(rel_err(r.expected, c) < 1e-12);
}

TEST_CASE("aggregated cross-entropy equals the Gaussian entropy when prior and posterior coincide") {
  Vec mu(2), lv(2);
  mu << 0.3, -0.7;
  lv << -0.4, 0.5;
  Model m = small_model(76, mog(mu.transpose(), lv.transpose(), Vec::Zero(1)));
  make_constant_encoder(m.enc, mu, lv);
  Engine data = make_engine(76, 99);
  const Mat x = randn(data, 2000, 2);
  Engine eng = make_engine(76, 1);
  const double ce = aggregated_ce_diagnostic(m, x, 50, eng);
  const double entropy = 0.5 * (2 * std::log(2 * std::numbers::pi * std::numbers::e) + lv.sum());
  // per-draw -log p(z) has variance D / 2
  CHECK(std::abs(ce - entropy) < 3 * std::sqrt(1.0 / 1e5));
  Engine eng2 = make_engine(76, 2);
  CHECK(std::abs(aggregated_ce_diagnostic(m, x, 50, eng2) - ce) < 3 * std::sqrt(2.0 / 1e5));
  for (double shift : {0.5, 1.0, 2.0}) {
    Model moved = m;
    moved.prior.means(0, 0) += shift;
    Engine e = make_engine(76, 1);
    const double c2 = aggregated_ce_diagnostic(moved, x, 50, e);
    CHECK(c2 > ce);
  }
}

TEST_CASE("evaluation report survives a text round trip") {
  EvalReport r;
  r.gnelbo = 1.2345678901234567;
  r.hist_kl = 0.1;
  r.hist_jsd = 0.05;
  r.resp_entropy_norm = 0.75;
  r.resp_applicable = true;
  r.ce_diag = -3.5;
  r.grid = 120;
  r.hist_bins = 100;
  r.hist_samples = 5000;
  r.heldout = 1000;
  r.scale_kl = 2.0;
  const EvalReport back = EvalReport::from_text(r.to_text());
  CHECK(back.to_text() == r.to_text());
  CHECK(back.gnelbo == r.gnelbo);
  CHECK(back.scale_kl == 2.0);
  CHECK_THROWS_AS(EvalReport::from_text("gnelbo=1\n"), Error);
}

TEST_CASE("evaluate is deterministic for a fixed seed") {
  Model m = small_model(77, MixturePrior::standard_gaussian(2));
  EvalConfig cfg;
  cfg.grid = 50;
  cfg.hist_samples = 10000;
  cfg.heldout = 1000;
  cfg.T = 2;
  const EvalReport a = evaluate(m, "8gaussian", cfg, 5), b = evaluate(m, "8gaussian", cfg, 5);
  CHECK(a.to_text() == b.to_text());
  CHECK(std::isfinite(a.gnelbo));
  CHECK(a.hist_kl > 0);
  CHECK(!a.resp_applicable);
}

TEST_CASE("plots are written with one marker per component, sized by weight") {
  Engine init = make_engine(78, 99);
  Model m = small_model(78, mog(randn(init, 6, 2), Mat::Zero(6, 2), randv(init, 6)));
  const auto dir = temp_dir("plots");
  const auto markers = emit_plots(m, "rings", dir, 3, 2000);
  for (const char* f : {"real.png", "generated.png", "latent.png", "latent_markers.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
    CHECK(std::filesystem::file_size(dir / f) > 0);
  }
  REQUIRE(markers.size() == 6);
  std::ifstream csv(dir / "latent_markers.csv");
  std::string line;
  std::getline(csv, line);
  std::vector<std::pair<double, double>> read;  // (weight, size)
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    read.emplace_back(v[3], v[4]);
  }
  REQUIRE(read.size() == 6);
  auto by_weight = read, by_size = read;
  std::sort(by_weight.begin(), by_weight.end());
  std::sort(by_size.begin(), by_size.end(), [](auto a, auto b) { return a.second < b.second; });
  CHECK(by_weight == by_size);
  const Vec w = m.density().weights();
  for (int i = 0; i < 6; ++i) CHECK(read[i].first == doctest::Approx(w[i]).epsilon(1e-12));
}

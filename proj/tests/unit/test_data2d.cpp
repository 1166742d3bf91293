#include "introprior/data2d.hpp"
#include "introprior/evalsuite.hpp"

#include "testing.hpp"

#include <doctest.h>

#include <numbers>

using namespace introprior;
using namespace introprior::testing;

namespace {

constexpr double kPi = std::numbers::pi;

double gauss(double v, double sd) { return std::exp(-0.5 * v * v / (sd * sd)) / (sd * std::sqrt(2 * kPi)); }

// Rejection samplers written from the dataset definitions, sharing nothing with the library samplers.
Mat rejection_sample(const std::string& name, int n, Engine& eng) {
  Mat out(n, 2);
  int k = 0;
  while (k < n) {
    double x = 0, y = 0;
    if (name == "8gaussian") {
      // uniform proposal over [-3, 3]^2 against the mixture density
      x = uniform(eng, -3, 3);
      y = uniform(eng, -3, 3);
      double p = 0;
      for (int i = 0; i < 8; ++i) p += gauss(x - 2 * std::cos(i * kPi / 4), 0.2) * gauss(y - 2 * std::sin(i * kPi / 4), 0.2) / 8;
      if (uniform01(eng) * 0.55 > p) continue;
    } else if (name == "checkerboard") {
      x = uniform(eng, -4, 4);
      y = uniform(eng, -4, 4);
      const int cx = static_cast<int>(std::floor(x / 2)), cy = static_cast<int>(std::floor(y / 2));
      if (((cx + cy) % 2 + 2) % 2 != 0) continue;
    } else if (name == "rings") {
      // radius proposal uniform on [0, 5] against the four-bump radial density, then a uniform angle
      const double r = uniform(eng, 0, 5);
      double f = 0;
      for (int i = 1; i <= 4; ++i) f += 0.25 * gauss(r - i, 0.08);
      if (uniform01(eng) * 1.3 > f) continue;
      const double a = uniform(eng, 0, 2 * kPi);
      x = r * std::cos(a);
      y = r * std::sin(a);
    } else {
      // arc parameter with density proportional to t (uniform arc length), by rejection
      const double t = uniform(eng, 0, 3 * kPi);
      if (uniform01(eng) > t / (3 * kPi)) continue;
      std::normal_distribution<double> nd(0.0, 0.1);
      const double rho = t / 3 + nd(eng);
      const double s = uniform01(eng) < 0.5 ? 1.0 : -1.0;
      x = -s * rho * std::cos(t);
      y = s * rho * std::sin(t);
    }
    out(k, 0) = x;
    out(k, 1) = y;
    ++k;
  }
  return out;
}

}  // namespace

TEST_CASE("samples are deterministic per seed and differ across seeds") {
  for (const char* name : kDatasetNames) {
    const Mat a = sample_dataset(name, 500, 11), b = sample_dataset(name, 500, 11), c = sample_dataset(name, 500, 12);
    CHECK(a == b);
    CHECK(a != c);
  }
}

TEST_CASE("8gaussian is centred at the origin") {
  const Mat s = sample_dataset("8gaussian", 1000000, 3);
  // per-coordinate variance is 4 / 2 + 0.2^2
  const double se = std::sqrt(2.04 / 1e6);
  CHECK(std::abs(s.col(0).mean()) < 3 * se);
  CHECK(std::abs(s.col(1).mean()) < 3 * se);
}

TEST_CASE("checkerboard never lands in a white cell") {
  const Mat s = sample_dataset("checkerboard", 200000, 4);
  for (int k = 0; k < s.rows(); ++k) {
    const int cx = static_cast<int>(std::floor((s(k, 0) + 4) / 2)), cy = static_cast<int>(std::floor((s(k, 1) + 4) / 2));
    REQUIRE((cx + cy) % 2 == 0);
    REQUIRE(dataset_density("checkerboard", s(k, 0), s(k, 1)) > 0);
  }
}

TEST_CASE("almost all samples fall inside the bounding box") {
  for (const char* name : kDatasetNames) {
    const Mat s = sample_dataset(name, 100000, 5);
    const Box box = bounding_box(name);
    int in = 0;
    for (int k = 0; k < s.rows(); ++k) in += box.contains(s(k, 0), s(k, 1));
    CHECK(in / 1e5 >= 0.999);
  }
}

TEST_CASE("exact densities integrate to one over the bounding box") {
  for (const char* name : kDatasetNames) {
    const Box box = bounding_box(name);
    const int g = 800;
    const Mat pts = grid_points(box, g);
    double mass = 0;
    for (int k = 0; k < pts.rows(); ++k) mass += dataset_density(name, pts(k, 0), pts(k, 1));
    mass *= box.area() / (static_cast<double>(g) * g);
    CHECK(mass == doctest::Approx(1.0).epsilon(5e-3));
  }
}

TEST_CASE("sampler histograms match independent rejection samplers") {
  for (const char* name : kDatasetNames) {
    const Mat lib = sample_dataset(name, 1000000, 6);
    Engine eng = make_engine(6, 1234);
    const Mat ref = rejection_sample(name, 1000000, eng);
    const HistDivergence d = histogram_divergences(lib, ref, bounding_box(name), 50, 1e-12);
    INFO(name);
    CHECK(d.jsd < 1e-3);
  }
}

TEST_CASE("unknown names are rejected") {
  CHECK_THROWS_AS(sample_dataset("moons", 10, 1), Error);
  CHECK_THROWS_AS(dataset_density("moons", 0, 0), Error);
  CHECK_THROWS_AS(sample_dataset("rings", 0, 1), Error);
}

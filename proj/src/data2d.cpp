#include "introprior/data2d.hpp"

#include <algorithm>
#include <numbers>

namespace introprior {

namespace {

constexpr double kPi = std::numbers::pi;

constexpr double kGaussRadius = 2.0;
constexpr double kGaussStd = 0.2;
constexpr double kSpiralTurns = 3.0 * kPi;  // t in [0, 3 pi]
constexpr double kSpiralNoise = 0.1;
constexpr double kRingNoise = 0.08;
constexpr double kCell = 2.0;

double normal_pdf(double v, double sd) { return std::exp(-0.5 * v * v / (sd * sd)) / (sd * std::sqrt(2.0 * kPi)); }

void sample_8gaussian(Engine& eng, double& x, double& y) {
  std::uniform_int_distribution<int> pick(0, 7);
  std::normal_distribution<double> nd(0.0, kGaussStd);
  const double a = pick(eng) * kPi / 4.0;
  x = kGaussRadius * std::cos(a) + nd(eng);
  y = kGaussRadius * std::sin(a) + nd(eng);
}

// Spiral arm: radius t/3 along direction (-cos t, sin t), radial noise; the second arm is the point reflection.
void sample_2spirals(Engine& eng, double& x, double& y) {
  const double t = std::sqrt(uniform01(eng)) * kSpiralTurns;
  std::normal_distribution<double> nd(0.0, kSpiralNoise);
  const double rho = t / 3.0 + nd(eng);
  const double sign = uniform01(eng) < 0.5 ? 1.0 : -1.0;
  x = sign * rho * -std::cos(t);
  y = sign * rho * std::sin(t);
}

void sample_checkerboard(Engine& eng, double& x, double& y) {
  std::uniform_int_distribution<int> pick(0, 7);
  const int k = pick(eng);
  const int row = k / 2;
  const int col = 2 * (k % 2) + (row % 2);  // (row + col) even
  x = -4.0 + kCell * (col + uniform01(eng));
  y = -4.0 + kCell * (row + uniform01(eng));
}

void sample_rings(Engine& eng, double& x, double& y) {
  std::uniform_int_distribution<int> pick(1, 4);
  std::normal_distribution<double> nd(0.0, kRingNoise);
  const double r = pick(eng) + nd(eng);
  const double a = 2.0 * kPi * uniform01(eng);
  x = r * std::cos(a);
  y = r * std::sin(a);
}

double spiral_arm_density(double x, double y) {
  const double r = std::hypot(x, y);
  if (r == 0.0) return 0.0;
  const double phi = std::atan2(y, x);
  // preimages (t, rho): direction angle pi - t equals phi (rho = r) or phi + pi (rho = -r)
  double acc = 0.0;
  for (int branch = 0; branch < 2; ++branch) {
    const double base = branch == 0 ? kPi - phi : -phi;
    const double rho = branch == 0 ? r : -r;
    for (int k = -2; k <= 3; ++k) {
      const double t = base + 2.0 * kPi * k;
      if (t < 0.0 || t > kSpiralTurns) continue;
      const double f_t = 2.0 * t / (kSpiralTurns * kSpiralTurns);
      acc += f_t * normal_pdf(rho - t / 3.0, kSpiralNoise) / r;
    }
  }
  return acc;
}

}  // namespace

void check_dataset_name(const std::string& name) {
  for (const char* n : kDatasetNames)
    if (name == n) return;
  throw Error("unknown dataset: " + name);
}

Box bounding_box(const std::string& name) {
  check_dataset_name(name);
  if (name == "8gaussian") return {-3, 3, -3, 3};
  if (name == "rings") return {-4.5, 4.5, -4.5, 4.5};
  return {-4, 4, -4, 4};
}

Mat sample_dataset(const std::string& name, int n, Engine& eng) {
  check_dataset_name(name);
  require(n >= 1, "sample_dataset: n must be >= 1");
  void (*draw)(Engine&, double&, double&) = nullptr;
  if (name == "8gaussian") draw = sample_8gaussian;
  else if (name == "2spirals") draw = sample_2spirals;
  else if (name == "checkerboard") draw = sample_checkerboard;
  else draw = sample_rings;
  Mat out(n, 2);
  for (int s = 0; s < n; ++s) {
    double x, y;
    draw(eng, x, y);
    out(s, 0) = x;
    out(s, 1) = y;
  }
  return out;
}

Mat sample_dataset(const std::string& name, int n, std::uint64_t seed) {
  Engine eng = make_engine(seed, Stream::data);
  return sample_dataset(name, n, eng);
}

double dataset_density(const std::string& name, double x, double y) {
  check_dataset_name(name);
  if (name == "8gaussian") {
    double acc = 0.0;
    for (int k = 0; k < 8; ++k) {
      const double a = k * kPi / 4.0;
      acc += normal_pdf(x - kGaussRadius * std::cos(a), kGaussStd) * normal_pdf(y - kGaussRadius * std::sin(a), kGaussStd);
    }
    return acc / 8.0;
  }
  if (name == "2spirals") return 0.5 * (spiral_arm_density(x, y) + spiral_arm_density(-x, -y));
  if (name == "checkerboard") {
    if (x < -4 || x >= 4 || y < -4 || y >= 4) return 0.0;
    const int col = static_cast<int>(std::floor((x + 4.0) / kCell));
    const int row = static_cast<int>(std::floor((y + 4.0) / kCell));
    return (row + col) % 2 == 0 ? 1.0 / (8.0 * kCell * kCell) : 0.0;
  }
  // rings: radial mixture, uniform angle => density = f(r) / (2 pi r)
  const double r = std::hypot(x, y);
  if (r == 0.0) return 0.0;
  double f = 0.0;
  for (int k = 1; k <= 4; ++k) f += 0.25 * normal_pdf(r - k, kRingNoise);
  return f / (2.0 * kPi * r);
}

}  // namespace introprior

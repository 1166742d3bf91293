#include "introprior/rng.hpp"

#include <sstream>

namespace introprior {

Engine make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream & 0xffffffffu), static_cast<std::uint32_t>(stream >> 32),
                    0x5eedu};
  return Engine(seq);
}

void fill_normal(Engine& eng, std::span<double> out) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : out) v = nd(eng);
}

NoiseBlock normal_block(Engine& eng, int n, int t, int d) {
  NoiseBlock b(n, t, d);
  fill_normal(eng, b.values);
  return b;
}

Mat normal_matrix(Engine& eng, int rows, int cols) {
  Mat m(rows, cols);
  std::normal_distribution<double> nd(0.0, 1.0);
  // row-major fill so the draw order is independent of Eigen's storage order
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = nd(eng);
  return m;
}

double uniform01(Engine& eng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(eng);
}

std::string engine_to_string(const Engine& eng) {
  std::ostringstream os;
  os << eng;
  return os.str();
}

Engine engine_from_string(const std::string& s) {
  Engine eng;
  std::istringstream is(s);
  is >> eng;
  if (is.fail()) throw Error("corrupt rng state");
  return eng;
}

}  // namespace introprior

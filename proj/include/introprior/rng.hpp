#pragma once

#include "introprior/common.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace introprior {

using Engine = std::mt19937_64;

// Stream ids used to split one user seed into independent engines.
enum class Stream : std::uint64_t {
  data = 1,
  init = 2,
  noise = 3,
  eval = 4,
  heldout = 5,
  probe = 6,
};

/// Engine seeded from (seed, stream) through seed_seq so distinct streams never share state.
Engine make_engine(std::uint64_t seed, std::uint64_t stream);
inline Engine make_engine(std::uint64_t seed, Stream stream) {
  return make_engine(seed, static_cast<std::uint64_t>(stream));
}

/// Distributions are constructed per call so the engine state alone determines all future draws.
void fill_normal(Engine& eng, std::span<double> out);
NoiseBlock normal_block(Engine& eng, int n, int t, int d);
Mat normal_matrix(Engine& eng, int rows, int cols);
double uniform01(Engine& eng);

std::string engine_to_string(const Engine& eng);
Engine engine_from_string(const std::string& s);

}  // namespace introprior

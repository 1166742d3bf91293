#pragma once

// Seeded samplers and exact densities for the 2D toy benchmarks.

#include "introprior/rng.hpp"

#include <array>
#include <string>

namespace introprior {

struct Box {
  double lo_x, hi_x, lo_y, hi_y;
  double area() const { return (hi_x - lo_x) * (hi_y - lo_y); }
  bool contains(double x, double y) const { return x >= lo_x && x < hi_x && y >= lo_y && y < hi_y; }
};

inline constexpr std::array<const char*, 4> kDatasetNames = {"8gaussian", "2spirals", "checkerboard", "rings"};

void check_dataset_name(const std::string& name);
Box bounding_box(const std::string& name);

/// n x 2 samples drawn from eng.
Mat sample_dataset(const std::string& name, int n, Engine& eng);
/// Same, from a fresh engine on the data stream of seed.
Mat sample_dataset(const std::string& name, int n, std::uint64_t seed);

/// Exact density of the generator at (x, y).
double dataset_density(const std::string& name, double x, double y);

}  // namespace introprior

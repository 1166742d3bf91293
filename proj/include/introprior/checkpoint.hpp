#pragma once

// Checkpoint directory: manifest.txt (key = value), one <name>.bin per array, metrics.csv.
// Array files: 8-byte magic "IPVAECK1", uint32 rank, rank x uint64 dims, float32 LE row-major.

#include "introprior/trainer.hpp"

#include <filesystem>

namespace introprior {

inline constexpr char kArrayMagic[8] = {'I', 'P', 'V', 'A', 'E', 'C', 'K', '1'};

void write_array(const std::filesystem::path& file, const Mat& a, int rank = 2);
/// Throws Error naming `name` on a bad magic, bad header or truncated payload.
Mat read_array(const std::filesystem::path& file, const std::string& name, int* rank = nullptr);

void save_checkpoint(const TrainState& s, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir);

/// Model only (encoder, decoder, prior) plus the config stored with it.
struct LoadedModel {
  TrainConfig cfg;
  Model model;
  int epoch = 0;
};
LoadedModel load_model(const std::filesystem::path& dir);

std::string code_version();

}  // namespace introprior

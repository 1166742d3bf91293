#pragma once

// Cartesian sweeps over config keys. Grid files hold lines "key = v1, v2, ...".

#include "introprior/trainer.hpp"

namespace introprior {

struct GridSpec {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;

  size_t cells() const;
  /// Assignments of cell k; the last axis varies fastest.
  std::vector<std::pair<std::string, std::string>> cell(size_t k) const;
};

GridSpec parse_grid_spec(const std::string& text, const std::string& origin = "grid");

struct GridCellResult {
  size_t cell = 0;
  std::vector<std::pair<std::string, std::string>> assignment;
  std::vector<EvalReport> reports;  // one per completed seed
  double mean_hist_kl = 0.0, mean_hist_jsd = 0.0, mean_gnelbo = 0.0;
  bool failed = false;
  std::string error;
};

/// Cells sorted by mean hist KL ascending; failed cells last.
std::vector<GridCellResult> rank_cells(std::vector<GridCellResult> cells);
std::string grid_summary_csv(const std::vector<GridCellResult>& ranked);

/// Runs every cell for seeds base.seed, base.seed + 1, ... into out_dir/cell_XXX/seed_S and
/// writes out_dir/summary.csv. Cell failures are recorded and the search continues.
std::vector<GridCellResult> grid_search(const TrainConfig& base, const GridSpec& spec, int seeds,
                                        const std::filesystem::path& out_dir);

}  // namespace introprior

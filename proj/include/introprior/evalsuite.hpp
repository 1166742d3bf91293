#pragma once

// 2D metrics: grid-normalized ELBO, histogram KL/JSD, responsibility entropy,
// the aggregated-posterior cross-entropy, and figure output.

#include "introprior/data2d.hpp"
#include "introprior/model.hpp"

#include <filesystem>
#include <map>

namespace introprior {

struct EvalConfig {
  int grid = 120;
  int T = 10;
  int hist_bins = 100;
  int hist_samples = 500000;
  int heldout = 10000;
  double hist_eps = 1e-10;
  // optional multiplicative factors applied to the reported (scaled_*) values only
  double scale_gnelbo = 1.0;
  double scale_kl = 1.0;
  double scale_jsd = 1.0;
};

struct EvalReport {
  double gnelbo = 0.0;
  double hist_kl = 0.0;
  double hist_jsd = 0.0;
  double resp_entropy_norm = 0.0;
  bool resp_applicable = false;
  double ce_diag = 0.0;
  int grid = 0;
  int hist_bins = 0;
  int hist_samples = 0;
  int heldout = 0;
  double scale_gnelbo = 1.0, scale_kl = 1.0, scale_jsd = 1.0;

  std::string to_text() const;
  static EvalReport from_text(const std::string& text);
};

/// W(x) for each row of points.
using ElboFn = std::function<Vec(const Mat& points)>;

/// Unweighted ELBO with T draws: W = -(mean_t rec_t + KL), KL in closed form for a one-component prior.
Vec model_elbo(const Model& m, const Mat& x, int T, Engine& eng);

/// Cell centres of a grid x grid lattice over box, row index = iy * grid + ix.
Mat grid_points(const Box& box, int grid);

double grid_normalized_elbo(const ElboFn& elbo, const Box& box, int grid, const Mat& heldout);

struct HistDivergence {
  double kl = 0.0;
  double jsd = 0.0;
};

/// Histograms over box (samples outside are dropped), eps added to every cell, renormalized.
HistDivergence histogram_divergences(const Mat& real, const Mat& gen, const Box& box, int bins, double eps);

/// Decoder means of n prior samples.
Mat generate(const Model& m, int n, Engine& eng);

struct ResponsibilityReport {
  bool applicable = false;
  double entropy_norm = 0.0;
  Vec expected;                // M
  std::vector<int> inactive;   // modes with expected responsibility < 1/(10 M)
};

ResponsibilityReport responsibility_report(const Model& m, const Mat& real_batch, int T, Engine& eng);

/// -E_x E_q(z|x) log p(z) with T posterior draws per sample.
double aggregated_ce_diagnostic(const Model& m, const Mat& real_batch, int T, Engine& eng);

/// Full report for a dataset; randomness from the eval and heldout streams of seed.
EvalReport evaluate(const Model& m, const std::string& dataset, const EvalConfig& cfg, std::uint64_t seed);

struct PlotMarker {
  int component;
  double x, y, weight, size;
};

/// Writes real.png, generated.png, latent.png and latent_markers.csv; returns the markers drawn.
std::vector<PlotMarker> emit_plots(const Model& m, const std::string& dataset, const std::filesystem::path& out_dir,
                                   std::uint64_t seed, int n_points = 5000);

/// RGB8 raster writer (libpng).
void write_png(const std::filesystem::path& path, int width, int height, const std::vector<unsigned char>& rgb);

}  // namespace introprior

#pragma once

// VAE warm-up, the warm-up -> adversarial transition, the alternating
// encoder -> decoder -> prior loop, and the encoder-overfit probe.

#include "introprior/config.hpp"
#include "introprior/evalsuite.hpp"
#include "introprior/model.hpp"
#include "introprior/optimizer.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>

namespace introprior {

enum class Phase { warmup, adversarial };
std::string phase_name(Phase p);
Phase parse_phase(const std::string& s);

/// One row of the metrics table. Missing values are written as empty cells.
struct MetricRow {
  int epoch = 0;
  Phase phase = Phase::warmup;
  std::map<std::string, double> values;
};

/// Stable column order of metrics.csv (after "epoch,phase").
const std::vector<std::string>& metric_columns();

std::string metrics_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> parse_metrics_csv(const std::string& text);

struct TrainState {
  TrainConfig cfg;
  Model model;
  VampPseudoInputs vamp;  // used during warm-up when prior.kind = vamp-to-mog
  Adam opt_enc, opt_dec, opt_prior, opt_vamp;
  Engine data_rng, noise_rng;
  int epoch = 0;  // completed epochs
  Phase phase = Phase::warmup;
  std::vector<MetricRow> history;
  std::optional<EvalReport> last_report;  // most recent evaluation (not checkpointed)

  bool vamp_active() const { return phase == Phase::warmup && cfg.prior_kind == PriorKind::vamp_to_mog; }
  bool finished() const { return epoch >= cfg.warmup_epochs + cfg.adversarial_epochs; }

  /// Named trainable arrays of the prior (means, raw_log_vars, energy_logits).
  std::vector<ParamRef> prior_params();
  std::vector<ParamRef> vamp_params();
};

TrainState init_state(const TrainConfig& cfg);

/// Called after every player update with the player's name ("vae", "encoder", "decoder", "prior").
using StepObserver = std::function<void(const TrainState&, const std::string& player)>;

struct TrainHooks {
  StepObserver observer;
  std::optional<std::filesystem::path> dump_dir;  // offending batch written here on a non-finite loss
  std::function<void(const TrainState&)> on_epoch_end;
};

MetricRow warmup_epoch(TrainState& s, const TrainHooks& hooks = {});
void transition_to_adversarial(TrainState& s);
/// One batch of encoder, decoder and (if the prior is learnable) prior updates.
PlayerLosses adversarial_step(TrainState& s, const Mat& x, const TrainHooks& hooks = {});
MetricRow adversarial_epoch(TrainState& s, const TrainHooks& hooks = {});

/// Runs every remaining epoch (transition included) of s.
void train_to_end(TrainState& s, const TrainHooks& hooks = {});

/// max over components and dims of exported log-var minus the clip upper bound.
double prior_lv_excess(const MixturePrior& p);
/// Whether every exported log-var lies inside (a - 2/beta, b + 2/beta).
bool prior_inside_envelope(const MixturePrior& p);

struct RunArtifacts {
  std::filesystem::path dir;
  EvalReport report;
};

/// Trains from scratch (or from an existing state) writing into out_dir:
/// config.txt, manifest.txt, metrics.csv, checkpoint/, eval.txt.
RunArtifacts train_run(const TrainConfig& cfg, const std::filesystem::path& out_dir, const TrainHooks& hooks = {});
RunArtifacts resume_run(TrainState state, const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

enum class ProbeMode { equal, single_real, single_fake };
ProbeMode parse_probe_mode(const std::string& s);
std::string probe_mode_name(ProbeMode m);

struct ProbeSettings {
  ProbeMode mode = ProbeMode::single_real;
  double beta_neg = 1.0;
  int steps = 3000;
  double lr = 1e-3;
  int record_every = 50;
  std::uint64_t seed = 0;
};

struct ProbeCurves {
  Mat samples;             // S x 2, the probe set
  std::vector<bool> real;  // member of the real subset
  std::vector<bool> fake;  // member of the fake subset
  std::vector<int> steps;  // recorded step indices
  Mat rec, kl;             // recorded x S
  double beta_rec = 1.0, beta_kl = 1.0;
  /// Negative of the beta-weighted ELBO the encoder optimizes on real samples.
  Mat neg_elbo() const { return beta_rec * rec + beta_kl * kl; }
};

/// One held-out sample per mode (8 samples); for 8gaussian the sample nearest each mode.
Mat probe_samples(const std::string& dataset, std::uint64_t seed);

/// Encoder-only minimization of L_E with batch size 1 on synthetic real/fake subsets.
ProbeCurves probe_encoder_overfit(const Model& trained, const TrainConfig& cfg, const ProbeSettings& ps);

struct ProbeVerdict {
  double fake_only_kl_start = 0, fake_only_kl_end = 0;
  double enclosed_nelbo_start = 0, enclosed_nelbo_end = 0;
  bool passed = false;
};
/// Directional check for the single-real configuration.
ProbeVerdict probe_verdict(const ProbeCurves& c);

}  // namespace introprior

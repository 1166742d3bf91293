#pragma once

// Run configuration: flat "key = value" text with dotted sections. Every key has a
// default; unknown keys are errors.

#include "introprior/evalsuite.hpp"
#include "introprior/objective.hpp"
#include "introprior/optimizer.hpp"

#include <optional>

namespace introprior {

enum class PriorKind { sg, mog, vamp_to_mog };

struct TrainConfig {
  std::string dataset = "8gaussian";
  int latent_dim = 2;
  int hidden = 256;
  int layers = 3;

  PriorKind prior_kind = PriorKind::sg;
  int modes = 64;
  bool learnable_contributions = true;
  bool intro_prior = true;

  GameHyper hyper;
  int T = 100;
  KlMode kl_mode = KlMode::closed;  // only affects one-component priors
  bool fakes_include_reconstructions = false;

  int warmup_epochs = 20;
  int adversarial_epochs = 30;
  int steps_per_epoch = 100;
  int batch_size = 512;
  int fake_batch_size = 0;  // 0: same as batch_size
  int eval_every = 0;       // epochs between evaluations; 0: final only

  AdamConfig adam_encoder;
  AdamConfig adam_decoder;
  AdamConfig adam_prior;

  bool clip_enabled = true;
  double clip_rho = 0.85;
  std::optional<double> clip_K;  // unset: solve_K(rho)

  std::uint64_t seed = 0;
  EvalConfig eval;

  int fakes() const { return fake_batch_size > 0 ? fake_batch_size : batch_size; }
  void validate() const;

  /// Canonical text, one "key = value" per line, every key present.
  std::string to_text() const;
  ObjectiveOptions objective_options() const;
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);

/// Applies one "key = value" override; throws on unknown keys or bad values.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& cfg, const std::string& key);
std::vector<std::string> config_keys();

std::string prior_kind_name(PriorKind k);

/// Splits "key = value" lines (comments with '#'); throws on malformed lines.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& origin);

std::string read_text_file(const std::string& path);

}  // namespace introprior

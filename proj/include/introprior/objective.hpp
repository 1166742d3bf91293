#pragma once

// ELBO terms and the three player losses with their stop-gradient contracts.
//
// Each *_step function evaluates one player's loss and its gradient. Players that
// are frozen during that step are passed by const reference; where a loss uses a
// player both with and without stop-gradient, the stopped copy is a separate
// argument (pass the same object twice during training). Finite differences on
// the live argument then reproduce the analytic gradient exactly.

#include "introprior/nets.hpp"
#include "introprior/prior.hpp"

#include <map>

namespace introprior {

struct GameHyper {
  double alpha = 2.0;
  double gamma = 1.0;
  double gamma_rho = 1e-8;
  double beta_rec = 1.0;
  double beta_kl = 1.0;
  double beta_neg = 1.0;
  double r_entropy = 0.0;
  double exp_clamp = 50.0;

  void validate() const;
};

enum class KlMode { closed, mc };

struct ObjectiveOptions {
  KlMode kl_mode = KlMode::mc;
  int draws = 100;  // T
  // Also treat reconstructions of the real batch as fakes (off by default).
  bool fakes_include_reconstructions = false;
  Exec exec = Exec::parallel;
};

struct ElboTerms {
  double rec = 0.0;
  double kl = 0.0;
};

/// Single-sample ELBO terms: rec from the first noise draw through decode, kl from all draws
/// (closed form when mode is closed and the density has one component).
using DecodeFn = std::function<Vec(const Vec&)>;
ElboTerms elbo_terms(const Vec& x, const DiagGaussian& q, const MixtureDensity& prior, std::span<const double> noise,
                     int draws, const DecodeFn& decode, KlMode mode);

/// (1/alpha) exp(clamp(-alpha (beta_rec rec + beta_neg kl), +-exp_clamp)).
double exp_elbo_term(const ElboTerms& fake, const GameHyper& h);

/// Scalar loss assembly. The exp term is averaged over the fake samples given.
double loss_encoder(const ElboTerms& real, std::span<const ElboTerms> fakes, const ResponsibilityVector& C,
                    const GameHyper& h);
double loss_encoder(const ElboTerms& real, const ElboTerms& fake, const ResponsibilityVector& C, const GameHyper& h);
double loss_decoder(const ElboTerms& real, double fake_rec_to_own_sg_target, double fake_kl, const GameHyper& h);
double loss_prior(double real_kl, double fake_kl_source_only, const GameHyper& h);

struct PlayerLosses {
  double L_E = 0.0;
  double L_D = 0.0;
  double L_P = 0.0;
  // "E.real_rec", "E.exp_elbo_term", "D.fake_kl", "P.real_kl", ...
  std::map<std::string, double> components;
};

/// Weighted re-sum of recorded sub-terms, for bookkeeping checks.
double recompose_L_E(const PlayerLosses& l, const GameHyper& h);
double recompose_L_D(const PlayerLosses& l, const GameHyper& h);
double recompose_L_P(const PlayerLosses& l, const GameHyper& h);

/// Every random draw one player step consumes.
struct StepNoise {
  NoiseBlock real;    // N x T x D; draw 0 also drives the reconstruction
  PriorSample fake;   // prior-sample ids and noise for D(z_lambda)
  NoiseBlock fakes;   // (N_f [+ N]) x T x D for encoding the fakes
};

StepNoise draw_step_noise(Engine& eng, int n_real, int n_fake, const MixtureDensity& prior,
                          const ObjectiveOptions& opt);

/// Latents of a prior sample re-evaluated for another density with the same ids and noise.
Mat prior_latents(const MixtureDensity& m, const PriorSample& s);

struct StepResult {
  double loss = 0.0;
  std::map<std::string, double> terms;
  Grads enc;        // zero unless the encoder is live
  Grads dec;        // zero unless the decoder is live
  PriorGrad prior;  // zero unless the prior is live
  Mat d_pseudo_inputs;  // warm-up with a VampPrior only
  Vec d_vamp_logits;
  ResponsibilityVector resp;  // expected responsibilities of the real batch
  int underflow = 0;
};

StepResult encoder_step(const Encoder& enc, const Decoder& dec, const MixturePrior& prior, const Mat& x,
                        const StepNoise& noise, const GameHyper& h, const ObjectiveOptions& opt);

/// Encoder loss against explicit fake data points (used by the encoder probe).
StepResult encoder_step_given_fakes(const Encoder& enc, const Decoder& dec, const MixturePrior& prior, const Mat& x,
                                    const Mat& xf, const NoiseBlock& real_noise, const NoiseBlock& fake_noise,
                                    const GameHyper& h, const ObjectiveOptions& opt);

StepResult decoder_step(const Encoder& enc, const Decoder& dec, const Decoder& dec_sg, const MixturePrior& prior,
                        const Mat& x, const StepNoise& noise, const GameHyper& h, const ObjectiveOptions& opt);

StepResult prior_step(const Encoder& enc, const Decoder& dec, const MixturePrior& prior, const MixturePrior& prior_sg,
                      const Mat& x, const StepNoise& noise, const GameHyper& h, const ObjectiveOptions& opt);

/// Plain beta-ELBO step for warm-up: gradients for encoder, decoder and whichever prior is given
/// (vamp non-null: VampPrior; otherwise the MixturePrior, live only if learnable_params).
StepResult vae_step(const Encoder& enc, const Decoder& dec, const MixturePrior& prior, const VampPseudoInputs* vamp,
                    const Mat& x, const StepNoise& noise, const GameHyper& h, const ObjectiveOptions& opt);

}  // namespace introprior

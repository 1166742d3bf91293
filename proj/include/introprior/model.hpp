#pragma once

#include "introprior/nets.hpp"
#include "introprior/objective.hpp"
#include "introprior/prior.hpp"

namespace introprior {

/// Encoder, decoder and the (exported-as-needed) prior of one run.
struct Model {
  Encoder enc;
  Decoder dec;
  MixturePrior prior;
  KlMode kl_mode = KlMode::mc;

  MixtureDensity density() const { return export_density(prior); }
};

}  // namespace introprior

#pragma once

#include "introprior/nets.hpp"

namespace introprior {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of arrays. Arrays with mask[k] == false are left untouched,
/// moments included. Parameters and moments are rounded to float after each update.
class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<ParamRef>& params, AdamConfig cfg);

  /// params must list the same arrays, in the same order, as at construction.
  void step(const std::vector<ParamRef>& params, const Grads& grads, const std::vector<bool>& mask = {});

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }

  /// Moment arrays, named after the parameter they belong to ("<name>.m", "<name>.v").
  std::vector<ParamRef> state();

 private:
  std::vector<std::string> names_;
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

}  // namespace introprior

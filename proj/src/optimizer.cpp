#include "introprior/optimizer.hpp"

namespace introprior {

Adam::Adam(const std::vector<ParamRef>& params, AdamConfig cfg) : cfg_(cfg) {
  require(cfg_.lr >= 0 && cfg_.eps > 0, "Adam: bad configuration");
  for (const auto& p : params) {
    names_.push_back(p.name);
    m_.push_back(Mat::Zero(p.rows, p.cols));
    v_.push_back(Mat::Zero(p.rows, p.cols));
  }
}

void Adam::step(const std::vector<ParamRef>& params, const Grads& grads, const std::vector<bool>& mask) {
  require(params.size() == names_.size() && grads.size() == names_.size(), "Adam::step: array count mismatch");
  require(mask.empty() || mask.size() == names_.size(), "Adam::step: mask size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t k = 0; k < names_.size(); ++k) {
    require(params[k].name == names_[k], "Adam::step: parameter order changed");
    if (!mask.empty() && !mask[k]) continue;
    const Mat& g = grads[k];
    require(g.rows() == m_[k].rows() && g.cols() == m_[k].cols(), "Adam::step: gradient shape mismatch for " + names_[k]);
    require(g.allFinite(), "Adam::step: non-finite gradient for " + names_[k]);
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    round_to_f32(m_[k]);
    round_to_f32(v_[k]);
    if (cfg_.lr == 0.0) continue;
    Eigen::Map<Mat> p = params[k].map();
    p.array() -= cfg_.lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + cfg_.eps);
    p = p.unaryExpr([](double v) { return to_f32(v); });
  }
}

std::vector<ParamRef> Adam::state() {
  std::vector<ParamRef> out;
  for (size_t k = 0; k < names_.size(); ++k) {
    out.emplace_back(names_[k] + ".m", m_[k]);
    out.emplace_back(names_[k] + ".v", v_[k]);
  }
  return out;
}

}  // namespace introprior

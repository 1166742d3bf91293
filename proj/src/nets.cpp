#include "introprior/nets.hpp"

namespace introprior {

Grads zero_grads(const std::vector<ParamRef>& params) {
  Grads g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(Mat::Zero(p.rows, p.cols));
  return g;
}

void add_grads(Grads& acc, const Grads& g, double scale) {
  require(acc.size() == g.size(), "add_grads: size mismatch");
  for (size_t k = 0; k < acc.size(); ++k) acc[k] += scale * g[k];
}

namespace {

inline double silu(double t) { return t * sigmoid(t); }
inline double silu_deriv(double t) {
  const double s = sigmoid(t);
  return s * (1.0 + t * (1.0 - s));
}

}  // namespace

Mlp::Mlp(std::vector<int> widths, Engine& init_rng) : widths_(std::move(widths)) {
  require(widths_.size() >= 2, "Mlp: need at least input and output widths");
  for (int w : widths_) require(w >= 1, "Mlp: widths must be positive");
  for (size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat w(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = u(init_rng);
    Mat b(out, 1);
    for (int r = 0; r < out; ++r) b(r, 0) = u(init_rng);
    round_to_f32(w);
    round_to_f32(b);
    weight_.push_back(std::move(w));
    bias_.push_back(std::move(b));
  }
}

Mat Mlp::forward(const Mat& x, Tape* tape) const {
  require(x.cols() == in_dim(), "Mlp::forward: input width mismatch");
  require_finite(x.allFinite(), "Mlp::forward: non-finite input");
  const size_t n_layers = weight_.size();
  if (tape) {
    tape->inputs.assign(n_layers, Mat());
    tape->pre.assign(n_layers, Mat());
  }
  Mat h = x;
  for (size_t l = 0; l < n_layers; ++l) {
    Mat a = h * weight_[l].transpose();
    a.rowwise() += bias_[l].col(0).transpose();
    if (tape) tape->inputs[l] = std::move(h);
    if (l + 1 == n_layers) return a;
    h = a.unaryExpr([](double t) { return silu(t); });
    if (tape) tape->pre[l] = std::move(a);
  }
  return h;
}

Mat Mlp::backward(const Tape& tape, const Mat& d_out, Grads* grads) const {
  const size_t n_layers = weight_.size();
  require(tape.inputs.size() == n_layers, "Mlp::backward: tape does not match network");
  require(d_out.cols() == out_dim() && d_out.rows() == tape.inputs[0].rows(), "Mlp::backward: gradient shape mismatch");
  Mat d = d_out;
  for (size_t l = n_layers; l-- > 0;) {
    if (l + 1 < n_layers) d.array() *= tape.pre[l].unaryExpr([](double t) { return silu_deriv(t); }).array();
    if (grads) {
      (*grads)[2 * l] += d.transpose() * tape.inputs[l];
      (*grads)[2 * l + 1] += d.colwise().sum().transpose();
    }
    d = d * weight_[l];
  }
  return d;
}

std::vector<ParamRef> Mlp::params(const std::string& prefix) {
  std::vector<ParamRef> out;
  for (size_t l = 0; l < weight_.size(); ++l) {
    out.emplace_back(prefix + ".l" + std::to_string(l) + ".weight", weight_[l]);
    out.emplace_back(prefix + ".l" + std::to_string(l) + ".bias", bias_[l]);
  }
  return out;
}

Grads Mlp::zero_grads() const {
  Grads g;
  for (size_t l = 0; l < weight_.size(); ++l) {
    g.push_back(Mat::Zero(weight_[l].rows(), weight_[l].cols()));
    g.push_back(Mat::Zero(bias_[l].rows(), 1));
  }
  return g;
}

namespace {

std::vector<int> widths_for(int in, int out, int hidden, int layers) {
  require(hidden >= 1 && layers >= 0, "network: bad hidden size or depth");
  std::vector<int> w{in};
  for (int l = 0; l < layers; ++l) w.push_back(hidden);
  w.push_back(out);
  return w;
}

}  // namespace

Encoder::Encoder(int data_dim, int latent_dim, int hidden, int layers, Engine& init_rng)
    : net_(widths_for(data_dim, 2 * latent_dim, hidden, layers), init_rng) {}

PosteriorBatch Encoder::encode(const Mat& x, Tape* tape) const {
  require(x.cols() == data_dim(), "encode: data width mismatch");
  const Mat out = net_.forward(x, tape);
  const int d = latent_dim();
  return PosteriorBatch{out.leftCols(d), out.rightCols(d)};
}

Mat Encoder::backward(const Tape& tape, const Mat& d_mean, const Mat& d_log_var, Grads* grads) const {
  Mat d_out(d_mean.rows(), 2 * latent_dim());
  d_out << d_mean, d_log_var;
  return net_.backward(tape, d_out, grads);
}

Decoder::Decoder(int latent_dim, int data_dim, int hidden, int layers, Engine& init_rng)
    : net_(widths_for(latent_dim, data_dim, hidden, layers), init_rng) {}

Vec rec_loss(const Mat& xhat, const Mat& x) {
  require(xhat.rows() == x.rows() && xhat.cols() == x.cols(), "rec_loss: shape mismatch");
  return 0.5 * (xhat - x).rowwise().squaredNorm();
}

}  // namespace introprior

#pragma once

// Small MLPs with hand-written backprop. Batches are rows.

#include "introprior/kernels.hpp"
#include "introprior/rng.hpp"

#include <string>

namespace introprior {

/// A named view of a mutable parameter array (matrix or vector).
struct ParamRef {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  ParamRef(std::string n, Mat& m) : name(std::move(n)), data(m.data()), rows(m.rows()), cols(m.cols()) {}
  ParamRef(std::string n, Vec& v) : name(std::move(n)), data(v.data()), rows(v.size()), cols(1) {}

  Eigen::Map<Mat> map() const { return Eigen::Map<Mat>(data, rows, cols); }
};

/// Gradients laid out parallel to a params() list.
using Grads = std::vector<Mat>;

Grads zero_grads(const std::vector<ParamRef>& params);
void add_grads(Grads& acc, const Grads& g, double scale = 1.0);

/// Activations cached by Mlp::forward for one later backward call.
struct Tape {
  std::vector<Mat> inputs;  // input to each layer
  std::vector<Mat> pre;     // pre-activation of each hidden layer
};

class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, h1, ..., out}; SiLU between layers, linear output.
  Mlp(std::vector<int> widths, Engine& init_rng);

  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }

  Mat forward(const Mat& x, Tape* tape = nullptr) const;

  /// Returns dL/dx. Parameter gradients are added into grads when non-null.
  Mat backward(const Tape& tape, const Mat& d_out, Grads* grads) const;

  std::vector<ParamRef> params(const std::string& prefix);
  Grads zero_grads() const;

 private:
  std::vector<int> widths_;
  std::vector<Mat> weight_;  // out x in
  std::vector<Mat> bias_;    // out x 1
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(int data_dim, int latent_dim, int hidden, int layers, Engine& init_rng);

  int data_dim() const { return net_.in_dim(); }
  int latent_dim() const { return net_.out_dim() / 2; }

  PosteriorBatch encode(const Mat& x, Tape* tape = nullptr) const;
  /// Backprop dL/d(mean, log_var); returns dL/dx.
  Mat backward(const Tape& tape, const Mat& d_mean, const Mat& d_log_var, Grads* grads) const;

  std::vector<ParamRef> params() { return net_.params("encoder"); }
  Grads zero_grads() const { return net_.zero_grads(); }

 private:
  Mlp net_;
};

/// Unit-variance Gaussian likelihood; decode returns the mean.
class Decoder {
 public:
  Decoder() = default;
  Decoder(int latent_dim, int data_dim, int hidden, int layers, Engine& init_rng);

  int latent_dim() const { return net_.in_dim(); }
  int data_dim() const { return net_.out_dim(); }

  Mat decode(const Mat& z, Tape* tape = nullptr) const { return net_.forward(z, tape); }
  Mat backward(const Tape& tape, const Mat& d_x, Grads* grads) const { return net_.backward(tape, d_x, grads); }

  std::vector<ParamRef> params() { return net_.params("decoder"); }
  Grads zero_grads() const { return net_.zero_grads(); }

 private:
  Mlp net_;
};

/// Per-sample 0.5 * ||xhat - x||^2.
Vec rec_loss(const Mat& xhat, const Mat& x);

}  // namespace introprior

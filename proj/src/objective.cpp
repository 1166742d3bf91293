#include "introprior/objective.hpp"

#include <algorithm>

namespace introprior {

void GameHyper::validate() const {
  require(alpha >= 1.0, "hyper.alpha must be >= 1");
  require(gamma >= 0 && gamma_rho >= 0, "hyper.gamma and hyper.gamma_rho must be >= 0");
  require(beta_rec >= 0 && beta_kl >= 0 && beta_neg >= 0, "hyper betas must be >= 0");
  require(r_entropy >= 0, "hyper.r_entropy must be >= 0");
  require(exp_clamp > 0, "hyper.exp_clamp must be > 0");
}

ElboTerms elbo_terms(const Vec& x, const DiagGaussian& q, const MixtureDensity& prior, std::span<const double> noise,
                     int draws, const DecodeFn& decode, KlMode mode) {
  require(draws >= 1, "elbo_terms: need at least one draw");
  require(noise.size() == static_cast<size_t>(draws) * q.dim(), "elbo_terms: noise block has wrong size");
  const Eigen::Map<const Vec> eps0(noise.data(), q.dim());
  const Vec xhat = decode(sample_reparam(q, eps0));
  require(xhat.size() == x.size(), "elbo_terms: decoder output width mismatch");
  ElboTerms t;
  t.rec = 0.5 * (xhat - x).squaredNorm();
  if (mode == KlMode::closed && prior.modes() == 1)
    t.kl = kl_closed(q, prior.component(0));
  else
    t.kl = kl_mc(q, prior, draws, noise);
  return t;
}

double exp_elbo_term(const ElboTerms& fake, const GameHyper& h) {
  const double arg = -h.alpha * (h.beta_rec * fake.rec + h.beta_neg * fake.kl);
  return std::exp(std::clamp(arg, -h.exp_clamp, h.exp_clamp)) / h.alpha;
}

double loss_encoder(const ElboTerms& real, std::span<const ElboTerms> fakes, const ResponsibilityVector& C,
                    const GameHyper& h) {
  require(!fakes.empty(), "loss_encoder: no fake samples");
  double exp_term = 0.0;
  for (const auto& f : fakes) exp_term += exp_elbo_term(f, h);
  exp_term /= static_cast<double>(fakes.size());
  return h.beta_rec * real.rec + h.beta_kl * real.kl + exp_term - h.r_entropy * entropy(C);
}

double loss_encoder(const ElboTerms& real, const ElboTerms& fake, const ResponsibilityVector& C, const GameHyper& h) {
  return loss_encoder(real, std::span<const ElboTerms>(&fake, 1), C, h);
}

double loss_decoder(const ElboTerms& real, double fake_rec_to_own_sg_target, double fake_kl, const GameHyper& h) {
  return h.beta_rec * real.rec + h.gamma * (h.gamma_rho * h.beta_rec * fake_rec_to_own_sg_target + h.beta_kl * fake_kl);
}

double loss_prior(double real_kl, double fake_kl_source_only, const GameHyper& h) {
  return h.beta_kl * real_kl + h.gamma * h.beta_kl * fake_kl_source_only;
}

namespace {

double comp(const PlayerLosses& l, const std::string& key) {
  auto it = l.components.find(key);
  require(it != l.components.end(), "missing loss component " + key);
  return it->second;
}

}  // namespace

double recompose_L_E(const PlayerLosses& l, const GameHyper& h) {
  return h.beta_rec * comp(l, "E.real_rec") + h.beta_kl * comp(l, "E.real_kl") + comp(l, "E.exp_elbo_term") +
         comp(l, "E.entropy_reg");
}

double recompose_L_D(const PlayerLosses& l, const GameHyper& h) {
  return h.beta_rec * comp(l, "D.real_rec") +
         h.gamma * (h.gamma_rho * h.beta_rec * comp(l, "D.fake_rec") + h.beta_kl * comp(l, "D.fake_kl"));
}

double recompose_L_P(const PlayerLosses& l, const GameHyper& h) {
  return h.beta_kl * comp(l, "P.real_kl") + h.gamma * h.beta_kl * comp(l, "P.fake_kl");
}

namespace {

bool use_closed(const MixtureDensity& m, const ObjectiveOptions& opt) {
  return opt.kl_mode == KlMode::closed && m.modes() == 1;
}

BatchKlResult batch_kl(const PosteriorBatch& q, const MixtureDensity& m, const NoiseBlock& noise, TargetGrad target,
                       const ObjectiveOptions& opt) {
  BatchKlOptions o;
  o.target = target;
  if (use_closed(m, opt)) return kl_closed_batch(q, m, o);
  return kl_mc_batch(q, m, noise, o, opt.exec);
}

// z = mean + sigma * (draw 0 of each sample's noise)
Mat reparam_first(const PosteriorBatch& q, const NoiseBlock& nb) {
  const int n = q.size();
  const int d = q.dim();
  require(nb.samples >= n && nb.dim == d, "step noise does not match the batch");
  Mat z(n, d);
  for (int s = 0; s < n; ++s) {
    const auto eps = nb.sample(s);
    for (int j = 0; j < d; ++j) z(s, j) = q.mean(s, j) + std::exp(0.5 * q.log_var(s, j)) * eps[j];
  }
  return z;
}

// Adds dL/dz of reparam_first into (d_mean, d_log_var).
void reparam_first_backward(const PosteriorBatch& q, const NoiseBlock& nb, const Mat& dz, Mat& d_mean,
                            Mat& d_log_var) {
  for (int s = 0; s < q.size(); ++s) {
    const auto eps = nb.sample(s);
    for (int j = 0; j < q.dim(); ++j) {
      d_mean(s, j) += dz(s, j);
      d_log_var(s, j) += dz(s, j) * 0.5 * std::exp(0.5 * q.log_var(s, j)) * eps[j];
    }
  }
}

void check_step_noise(const StepNoise& noise, int n_real, int dim) {
  require(noise.real.samples == n_real && noise.real.dim == dim, "step noise: real block shape mismatch");
  require(noise.fake.latents.rows() >= 1, "step noise: no fake samples");
}

// Fake latents: z_lambda for the prior sample, followed by sg(z_real) when reconstructions count as fakes.
Mat fake_latents(const MixtureDensity& prior, const StepNoise& noise, const Mat* z_real) {
  const Mat z_lambda = prior_latents(prior, noise.fake);
  if (!z_real) return z_lambda;
  Mat out(z_lambda.rows() + z_real->rows(), z_lambda.cols());
  out << z_lambda, *z_real;
  return out;
}

ResponsibilityVector expected_resp(const BatchKlResult& kl, int n, int draws) {
  const int modes = static_cast<int>(kl.resp_sum.size());
  ResponsibilityVector c;
  c.values = (kl.resp_sum.array() + static_cast<double>(kl.underflow) / (draws * modes)) / n;
  c.underflow = kl.underflow > 0;
  return c;
}

}  // namespace

Mat prior_latents(const MixtureDensity& m, const PriorSample& s) {
  Mat z(s.latents.rows(), m.dim());
  for (int k = 0; k < z.rows(); ++k) {
    const int i = s.ids[k];
    require(i >= 0 && i < m.modes(), "prior_latents: component id out of range");
    for (int j = 0; j < m.dim(); ++j) z(k, j) = m.means()(i, j) + std::exp(0.5 * m.log_vars()(i, j)) * s.noise(k, j);
  }
  return z;
}

StepNoise draw_step_noise(Engine& eng, int n_real, int n_fake, const MixtureDensity& prior,
                          const ObjectiveOptions& opt) {
  require(n_real >= 1 && n_fake >= 1, "draw_step_noise: batch sizes must be >= 1");
  require(opt.draws >= 1, "draw_step_noise: need at least one draw");
  const int t = use_closed(prior, opt) ? 1 : opt.draws;
  const int d = prior.dim();
  StepNoise s;
  s.real = normal_block(eng, n_real, t, d);
  s.fake = sample_prior(prior, n_fake, eng);
  s.fakes = normal_block(eng, n_fake + (opt.fakes_include_reconstructions ? n_real : 0), t, d);
  return s;
}

StepResult encoder_step(const Encoder& enc, const Decoder& dec, const MixturePrior& prior, const Mat& x,
                        const StepNoise& noise, const GameHyper& h, const ObjectiveOptions& opt) {
  const int n = static_cast<int>(x.rows());
  const MixtureDensity p = export_density(prior);
  check_step_noise(noise, n, p.dim());
  Mat zr;
  if (opt.fakes_include_reconstructions) zr = reparam_first(enc.encode(x), noise.real);
  const Mat xf = dec.decode(fake_latents(p, noise, opt.fakes_include_reconstructions ? &zr : nullptr));
  return encoder_step_given_fakes(enc, dec, prior, x, xf, noise.real, noise.fakes, h, opt);
}

StepResult encoder_step_given_fakes(const Encoder& enc, const Decoder& dec, const MixturePrior& prior, const Mat& x,
                                    const Mat& xf, const NoiseBlock& real_noise, const NoiseBlock& fake_noise,
                                    const GameHyper& h, const ObjectiveOptions& opt) {
  h.validate();
  const int n = static_cast<int>(x.rows());
  const MixtureDensity p = export_density(prior);
  require(real_noise.samples == n && real_noise.dim == p.dim(), "step noise: real block shape mismatch");
  StepResult r;
  r.enc = enc.zero_grads();
  r.dec = dec.zero_grads();
  r.prior = PriorGrad::zeros(prior.modes(), prior.dim());

  // real batch
  Tape te, td;
  const PosteriorBatch q = enc.encode(x, &te);
  const Mat z = reparam_first(q, real_noise);
  const Mat xhat = dec.decode(z, &td);
  const Vec rec = rec_loss(xhat, x);
  const BatchKlResult kl = batch_kl(q, p, real_noise, TargetGrad::frozen, opt);
  r.resp = expected_resp(kl, n, real_noise.draws);
  r.underflow = kl.underflow;
  const double h_c = entropy(r.resp);

  Mat d_mean = (h.beta_kl / n) * kl.d_mean;
  Mat d_log_var = (h.beta_kl / n) * kl.d_log_var;
  const Mat dz = dec.backward(td, (h.beta_rec / n) * (xhat - x), nullptr);
  reparam_first_backward(q, real_noise, dz, d_mean, d_log_var);
  if (h.r_entropy > 0 && p.modes() > 1) {
    const Vec log_c = r.resp.values.array().log();
    const PosteriorGrad g =
        neg_entropy_latent_grad(q, p, real_noise, log_c, h.r_entropy / (static_cast<double>(n) * real_noise.draws),
                                opt.exec);
    d_mean += g.d_mean;
    d_log_var += g.d_log_var;
  }
  enc.backward(te, d_mean, d_log_var, &r.enc);

  // fakes are constants here
  const int nf = static_cast<int>(xf.rows());
  require(fake_noise.samples == nf && fake_noise.dim == p.dim(), "step noise: fake block shape mismatch");
  Tape tfe, tfd;
  const PosteriorBatch qf = enc.encode(xf, &tfe);
  const Mat zf = reparam_first(qf, fake_noise);
  const Mat xfhat = dec.decode(zf, &tfd);
  const Vec rec_f = rec_loss(xfhat, xf);
  const BatchKlResult kl_f = batch_kl(qf, p, fake_noise, TargetGrad::frozen, opt);

  double exp_term = 0.0;
  Vec w_rec(nf), w_kl(nf);
  for (int s = 0; s < nf; ++s) {
    const double arg = -h.alpha * (h.beta_rec * rec_f[s] + h.beta_neg * kl_f.kl[s]);
    const double e = std::exp(std::clamp(arg, -h.exp_clamp, h.exp_clamp));
    exp_term += e / h.alpha / nf;
    const bool clamped = arg <= -h.exp_clamp || arg >= h.exp_clamp;
    w_rec[s] = clamped ? 0.0 : -h.beta_rec * e / nf;
    w_kl[s] = clamped ? 0.0 : -h.beta_neg * e / nf;
  }
  Mat df_mean = kl_f.d_mean.array().colwise() * w_kl.array();
  Mat df_log_var = kl_f.d_log_var.array().colwise() * w_kl.array();
  const Mat dxfhat = (xfhat - xf).array().colwise() * w_rec.array();
  const Mat dzf = dec.backward(tfd, dxfhat, nullptr);
  reparam_first_backward(qf, fake_noise, dzf, df_mean, df_log_var);
  enc.backward(tfe, df_mean, df_log_var, &r.enc);

  r.terms["real_rec"] = rec.mean();
  r.terms["real_kl"] = kl.kl.mean();
  r.terms["fake_rec"] = rec_f.mean();
  r.terms["fake_kl"] = kl_f.kl.mean();
  r.terms["exp_elbo_term"] = exp_term;
  r.terms["entropy"] = h_c;
  r.terms["entropy_reg"] = -h.r_entropy * h_c;
  r.terms["resp_entropy_norm"] = normalized_entropy(r.resp);
  r.loss = h.beta_rec * r.terms["real_rec"] + h.beta_kl * r.terms["real_kl"] + exp_term + r.terms["entropy_reg"];
  return r;
}

StepResult decoder_step(const Encoder& enc, const Decoder& dec, const Decoder& dec_sg, const MixturePrior& prior,
                        const Mat& x, const StepNoise& noise, const GameHyper& h, const ObjectiveOptions& opt) {
  h.validate();
  const int n = static_cast<int>(x.rows());
  const MixtureDensity p = export_density(prior);
  check_step_noise(noise, n, p.dim());
  StepResult r;
  r.enc = enc.zero_grads();
  r.dec = dec.zero_grads();
  r.prior = PriorGrad::zeros(prior.modes(), prior.dim());

  // real reconstruction; the encoder is a constant here
  const PosteriorBatch q = enc.encode(x);
  const Mat z = reparam_first(q, noise.real);
  Tape tr;
  const Mat xhat = dec.decode(z, &tr);
  const Vec rec = rec_loss(xhat, x);
  dec.backward(tr, (h.beta_rec / n) * (xhat - x), &r.dec);

  const Mat* zr = opt.fakes_include_reconstructions ? &z : nullptr;
  const Mat zl = fake_latents(p, noise, zr);
  const int nf = static_cast<int>(zl.rows());
  require(noise.fakes.samples == nf, "step noise: fake block shape mismatch");

  // KL path: gradient reaches the decoder through the frozen encoder
  Tape ta, tfe;
  const Mat xf = dec.decode(zl, &ta);
  const PosteriorBatch qf = enc.encode(xf, &tfe);
  const BatchKlResult kl_f = batch_kl(qf, p, noise.fakes, TargetGrad::frozen, opt);
  const double wk = h.gamma * h.beta_kl / nf;
  const Mat dxf = enc.backward(tfe, wk * kl_f.d_mean, wk * kl_f.d_log_var, nullptr);
  dec.backward(ta, dxf, &r.dec);

  // reconstruction of the fakes: target and latent come from the stopped copy
  const bool same = &dec == &dec_sg;
  const Mat xf_sg = same ? xf : dec_sg.decode(zl);
  const PosteriorBatch qf_sg = same ? qf : enc.encode(xf_sg);
  const Mat zf = reparam_first(qf_sg, noise.fakes);
  Tape tb;
  const Mat xfhat = dec.decode(zf, &tb);
  const Vec rec_f = rec_loss(xfhat, xf_sg);
  dec.backward(tb, (h.gamma * h.gamma_rho * h.beta_rec / nf) * (xfhat - xf_sg), &r.dec);

  r.terms["real_rec"] = rec.mean();
  r.terms["fake_rec"] = rec_f.mean();
  r.terms["fake_kl"] = kl_f.kl.mean();
  r.underflow = kl_f.underflow;
  r.loss = loss_decoder(ElboTerms{r.terms["real_rec"], 0.0}, r.terms["fake_rec"], r.terms["fake_kl"], h);
  return r;
}

StepResult prior_step(const Encoder& enc, const Decoder& dec, const MixturePrior& prior, const MixturePrior& prior_sg,
                      const Mat& x, const StepNoise& noise, const GameHyper& h, const ObjectiveOptions& opt) {
  h.validate();
  const int n = static_cast<int>(x.rows());
  const MixtureDensity p = export_density(prior);
  const MixtureDensity p_sg = &prior == &prior_sg ? p : export_density(prior_sg);
  require(p.modes() == p_sg.modes() && p.dim() == p_sg.dim(), "prior_step: stopped copy has another shape");
  check_step_noise(noise, n, p.dim());
  StepResult r;
  r.enc = enc.zero_grads();
  r.dec = dec.zero_grads();
  r.prior = PriorGrad::zeros(prior.modes(), prior.dim());

  // prior as target of the real KL
  const PosteriorBatch q = enc.encode(x);
  const BatchKlResult kl = batch_kl(q, p, noise.real, TargetGrad::propagate, opt);
  const double wr = h.beta_kl / n;
  Mat d_means = wr * kl.d_means;
  Mat d_log_vars = wr * kl.d_log_vars;
  const Vec d_log_weights = wr * kl.d_log_weights;

  // prior as source of the fakes; the target inside the fake KL is the stopped copy
  const Mat z = reparam_first(q, noise.real);
  const Mat* zr = opt.fakes_include_reconstructions ? &z : nullptr;
  const Mat zl = fake_latents(p, noise, zr);
  const int nf = static_cast<int>(zl.rows());
  require(noise.fakes.samples == nf, "step noise: fake block shape mismatch");
  Tape td, te;
  const Mat xf = dec.decode(zl, &td);
  const PosteriorBatch qf = enc.encode(xf, &te);
  const BatchKlResult kl_f = batch_kl(qf, p_sg, noise.fakes, TargetGrad::frozen, opt);
  const double wf = h.gamma * h.beta_kl / nf;
  const Mat dxf = enc.backward(te, wf * kl_f.d_mean, wf * kl_f.d_log_var, nullptr);
  const Mat dzl = dec.backward(td, dxf, nullptr);
  sample_prior_backward(p, noise.fake, dzl.topRows(noise.fake.latents.rows()), d_means, d_log_vars);

  r.prior = export_backward(prior, d_means, d_log_vars, d_log_weights);
  if (!prior.learnable_contributions) r.prior.d_energy_logits.setZero();

  r.terms["real_kl"] = kl.kl.mean();
  r.terms["fake_kl"] = kl_f.kl.mean();
  r.underflow = kl.underflow + kl_f.underflow;
  r.resp = expected_resp(kl, n, noise.real.draws);
  r.loss = loss_prior(r.terms["real_kl"], r.terms["fake_kl"], h);
  return r;
}

StepResult vae_step(const Encoder& enc, const Decoder& dec, const MixturePrior& prior, const VampPseudoInputs* vamp,
                    const Mat& x, const StepNoise& noise, const GameHyper& h, const ObjectiveOptions& opt) {
  h.validate();
  const int n = static_cast<int>(x.rows());
  StepResult r;
  r.enc = enc.zero_grads();
  r.dec = dec.zero_grads();
  r.prior = PriorGrad::zeros(prior.modes(), prior.dim());

  Tape tp;
  Vec vamp_lw;
  PosteriorBatch pseudo;
  MixtureDensity p = MixtureDensity::standard_normal(enc.latent_dim());
  if (vamp) {
    pseudo = enc.encode(vamp->pseudo_inputs, &tp);
    vamp_lw = mixture_weights(vamp->energy_logits);
    p = MixtureDensity(pseudo.mean, pseudo.log_var, vamp_lw);
  } else {
    p = export_density(prior);
  }
  require(noise.real.samples == n && noise.real.dim == p.dim(), "step noise: real block shape mismatch");
  const bool prior_live = vamp != nullptr || prior.learnable_params;

  Tape te, td;
  const PosteriorBatch q = enc.encode(x, &te);
  const Mat z = reparam_first(q, noise.real);
  const Mat xhat = dec.decode(z, &td);
  const Vec rec = rec_loss(xhat, x);
  const BatchKlResult kl = batch_kl(q, p, noise.real, prior_live ? TargetGrad::propagate : TargetGrad::frozen, opt);
  r.resp = expected_resp(kl, n, noise.real.draws);
  r.underflow = kl.underflow;

  Mat d_mean = (h.beta_kl / n) * kl.d_mean;
  Mat d_log_var = (h.beta_kl / n) * kl.d_log_var;
  const Mat dz = dec.backward(td, (h.beta_rec / n) * (xhat - x), &r.dec);
  reparam_first_backward(q, noise.real, dz, d_mean, d_log_var);
  enc.backward(te, d_mean, d_log_var, &r.enc);

  if (prior_live) {
    const double w = h.beta_kl / n;
    if (vamp) {
      r.d_pseudo_inputs = enc.backward(tp, w * kl.d_means, w * kl.d_log_vars, &r.enc);
      r.d_vamp_logits = mixture_weights_backward(vamp_lw, w * kl.d_log_weights);
    } else {
      r.prior = export_backward(prior, w * kl.d_means, w * kl.d_log_vars, w * kl.d_log_weights);
      if (!prior.learnable_contributions) r.prior.d_energy_logits.setZero();
    }
  }

  r.terms["real_rec"] = rec.mean();
  r.terms["real_kl"] = kl.kl.mean();
  r.terms["resp_entropy_norm"] = normalized_entropy(r.resp);
  r.loss = h.beta_rec * r.terms["real_rec"] + h.beta_kl * r.terms["real_kl"];
  return r;
}

}  // namespace introprior

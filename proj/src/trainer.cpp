#include "introprior/trainer.hpp"

#include "introprior/checkpoint.hpp"
#include "introprior/data2d.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace introprior {

std::string phase_name(Phase p) { return p == Phase::warmup ? "warmup" : "adversarial"; }

Phase parse_phase(const std::string& s) {
  if (s == "warmup") return Phase::warmup;
  if (s == "adversarial") return Phase::adversarial;
  throw Error("unknown phase '" + s + "'");
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {
      "L_E",       "L_D",          "L_P",          "E.real_rec",     "E.real_kl",   "E.fake_rec",
      "E.fake_kl", "E.exp_elbo_term", "E.entropy_reg", "D.real_rec", "D.fake_rec",  "D.fake_kl",
      "P.real_kl", "P.fake_kl",    "vae_loss",     "resp_entropy_norm", "prior_lv_max", "prior_lv_excess",
      "underflow", "gnelbo",       "hist_kl",      "hist_jsd"};
  return cols;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "epoch,phase";
  for (const auto& c : metric_columns()) os << ',' << c;
  os << '\n';
  for (const auto& r : rows) {
    os << r.epoch << ',' << phase_name(r.phase);
    for (const auto& c : metric_columns()) {
      os << ',';
      auto it = r.values.find(c);
      if (it != r.values.end()) os << fmt(it->second);
    }
    os << '\n';
  }
  return os.str();
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "metrics.csv: missing header");
  const auto header = split(line, ',');
  require(header.size() >= 2 && header[0] == "epoch" && header[1] == "phase", "metrics.csv: bad header");
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    require(cells.size() == header.size(), "metrics.csv: row has " + std::to_string(cells.size()) + " cells");
    MetricRow r;
    r.epoch = std::stoi(cells[0]);
    r.phase = parse_phase(cells[1]);
    for (size_t k = 2; k < cells.size(); ++k)
      if (!cells[k].empty()) r.values[header[k]] = std::stod(cells[k]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ParamRef> TrainState::prior_params() {
  return {ParamRef("prior.means", model.prior.means), ParamRef("prior.raw_log_vars", model.prior.raw_log_vars),
          ParamRef("prior.energy_logits", model.prior.energy_logits)};
}

std::vector<ParamRef> TrainState::vamp_params() {
  return {ParamRef("vamp.pseudo_inputs", vamp.pseudo_inputs), ParamRef("vamp.energy_logits", vamp.energy_logits)};
}

TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.cfg = cfg;
  Engine init = make_engine(cfg.seed, Stream::init);
  const int D = cfg.latent_dim;
  s.model.enc = Encoder(2, D, cfg.hidden, cfg.layers, init);
  s.model.dec = Decoder(D, 2, cfg.hidden, cfg.layers, init);
  s.model.kl_mode = cfg.kl_mode;

  switch (cfg.prior_kind) {
    case PriorKind::sg:
      s.model.prior = MixturePrior::standard_gaussian(D);
      break;
    case PriorKind::mog: {
      MixturePrior& p = s.model.prior;
      p.means = normal_matrix(init, cfg.modes, D);
      round_to_f32(p.means);
      p.raw_log_vars = Mat::Zero(cfg.modes, D);
      p.energy_logits = Vec::Zero(cfg.modes);
      p.learnable_params = true;
      p.learnable_contributions = cfg.learnable_contributions;
      p.clipping_enabled = false;
      break;
    }
    case PriorKind::vamp_to_mog: {
      s.model.prior = MixturePrior::standard_gaussian(D);
      s.vamp.pseudo_inputs = sample_dataset(cfg.dataset, cfg.modes, init);
      round_to_f32(s.vamp.pseudo_inputs);
      s.vamp.energy_logits = Vec::Zero(cfg.modes);
      break;
    }
  }

  s.opt_enc = Adam(s.model.enc.params(), cfg.adam_encoder);
  s.opt_dec = Adam(s.model.dec.params(), cfg.adam_decoder);
  s.opt_prior = Adam(s.prior_params(), cfg.adam_prior);
  if (cfg.prior_kind == PriorKind::vamp_to_mog) s.opt_vamp = Adam(s.vamp_params(), cfg.adam_prior);
  s.data_rng = make_engine(cfg.seed, Stream::data);
  s.noise_rng = make_engine(cfg.seed, Stream::noise);
  s.phase = cfg.warmup_epochs > 0 ? Phase::warmup : Phase::adversarial;
  if (s.phase == Phase::adversarial) transition_to_adversarial(s);
  return s;
}

double prior_lv_excess(const MixturePrior& p) {
  // NaN until the transition has set a non-empty clip range
  if (p.clip_hi.size() != p.dim() || p.clip_lo.size() != p.dim() || !(p.clip_lo.array() < p.clip_hi.array()).all())
    return std::numeric_limits<double>::quiet_NaN();
  const Mat lv = export_density(p).log_vars();
  return (lv.rowwise() - p.clip_hi.transpose()).maxCoeff();
}

bool prior_inside_envelope(const MixturePrior& p) {
  if (!p.clipping_enabled) return true;
  const Mat lv = export_density(p).log_vars();
  for (int j = 0; j < p.dim(); ++j) {
    const double beta = p.clip_K / (p.clip_hi(j) - p.clip_lo(j));
    const double lo = p.clip_lo(j) - 2.0 / beta, hi = p.clip_hi(j) + 2.0 / beta;
    for (int i = 0; i < p.modes(); ++i)
      if (!(lv(i, j) > lo && lv(i, j) < hi)) return false;
  }
  return true;
}

namespace {

bool grads_finite(const Grads& g) {
  for (const auto& m : g)
    if (!m.allFinite()) return false;
  return true;
}

[[noreturn]] void abort_step(const std::string& player, const std::string& detail, const StepResult* r, const Mat& x,
                             const TrainState& s, const TrainHooks& hooks) {
  std::string where = "non-finite " + player + " step at epoch " + std::to_string(s.epoch) + " (" +
                      phase_name(s.phase) + "): " + detail;
  if (hooks.dump_dir) {
    std::filesystem::create_directories(*hooks.dump_dir);
    const auto file = *hooks.dump_dir / "nonfinite_batch.txt";
    std::ofstream out(file);
    out << "# " << where << "\n";
    if (r)
      for (const auto& [k, v] : r->terms) out << "# " << k << " = " << fmt(v) << "\n";
    for (Eigen::Index i = 0; i < x.rows(); ++i) out << fmt(x(i, 0)) << ' ' << fmt(x(i, 1)) << '\n';
    where += "; batch written to " + file.string();
  }
  throw NonFiniteLoss(where);
}

// Runs one player's step; NaN/Inf anywhere in the forward pass, the loss or the gradients aborts training.
template <typename F>
StepResult guarded_step(const std::string& player, const Mat& x, const TrainState& s, const TrainHooks& hooks, F&& fn) {
  StepResult r;
  try {
    r = fn();
  } catch (const NonFiniteLoss& e) {
    abort_step(player, e.what(), nullptr, x, s, hooks);
  }
  const bool ok = std::isfinite(r.loss) && grads_finite(r.enc) && grads_finite(r.dec) &&
                  r.prior.d_means.allFinite() && r.prior.d_raw_log_vars.allFinite() &&
                  r.prior.d_energy_logits.allFinite() && r.d_pseudo_inputs.allFinite() &&
                  r.d_vamp_logits.allFinite();
  if (!ok) abort_step(player, "loss = " + fmt(r.loss), &r, x, s, hooks);
  return r;
}

Grads prior_grads(const PriorGrad& g) { return {g.d_means, g.d_raw_log_vars, Mat(g.d_energy_logits)}; }

StepNoise real_noise_only(Engine& eng, int n, const MixtureDensity& p, const ObjectiveOptions& opt) {
  StepNoise sn;
  const int t = (opt.kl_mode == KlMode::closed && p.modes() == 1) ? 1 : opt.draws;
  sn.real = normal_block(eng, n, t, p.dim());
  return sn;
}

void notify(const TrainHooks& hooks, const TrainState& s, const char* player) {
  if (hooks.observer) hooks.observer(s, player);
}

struct EpochAccumulator {
  std::map<std::string, double> sums;
  std::map<std::string, double> maxima;
  double underflow = 0;
  int steps = 0;

  void add(const std::string& k, double v) { sums[k] += v; }
  void max(const std::string& k, double v) {
    if (std::isnan(v)) return;
    auto it = maxima.find(k);
    if (it == maxima.end() || v > it->second) maxima[k] = v;
  }
  MetricRow row(int epoch, Phase phase) const {
    MetricRow r;
    r.epoch = epoch;
    r.phase = phase;
    for (const auto& [k, v] : sums) r.values[k] = v / steps;
    for (const auto& [k, v] : maxima) r.values[k] = v;
    r.values["underflow"] = underflow;
    return r;
  }
};

void track_prior(EpochAccumulator& acc, const MixturePrior& p) {
  acc.max("prior_lv_max", export_density(p).log_vars().maxCoeff());
  acc.max("prior_lv_excess", prior_lv_excess(p));
}

Mat draw_batch(TrainState& s) { return sample_dataset(s.cfg.dataset, s.cfg.batch_size, s.data_rng); }

void maybe_evaluate(TrainState& s, MetricRow& row) {
  const int total = s.cfg.warmup_epochs + s.cfg.adversarial_epochs;
  const bool last = s.epoch == total;
  const bool periodic = s.cfg.eval_every > 0 && s.epoch % s.cfg.eval_every == 0;
  if (!last && !periodic) return;
  const EvalReport rep = evaluate(s.model, s.cfg.dataset, s.cfg.eval, s.cfg.seed);
  s.last_report = rep;
  row.values["gnelbo"] = rep.gnelbo;
  row.values["hist_kl"] = rep.hist_kl;
  row.values["hist_jsd"] = rep.hist_jsd;
}

}  // namespace

MetricRow warmup_epoch(TrainState& s, const TrainHooks& hooks) {
  require(s.phase == Phase::warmup && s.epoch < s.cfg.warmup_epochs, "warmup_epoch: not in warm-up");
  const ObjectiveOptions opt = s.cfg.objective_options();
  const GameHyper& h = s.cfg.hyper;
  const bool vamp = s.vamp_active();
  EpochAccumulator acc;
  for (int step = 0; step < s.cfg.steps_per_epoch; ++step) {
    const Mat x = draw_batch(s);
    // noise shape depends only on the prior's dimension and mode count
    const MixtureDensity p = vamp ? MixtureDensity(Mat::Zero(s.vamp.modes(), s.cfg.latent_dim),
                                                   Mat::Zero(s.vamp.modes(), s.cfg.latent_dim),
                                                   mixture_weights(Vec::Zero(s.vamp.modes())))
                                  : s.model.density();
    const StepNoise sn = real_noise_only(s.noise_rng, s.cfg.batch_size, p, opt);
    const StepResult r = guarded_step("vae", x, s, hooks, [&] {
      return vae_step(s.model.enc, s.model.dec, s.model.prior, vamp ? &s.vamp : nullptr, x, sn, h, opt);
    });

    s.opt_enc.step(s.model.enc.params(), r.enc);
    s.opt_dec.step(s.model.dec.params(), r.dec);
    if (vamp) {
      s.opt_vamp.step(s.vamp_params(), {r.d_pseudo_inputs, Mat(r.d_vamp_logits)},
                      {true, s.cfg.learnable_contributions});
    } else if (s.model.prior.learnable_params) {
      s.opt_prior.step(s.prior_params(), prior_grads(r.prior), {true, true, s.model.prior.learnable_contributions});
    }
    notify(hooks, s, "vae");

    acc.steps++;
    acc.add("vae_loss", r.loss);
    acc.add("resp_entropy_norm", r.terms.at("resp_entropy_norm"));
    acc.underflow += r.underflow;
    if (!vamp) track_prior(acc, s.model.prior);
  }
  s.epoch++;
  MetricRow row = acc.row(s.epoch, Phase::warmup);
  if (s.epoch == s.cfg.warmup_epochs) transition_to_adversarial(s);
  maybe_evaluate(s, row);
  s.history.push_back(row);
  if (hooks.on_epoch_end) hooks.on_epoch_end(s);
  return row;
}

void transition_to_adversarial(TrainState& s) {
  require(s.phase == Phase::warmup || s.epoch == 0, "transition_to_adversarial: already adversarial");
  s.phase = Phase::adversarial;
  if (s.cfg.prior_kind == PriorKind::sg) return;
  MixturePrior& p = s.model.prior;
  if (s.cfg.prior_kind == PriorKind::vamp_to_mog) {
    p = vamp_to_mog(s.vamp, [&](const Mat& v) { return s.model.enc.encode(v); });
    round_to_f32(p.means);
    round_to_f32(p.raw_log_vars);
    s.vamp = VampPseudoInputs{};
    s.opt_vamp = Adam();
  }
  init_clip_ranges(p, s.cfg.clip_rho, s.cfg.clip_K);
  round_to_f32(p.clip_lo);
  round_to_f32(p.clip_hi);
  p.clipping_enabled = s.cfg.clip_enabled;
  p.learnable_params = s.cfg.intro_prior;
  p.learnable_contributions = s.cfg.intro_prior && s.cfg.learnable_contributions;
  p.validate();
  s.opt_prior = Adam(s.prior_params(), s.cfg.adam_prior);
}

PlayerLosses adversarial_step(TrainState& s, const Mat& x, const TrainHooks& hooks) {
  require(s.phase == Phase::adversarial, "adversarial_step: not in the adversarial phase");
  const ObjectiveOptions opt = s.cfg.objective_options();
  const GameHyper& h = s.cfg.hyper;
  const int n = static_cast<int>(x.rows());
  const int nf = s.cfg.fakes();
  PlayerLosses out;
  auto record = [&](const char* prefix, const StepResult& r) {
    for (const auto& [k, v] : r.terms) out.components[std::string(prefix) + "." + k] = v;
  };

  {
    const StepNoise sn = draw_step_noise(s.noise_rng, n, nf, s.model.density(), opt);
    const StepResult r = guarded_step("encoder", x, s, hooks, [&] { return encoder_step(s.model.enc, s.model.dec, s.model.prior, x, sn, h, opt); });
    s.opt_enc.step(s.model.enc.params(), r.enc);
    out.L_E = r.loss;
    record("E", r);
    out.components["E.underflow"] = r.underflow;
    notify(hooks, s, "encoder");
  }
  {
    const StepNoise sn = draw_step_noise(s.noise_rng, n, nf, s.model.density(), opt);
    const StepResult r = guarded_step("decoder", x, s, hooks, [&] { return decoder_step(s.model.enc, s.model.dec, s.model.dec, s.model.prior, x, sn, h, opt); });
    s.opt_dec.step(s.model.dec.params(), r.dec);
    out.L_D = r.loss;
    record("D", r);
    notify(hooks, s, "decoder");
  }
  if (s.model.prior.learnable_params) {
    const StepNoise sn = draw_step_noise(s.noise_rng, n, nf, s.model.density(), opt);
    const StepResult r = guarded_step("prior", x, s, hooks, [&] { return prior_step(s.model.enc, s.model.dec, s.model.prior, s.model.prior, x, sn, h, opt); });
    s.opt_prior.step(s.prior_params(), prior_grads(r.prior), {true, true, s.model.prior.learnable_contributions});
    out.L_P = r.loss;
    record("P", r);
    notify(hooks, s, "prior");
  } else {
    out.L_P = std::numeric_limits<double>::quiet_NaN();
  }
  if (!prior_inside_envelope(s.model.prior)) throw Error("prior log-variance left the soft-clip envelope");
  return out;
}

MetricRow adversarial_epoch(TrainState& s, const TrainHooks& hooks) {
  require(s.phase == Phase::adversarial, "adversarial_epoch: not in the adversarial phase");
  require(!s.finished(), "adversarial_epoch: run already finished");
  EpochAccumulator acc;
  static const char* kComponentCols[] = {"E.real_rec",  "E.real_kl",   "E.fake_rec",    "E.fake_kl",
                                         "E.exp_elbo_term", "E.entropy_reg", "D.real_rec", "D.fake_rec",
                                         "D.fake_kl",   "P.real_kl",   "P.fake_kl"};
  for (int step = 0; step < s.cfg.steps_per_epoch; ++step) {
    const Mat x = draw_batch(s);
    const PlayerLosses l = adversarial_step(s, x, hooks);
    acc.steps++;
    acc.add("L_E", l.L_E);
    acc.add("L_D", l.L_D);
    if (!std::isnan(l.L_P)) acc.add("L_P", l.L_P);
    for (const char* c : kComponentCols) {
      auto it = l.components.find(c);
      if (it != l.components.end()) acc.add(c, it->second);
    }
    acc.add("resp_entropy_norm", l.components.at("E.resp_entropy_norm"));
    acc.underflow += l.components.at("E.underflow");
    track_prior(acc, s.model.prior);
  }
  s.epoch++;
  MetricRow row = acc.row(s.epoch, Phase::adversarial);
  maybe_evaluate(s, row);
  s.history.push_back(row);
  if (hooks.on_epoch_end) hooks.on_epoch_end(s);
  return row;
}

void train_to_end(TrainState& s, const TrainHooks& hooks) {
  while (!s.finished()) {
    if (s.phase == Phase::warmup)
      warmup_epoch(s, hooks);
    else
      adversarial_epoch(s, hooks);
  }
}

namespace {

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed: " + p.string());
}

void write_manifest(const std::filesystem::path& dir, const TrainConfig& cfg, const std::string& start,
                    const std::string& end) {
  std::ostringstream os;
  os << "code_version = " << code_version() << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "start = " << start << "\n";
  os << "end = " << end << "\n";
  os << "metrics = metrics.csv\n";
  os << "checkpoint = checkpoint\n";
  os << "eval = eval.txt\n";
  std::istringstream cfg_lines(cfg.to_text());
  std::string line;
  while (std::getline(cfg_lines, line)) os << "config." << line << "\n";
  write_text(dir / "manifest.txt", os.str());
}

}  // namespace

RunArtifacts resume_run(TrainState s, const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  std::filesystem::create_directories(out_dir);
  const std::string start = timestamp();
  write_text(out_dir / "config.txt", s.cfg.to_text());
  write_manifest(out_dir, s.cfg, start, "");
  write_text(out_dir / "metrics.csv", metrics_csv(s.history));

  TrainHooks h = hooks;
  if (!h.dump_dir) h.dump_dir = out_dir;
  h.on_epoch_end = [&](const TrainState& st) {
    std::string row = metrics_csv({st.history.back()});
    row = row.substr(row.find('\n') + 1);
    std::ofstream out(out_dir / "metrics.csv", std::ios::app | std::ios::binary);
    out << row;
    save_checkpoint(st, out_dir / "checkpoint");
    if (hooks.on_epoch_end) hooks.on_epoch_end(st);
  };
  train_to_end(s, h);
  save_checkpoint(s, out_dir / "checkpoint");

  RunArtifacts a;
  a.dir = out_dir;
  a.report = s.last_report ? *s.last_report : evaluate(s.model, s.cfg.dataset, s.cfg.eval, s.cfg.seed);
  write_text(out_dir / "eval.txt", a.report.to_text());
  write_manifest(out_dir, s.cfg, start, timestamp());
  return a;
}

RunArtifacts train_run(const TrainConfig& cfg, const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  return resume_run(init_state(cfg), out_dir, hooks);
}

// ---------------------------------------------------------------- probe

ProbeMode parse_probe_mode(const std::string& s) {
  if (s == "equal") return ProbeMode::equal;
  if (s == "single-real") return ProbeMode::single_real;
  if (s == "single-fake") return ProbeMode::single_fake;
  throw Error("unknown probe mode '" + s + "' (equal, single-real, single-fake)");
}

std::string probe_mode_name(ProbeMode m) {
  switch (m) {
    case ProbeMode::equal: return "equal";
    case ProbeMode::single_real: return "single-real";
    case ProbeMode::single_fake: return "single-fake";
  }
  return "?";
}

Mat probe_samples(const std::string& dataset, std::uint64_t seed) {
  Engine eng = make_engine(seed, Stream::heldout);
  if (dataset != "8gaussian") return sample_dataset(dataset, 8, eng);
  const Mat pool = sample_dataset(dataset, 4000, eng);
  Mat out(8, 2);
  for (int k = 0; k < 8; ++k) {
    const double a = k * std::numbers::pi / 4;
    const Eigen::RowVector2d c(2 * std::cos(a), 2 * std::sin(a));
    Eigen::Index best = 0;
    (pool.rowwise() - c).rowwise().squaredNorm().minCoeff(&best);
    out.row(k) = pool.row(best);
  }
  return out;
}

namespace {

// Mean rec over all draws and KL (closed or MC) with a fixed noise block.
void probe_measure(const Model& m, const Mat& xs, const NoiseBlock& noise, KlMode mode, Vec& rec, Vec& kl) {
  const MixtureDensity p = m.density();
  const PosteriorBatch q = m.enc.encode(xs);
  const int S = q.size(), D = q.dim();
  rec = Vec::Zero(S);
  for (int t = 0; t < noise.draws; ++t) {
    Mat z(S, D);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < D; ++j)
        z(i, j) = q.mean(i, j) + std::exp(0.5 * q.log_var(i, j)) * noise.sample(i)[static_cast<size_t>(t) * D + j];
    rec += rec_loss(m.dec.decode(z), xs);
  }
  rec /= noise.draws;
  BatchKlOptions o;
  kl = (mode == KlMode::closed && p.modes() == 1) ? kl_closed_batch(q, p, o).kl
                                                  : kl_mc_batch(q, p, noise, o, Exec::parallel).kl;
}

}  // namespace

ProbeCurves probe_encoder_overfit(const Model& trained, const TrainConfig& cfg, const ProbeSettings& ps) {
  require(ps.steps >= 1 && ps.record_every >= 1 && ps.lr >= 0, "probe: bad settings");
  ProbeCurves c;
  c.samples = probe_samples(cfg.dataset, ps.seed);
  const int S = static_cast<int>(c.samples.rows());
  c.real.assign(S, false);
  c.fake.assign(S, false);
  for (int i = 0; i < S; ++i) {
    c.real[i] = ps.mode != ProbeMode::single_real || i == 0;
    c.fake[i] = ps.mode != ProbeMode::single_fake || i == 0;
  }
  std::vector<int> real_ids, fake_ids;
  for (int i = 0; i < S; ++i) {
    if (c.real[i]) real_ids.push_back(i);
    if (c.fake[i]) fake_ids.push_back(i);
  }

  Model m = trained;
  GameHyper h = cfg.hyper;
  h.beta_neg = ps.beta_neg;
  c.beta_rec = h.beta_rec;
  c.beta_kl = h.beta_kl;
  ObjectiveOptions opt = cfg.objective_options();
  opt.fakes_include_reconstructions = false;
  const MixtureDensity p = m.density();
  const int t = (opt.kl_mode == KlMode::closed && p.modes() == 1) ? 1 : opt.draws;
  const int D = p.dim();

  Engine eng = make_engine(ps.seed, Stream::probe);
  const NoiseBlock measure_noise = normal_block(eng, S, std::max(t, 16), D);
  AdamConfig ac = cfg.adam_encoder;
  ac.lr = ps.lr;
  Adam adam(m.enc.params(), ac);

  const int records = ps.steps / ps.record_every + 1;
  c.rec.resize(records, S);
  c.kl.resize(records, S);
  int row = 0;
  auto measure = [&](int step) {
    Vec rec, kl;
    probe_measure(m, c.samples, measure_noise, opt.kl_mode, rec, kl);
    c.steps.push_back(step);
    c.rec.row(row) = rec.transpose();
    c.kl.row(row) = kl.transpose();
    ++row;
  };
  measure(0);
  for (int step = 1; step <= ps.steps; ++step) {
    const int ri = real_ids[static_cast<size_t>(step - 1) % real_ids.size()];
    const int fi = fake_ids[static_cast<size_t>(step - 1) % fake_ids.size()];
    const NoiseBlock rn = normal_block(eng, 1, t, D);
    const NoiseBlock fn = normal_block(eng, 1, t, D);
    const StepResult r = encoder_step_given_fakes(m.enc, m.dec, m.prior, c.samples.row(ri), c.samples.row(fi), rn,
                                                  fn, h, opt);
    if (!std::isfinite(r.loss)) throw NonFiniteLoss("probe: non-finite encoder loss at step " + std::to_string(step));
    adam.step(m.enc.params(), r.enc);
    if (step % ps.record_every == 0) measure(step);
  }
  c.rec.conservativeResize(row, S);
  c.kl.conservativeResize(row, S);
  return c;
}

ProbeVerdict probe_verdict(const ProbeCurves& c) {
  ProbeVerdict v;
  const Mat ne = c.neg_elbo();
  const Eigen::Index last = c.kl.rows() - 1;
  int n_fake_only = 0, n_enclosed = 0;
  for (size_t i = 0; i < c.real.size(); ++i) {
    if (c.fake[i] && !c.real[i]) {
      v.fake_only_kl_start += c.kl(0, i);
      v.fake_only_kl_end += c.kl(last, i);
      ++n_fake_only;
    }
    if (c.fake[i] && c.real[i]) {
      v.enclosed_nelbo_start += ne(0, i);
      v.enclosed_nelbo_end += ne(last, i);
      ++n_enclosed;
    }
  }
  if (n_fake_only == 0 || n_enclosed == 0 || last < 1) return v;
  v.fake_only_kl_start /= n_fake_only;
  v.fake_only_kl_end /= n_fake_only;
  v.enclosed_nelbo_start /= n_enclosed;
  v.enclosed_nelbo_end /= n_enclosed;
  v.passed = v.fake_only_kl_end > v.fake_only_kl_start && v.enclosed_nelbo_end < v.enclosed_nelbo_start;
  return v;
}

}  // namespace introprior

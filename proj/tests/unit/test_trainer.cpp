#include "introprior/checkpoint.hpp"
#include "introprior/trainer.hpp"

#include "testing.hpp"
#include "tiny_config.hpp"

#include <doctest.h>

#include <fstream>

using namespace introprior;
using namespace introprior::testing;

namespace {

std::size_t hash_arrays(std::vector<ParamRef> ps) {
  std::size_t h = 1469598103934665603ull;
  for (const auto& p : ps) {
    const auto* b = reinterpret_cast<const unsigned char*>(p.data);
    for (std::size_t k = 0; k < static_cast<std::size_t>(p.rows * p.cols) * sizeof(double); ++k) h = (h ^ b[k]) * 1099511628211ull;
  }
  return h;
}

struct Hashes {
  std::size_t enc, dec, prior;
  bool operator==(const Hashes&) const = default;
};

Hashes hashes(const TrainState& s) {
  TrainState& m = const_cast<TrainState&>(s);  // params() hands out mutable views; nothing is written here
  return {hash_arrays(m.model.enc.params()), hash_arrays(m.model.dec.params()), hash_arrays(m.prior_params())};
}

bool same_model(TrainState& a, TrainState& b) {
  auto eq = [](const std::vector<ParamRef>& x, const std::vector<ParamRef>& y) {
    if (x.size() != y.size()) return false;
    for (size_t k = 0; k < x.size(); ++k)
      if (x[k].map() != y[k].map()) return false;
    return true;
  };
  return eq(a.model.enc.params(), b.model.enc.params()) && eq(a.model.dec.params(), b.model.dec.params()) &&
         eq(a.prior_params(), b.prior_params());
}

}  // namespace

TEST_CASE("each update touches only its own player, in encoder, decoder, prior order") {
  for (bool ip : {true, false}) {
    TrainConfig c = tiny(PriorKind::mog);
    c.intro_prior = ip;
    TrainState s = init_state(c);
    Hashes last = hashes(s);
    std::vector<std::string> order;
    TrainHooks hooks;
    hooks.observer = [&](const TrainState& st, const std::string& player) {
      const Hashes now = hashes(st);
      order.push_back(player);
      if (player == "vae") {
        CHECK(now.enc != last.enc);
        CHECK(now.dec != last.dec);
      } else {
        CHECK((now.enc != last.enc) == (player == "encoder"));
        CHECK((now.dec != last.dec) == (player == "decoder"));
        CHECK((now.prior != last.prior) == (player == "prior"));
      }
      last = now;
    };
    train_to_end(s, hooks);
    const std::vector<std::string> warm(6, "vae");
    REQUIRE(order.size() == (ip ? 6u + 18u : 6u + 12u));
    CHECK(std::vector<std::string>(order.begin(), order.begin() + 6) == warm);
    const size_t per = ip ? 3 : 2;
    for (size_t k = 6; k < order.size(); ++k) {
      const char* expect[] = {"encoder", "decoder", "prior"};
      CHECK(order[k] == expect[(k - 6) % per]);
    }
  }
}

TEST_CASE("zero learning rates leave every parameter bit-identical") {
  TrainConfig c = tiny(PriorKind::mog);
  c.adam_encoder.lr = c.adam_decoder.lr = c.adam_prior.lr = 0;
  TrainState s = init_state(c), ref = init_state(c);
  train_to_end(s);
  CHECK(same_model(s, ref));
}

TEST_CASE("a frozen prior stays untouched through warm-up and the game") {
  SUBCASE("standard Gaussian") {
    TrainState s = init_state(tiny(PriorKind::sg));
    train_to_end(s);
    const MixturePrior sg = MixturePrior::standard_gaussian(2);
    CHECK(s.model.prior.means == sg.means);
    CHECK(s.model.prior.raw_log_vars == sg.raw_log_vars);
    CHECK(s.model.prior.energy_logits == sg.energy_logits);
    CHECK(!s.model.prior.learnable_params);
    CHECK(std::isnan(prior_lv_excess(s.model.prior)));
    for (const auto& row : s.history)
      if (row.phase == Phase::adversarial) CHECK(row.values.count("L_P") == 0);
  }
  SUBCASE("MoG with intro_prior off") {
    TrainConfig c = tiny(PriorKind::mog);
    c.intro_prior = false;
    TrainState s = init_state(c);
    while (s.phase == Phase::warmup) warmup_epoch(s);
    const MixturePrior at_transition = s.model.prior;
    train_to_end(s);
    CHECK(s.model.prior.means == at_transition.means);
    CHECK(s.model.prior.raw_log_vars == at_transition.raw_log_vars);
    CHECK(s.model.prior.energy_logits == at_transition.energy_logits);
  }
}

TEST_CASE("fixed contributions keep the energy logits unchanged") {
  for (PriorKind kind : {PriorKind::mog, PriorKind::vamp_to_mog}) {
    TrainConfig c = tiny(kind);
    c.learnable_contributions = false;
    TrainState s = init_state(c);
    const Vec vamp_logits = s.vamp.energy_logits;
    if (kind == PriorKind::vamp_to_mog) {
      warmup_epoch(s);
      CHECK(s.vamp.energy_logits == vamp_logits);
      warmup_epoch(s);
    }
    const Vec logits = s.model.prior.energy_logits;
    train_to_end(s);
    CHECK(s.model.prior.energy_logits == logits);
    CHECK(!s.model.prior.learnable_contributions);
  }
}

TEST_CASE("transition sets clip ranges to the column min and max of the warm-up log-variances") {
  for (PriorKind kind : {PriorKind::mog, PriorKind::vamp_to_mog}) {
    TrainConfig c = tiny(kind);
    c.clip_rho = 0.9;
    TrainState s = init_state(c);
    warmup_epoch(s);
    // replay the last warm-up epoch to see the log-variances the transition will start from
    TrainState before_last = s;
    before_last.cfg.warmup_epochs = 3;
    warmup_epoch(before_last);
    Mat lv;
    if (kind == PriorKind::mog) {
      lv = before_last.model.prior.raw_log_vars;
    } else {
      lv = before_last.model.enc.encode(before_last.vamp.pseudo_inputs).log_var;
      round_to_f32(lv);
    }
    warmup_epoch(s);
    REQUIRE(s.phase == Phase::adversarial);
    const MixturePrior& p = s.model.prior;
    CHECK(p.raw_log_vars == lv);
    for (int j = 0; j < 2; ++j) {
      double lo = lv(0, j), hi = lv(0, j);
      for (int i = 1; i < lv.rows(); ++i) {
        lo = std::min(lo, lv(i, j));
        hi = std::max(hi, lv(i, j));
      }
      CHECK(p.clip_lo[j] == to_f32(lo));
      CHECK(p.clip_hi[j] == to_f32(hi));
    }
    CHECK(p.clip_K == solve_K(0.9));
    CHECK(p.clipping_enabled);
    CHECK(prior_inside_envelope(p));
  }
}

TEST_CASE("clipped training stays inside the envelope") {
  TrainConfig c = tiny(PriorKind::mog);
  c.adam_prior.lr = 0.2;
  c.adversarial_epochs = 4;
  TrainState s = init_state(c);
  train_to_end(s);  // adversarial_step throws if the envelope is ever left
  CHECK(prior_inside_envelope(s.model.prior));
  CHECK(prior_lv_excess(s.model.prior) < 2.0 * (s.model.prior.clip_hi - s.model.prior.clip_lo).maxCoeff() / s.model.prior.clip_K + 1e-12);
}

TEST_CASE("same seed gives the same run, another seed does not") {
  TrainState a = init_state(tiny(PriorKind::vamp_to_mog, 5)), b = init_state(tiny(PriorKind::vamp_to_mog, 5));
  TrainState c = init_state(tiny(PriorKind::vamp_to_mog, 6));
  train_to_end(a);
  train_to_end(b);
  train_to_end(c);
  CHECK(same_model(a, b));
  CHECK(!same_model(a, c));
  CHECK(metrics_csv(a.history) == metrics_csv(b.history));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  for (PriorKind kind : {PriorKind::vamp_to_mog, PriorKind::mog, PriorKind::sg}) {
    for (int stop : {1, 2, 3}) {
      const TrainConfig c = tiny(kind, 9);
      TrainState full = init_state(c);
      train_to_end(full);
      TrainState part = init_state(c);
      while (part.epoch < stop) {
        if (part.phase == Phase::warmup) warmup_epoch(part);
        else adversarial_epoch(part);
      }
      const auto dir = temp_dir("resume_" + std::to_string(stop));
      save_checkpoint(part, dir);
      TrainState resumed = load_checkpoint(dir);
      CHECK(resumed.epoch == stop);
      train_to_end(resumed);
      INFO(prior_kind_name(kind), " stop=", stop);
      CHECK(same_model(full, resumed));
      CHECK(metrics_csv(full.history) == metrics_csv(resumed.history));
    }
  }
}

TEST_CASE("a non-finite loss aborts the step and dumps the batch") {
  TrainConfig c = tiny(PriorKind::sg);
  c.warmup_epochs = 0;
  TrainState s = init_state(c);
  s.model.enc.params()[0].data[0] = std::numeric_limits<double>::quiet_NaN();
  const auto dir = temp_dir("nonfinite");
  TrainHooks hooks;
  hooks.dump_dir = dir;
  const Mat x = sample_dataset("8gaussian", 16, 1);
  CHECK_THROWS_AS(adversarial_step(s, x, hooks), NonFiniteLoss);
  REQUIRE(std::filesystem::exists(dir / "nonfinite_batch.txt"));
  std::ifstream in(dir / "nonfinite_batch.txt");
  std::string line;
  int data_lines = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++data_lines;
  CHECK(data_lines == 16);
}

TEST_CASE("metrics table round trip keeps missing cells missing") {
  MetricRow a{1, Phase::warmup, {{"vae_loss", 1.25}, {"underflow", 0}}};
  MetricRow b{2, Phase::adversarial, {{"L_E", -0.1}, {"L_D", 3.0000000000000004}, {"hist_kl", 0.5}}};
  const auto rows = parse_metrics_csv(metrics_csv({a, b}));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].values == a.values);
  CHECK(rows[1].values == b.values);
  CHECK(rows[1].phase == Phase::adversarial);
  CHECK_THROWS_AS(parse_metrics_csv("epoch,phase,L_E\n1,warmup\n"), Error);
}

TEST_CASE("adversarial step losses recompose from their recorded parts") {
  TrainConfig c = tiny(PriorKind::mog);
  c.warmup_epochs = 0;
  c.hyper.r_entropy = 2;
  TrainState s = init_state(c);
  const PlayerLosses l = adversarial_step(s, sample_dataset("8gaussian", 16, 2));
  CHECK(std::abs(recompose_L_E(l, c.hyper) - l.L_E) < 1e-6);
  CHECK(std::abs(recompose_L_D(l, c.hyper) - l.L_D) < 1e-6);
  CHECK(std::abs(recompose_L_P(l, c.hyper) - l.L_P) < 1e-6);
}

TEST_CASE("train_run writes the run directory") {
  const auto dir = temp_dir("run");
  const RunArtifacts a = train_run(tiny(PriorKind::mog), dir);
  for (const char* f : {"config.txt", "manifest.txt", "metrics.csv", "eval.txt", "checkpoint/manifest.txt"})
    CHECK(std::filesystem::exists(dir / f));
  const auto rows = parse_metrics_csv(read_text_file((dir / "metrics.csv").string()));
  CHECK(rows.size() == 4);
  CHECK(rows.back().values.count("hist_kl") == 1);
  CHECK(EvalReport::from_text(read_text_file((dir / "eval.txt").string())).to_text() == a.report.to_text());
  CHECK(parse_config(read_text_file((dir / "config.txt").string())).to_text() == tiny(PriorKind::mog).to_text());
}

TEST_CASE("encoder probe: identical starting point across modes and flat curves at zero learning rate") {
  TrainState s = init_state(tiny(PriorKind::sg));
  train_to_end(s);
  ProbeSettings ps;
  ps.steps = 20;
  ps.record_every = 5;
  ps.seed = 4;
  std::vector<ProbeCurves> curves;
  for (ProbeMode m : {ProbeMode::equal, ProbeMode::single_real, ProbeMode::single_fake}) {
    ps.mode = m;
    curves.push_back(probe_encoder_overfit(s.model, s.cfg, ps));
    CHECK(curves.back().steps == std::vector<int>{0, 5, 10, 15, 20});
  }
  for (const auto& c : curves) {
    CHECK(c.rec.row(0) == curves[0].rec.row(0));
    CHECK(c.kl.row(0) == curves[0].kl.row(0));
  }
  CHECK(std::count(curves[1].real.begin(), curves[1].real.end(), true) == 1);
  CHECK(std::count(curves[1].fake.begin(), curves[1].fake.end(), true) == 8);
  ps.mode = ProbeMode::single_real;
  ps.lr = 0;
  const ProbeCurves flat = probe_encoder_overfit(s.model, s.cfg, ps);
  for (int r = 1; r < flat.rec.rows(); ++r) {
    CHECK(flat.rec.row(r) == flat.rec.row(0));
    CHECK(flat.kl.row(r) == flat.kl.row(0));
  }
  CHECK(!probe_verdict(flat).passed);
  CHECK(parse_probe_mode(probe_mode_name(ProbeMode::single_fake)) == ProbeMode::single_fake);
}

TEST_CASE("8gaussian probe samples sit next to the modes") {
  const Mat p = probe_samples("8gaussian", 1);
  for (int k = 0; k < 8; ++k) {
    const double a = k * M_PI / 4;
    CHECK(std::hypot(p(k, 0) - 2 * std::cos(a), p(k, 1) - 2 * std::sin(a)) < 0.1);
  }
}

// introprior: train, evaluate and inspect Soft-IntroVAE runs with a learnable prior.

#include "introprior/checkpoint.hpp"
#include "introprior/data2d.hpp"
#include "introprior/evalsuite.hpp"
#include "introprior/gridsearch.hpp"
#include "introprior/kernels.hpp"
#include "introprior/theory.hpp"
#include "introprior/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace introprior;

namespace {

void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(' '));
      v.erase(v.find_last_not_of(' ') + 1);
      return v;
    };
    set_config_value(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  cfg.validate();
}

void write_file(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();

  CLI::App app{"Soft-IntroVAE with a learnable mixture prior: 2D benchmark and verification tools"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train one run");
  std::string train_cfg, train_out, train_resume;
  std::uint64_t train_seed = 0;
  std::vector<std::string> train_sets;
  train->add_option("--config", train_cfg, "Config file")->check(CLI::ExistingFile);
  auto* seed_opt = train->add_option("--seed", train_seed, "Seed (overrides the config)");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--resume", train_resume, "Continue from a checkpoint directory")->check(CLI::ExistingDirectory);
  train->add_option("--set", train_sets, "Override a config key (key=value)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_out;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_out, "Report file ('-' for stdout)")->required();

  // grid-search
  auto* grid = app.add_subcommand("grid-search", "Sweep config keys over a grid");
  std::string grid_cfg, grid_file, grid_out;
  int grid_seeds = 5;
  std::vector<std::string> grid_sets;
  grid->add_option("--config", grid_cfg, "Base config file")->check(CLI::ExistingFile);
  grid->add_option("--grid", grid_file, "Grid file (key = v1, v2, ...)")->required()->check(CLI::ExistingFile);
  grid->add_option("--seeds", grid_seeds, "Seeds per cell")->check(CLI::PositiveNumber);
  grid->add_option("--out", grid_out, "Output directory")->required();
  grid->add_option("--set", grid_sets, "Override a base config key (key=value)");

  // verify-theory
  auto* verify = app.add_subcommand("verify-theory", "Check closed-form gradients and the optimal-ELBO oracle");
  double tolerance = 1e-6;
  std::uint64_t verify_seed = 7;
  verify->add_option("--tolerance", tolerance, "Relative error tolerance")->check(CLI::PositiveNumber);
  verify->add_option("--seed", verify_seed, "Seed for the random instances");

  // probe-encoder
  auto* probe = app.add_subcommand("probe-encoder", "Overfit the encoder on synthetic real/fake subsets");
  std::string probe_ckpt, probe_mode = "single-real", probe_out;
  ProbeSettings ps;
  probe->add_option("--ckpt", probe_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  probe->add_option("--mode", probe_mode, "equal | single-real | single-fake")
      ->check(CLI::IsMember({"equal", "single-real", "single-fake"}));
  probe->add_option("--beta-neg", ps.beta_neg, "beta_neg used by the probe");
  probe->add_option("--steps", ps.steps, "Encoder updates")->check(CLI::PositiveNumber);
  probe->add_option("--lr", ps.lr, "Encoder learning rate")->check(CLI::NonNegativeNumber);
  probe->add_option("--record-every", ps.record_every, "Steps between recorded points")->check(CLI::PositiveNumber);
  probe->add_option("--seed", ps.seed, "Seed");
  probe->add_option("--out", probe_out, "CSV of the curves ('-' for stdout)");

  // plot
  auto* plot = app.add_subcommand("plot", "Write real/generated/latent figures");
  std::string plot_ckpt, plot_out;
  int plot_points = 5000;
  plot->add_option("--ckpt", plot_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  plot->add_option("--out", plot_out, "Output directory")->required();
  plot->add_option("--points", plot_points, "Points per scatter")->check(CLI::PositiveNumber);

  // dump-data
  auto* dump = app.add_subcommand("dump-data", "Write samples of a toy dataset as 'x y' lines");
  std::string dump_name, dump_out;
  int dump_n = 1000;
  std::uint64_t dump_seed = 0;
  dump->add_option("--name", dump_name, "8gaussian | 2spirals | checkerboard | rings")
      ->required()
      ->check(CLI::IsMember({"8gaussian", "2spirals", "checkerboard", "rings"}));
  dump->add_option("--n", dump_n, "Number of samples")->check(CLI::PositiveNumber);
  dump->add_option("--seed", dump_seed, "Seed");
  dump->add_option("--out", dump_out, "Output file ('-' for stdout)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) {
      if (!train_resume.empty()) {
        if (!train_cfg.empty() || !train_sets.empty() || seed_opt->count())
          throw Error("--resume takes its configuration from the checkpoint");
        const auto a = resume_run(load_checkpoint(train_resume), train_out);
        std::cout << a.report.to_text();
        return 0;
      }
      TrainConfig cfg = train_cfg.empty() ? TrainConfig{} : load_config(train_cfg);
      apply_overrides(cfg, train_sets);
      if (seed_opt->count()) cfg.seed = train_seed;
      const auto a = train_run(cfg, train_out);
      std::cout << a.report.to_text();
      return 0;
    }
    if (*eval) {
      const LoadedModel lm = load_model(eval_ckpt);
      const EvalReport rep = evaluate(lm.model, lm.cfg.dataset, lm.cfg.eval, lm.cfg.seed);
      write_file(eval_out, rep.to_text());
      return 0;
    }
    if (*grid) {
      TrainConfig cfg = grid_cfg.empty() ? TrainConfig{} : load_config(grid_cfg);
      apply_overrides(cfg, grid_sets);
      const GridSpec spec = parse_grid_spec(read_text_file(grid_file), grid_file);
      const auto ranked = grid_search(cfg, spec, grid_seeds, grid_out);
      std::cout << grid_summary_csv(ranked);
      bool any_ok = false;
      for (const auto& c : ranked) any_ok = any_ok || !c.failed;
      return any_ok ? 0 : 1;
    }
    if (*verify) {
      const auto checks = run_verification_suite(tolerance, verify_seed);
      bool all = true;
      std::printf("%-50s %9s %12s %12s %s\n", "check", "instances", "worst", "tolerance", "result");
      for (const auto& c : checks) {
        std::printf("%-50s %9d %12.3e %12.3e %s\n", c.name.c_str(), c.instances, c.worst, c.tolerance,
                    c.passed ? "PASS" : "FAIL");
        all = all && c.passed;
      }
      return all ? 0 : 1;
    }
    if (*probe) {
      const LoadedModel lm = load_model(probe_ckpt);
      ps.mode = parse_probe_mode(probe_mode);
      const ProbeCurves c = probe_encoder_overfit(lm.model, lm.cfg, ps);
      const Mat ne = c.neg_elbo();
      std::ostringstream os;
      os << "step,sample,real,fake,rec,kl,neg_elbo\n";
      for (Eigen::Index r = 0; r < c.rec.rows(); ++r)
        for (Eigen::Index i = 0; i < c.rec.cols(); ++i)
          os << c.steps[r] << ',' << i << ',' << c.real[i] << ',' << c.fake[i] << ',' << c.rec(r, i) << ','
             << c.kl(r, i) << ',' << ne(r, i) << '\n';
      if (!probe_out.empty()) write_file(probe_out, os.str());
      if (ps.mode == ProbeMode::single_real) {
        const ProbeVerdict v = probe_verdict(c);
        std::printf("fake-only KL: %.6g -> %.6g\nenclosed negative ELBO: %.6g -> %.6g\ndirectional check: %s\n",
                    v.fake_only_kl_start, v.fake_only_kl_end, v.enclosed_nelbo_start, v.enclosed_nelbo_end,
                    v.passed ? "PASS" : "FAIL");
      }
      return 0;
    }
    if (*plot) {
      const LoadedModel lm = load_model(plot_ckpt);
      const auto markers = emit_plots(lm.model, lm.cfg.dataset, plot_out, lm.cfg.seed, plot_points);
      std::printf("wrote %s (%zu prior markers)\n", plot_out.c_str(), markers.size());
      return 0;
    }
    if (*dump) {
      const Mat x = sample_dataset(dump_name, dump_n, dump_seed);
      std::ostringstream os;
      os.precision(17);
      for (Eigen::Index i = 0; i < x.rows(); ++i) os << x(i, 0) << ' ' << x(i, 1) << '\n';
      write_file(dump_out, os.str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

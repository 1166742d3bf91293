// Serial vs OpenMP timings of the batched KL kernels and one encoder step.
// Thread count follows OMP_NUM_THREADS / INTROPRIOR_THREADS.

#include "introprior/kernels.hpp"
#include "introprior/nets.hpp"
#include "introprior/objective.hpp"
#include "introprior/prior.hpp"

#include <benchmark/benchmark.h>

using namespace introprior;

namespace {

struct KlCase {
  PosteriorBatch q;
  MixtureDensity m;
  NoiseBlock noise;
};

KlCase make_case(int n, int modes, int draws) {
  Engine eng = make_engine(1, 2);
  KlCase c{{normal_matrix(eng, n, 2), 0.3 * normal_matrix(eng, n, 2)},
           MixtureDensity(normal_matrix(eng, modes, 2), 0.3 * normal_matrix(eng, modes, 2),
                          Vec::Constant(modes, -std::log(static_cast<double>(modes)))),
           normal_block(eng, n, draws, 2)};
  return c;
}

void BM_KlMc(benchmark::State& st, Exec exec) {
  const KlCase c = make_case(static_cast<int>(st.range(0)), 64, 100);
  BatchKlOptions opt;
  opt.target = TargetGrad::propagate;
  for (auto _ : st) benchmark::DoNotOptimize(kl_mc_batch(c.q, c.m, c.noise, opt, exec));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_KlMcReference(benchmark::State& st) {
  const KlCase c = make_case(static_cast<int>(st.range(0)), 64, 100);
  BatchKlOptions opt;
  opt.target = TargetGrad::propagate;
  for (auto _ : st) benchmark::DoNotOptimize(kl_mc_batch_reference(c.q, c.m, c.noise, opt));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_LogProbMog(benchmark::State& st, Exec exec) {
  Engine eng = make_engine(3, 2);
  const Mat z = normal_matrix(eng, static_cast<int>(st.range(0)), 2);
  const KlCase c = make_case(1, 64, 1);
  for (auto _ : st) benchmark::DoNotOptimize(log_prob_mog_batch(z, c.m, exec));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_EncoderStep(benchmark::State& st, Exec exec) {
  Engine eng = make_engine(4, 2);
  const Encoder enc(2, 2, 64, 3, eng);
  const Decoder dec(2, 2, 64, 3, eng);
  MixturePrior p;
  p.means = normal_matrix(eng, 64, 2);
  p.raw_log_vars = 0.3 * normal_matrix(eng, 64, 2);
  p.energy_logits = Vec::Zero(64);
  init_clip_ranges(p, 0.85);
  p.clipping_enabled = true;
  const Mat x = normal_matrix(eng, 128, 2);
  GameHyper h;
  h.r_entropy = 1;
  ObjectiveOptions opt;
  opt.kl_mode = KlMode::mc;
  opt.draws = static_cast<int>(st.range(0));
  opt.exec = exec;
  const StepNoise noise = draw_step_noise(eng, 128, 128, export_density(p), opt);
  for (auto _ : st) benchmark::DoNotOptimize(encoder_step(enc, dec, p, x, noise, h, opt));
}

}  // namespace

BENCHMARK_CAPTURE(BM_KlMc, serial, Exec::serial)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_KlMc, parallel, Exec::parallel)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KlMcReference)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_LogProbMog, serial, Exec::serial)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_LogProbMog, parallel, Exec::parallel)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_EncoderStep, serial, Exec::serial)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_EncoderStep, parallel, Exec::parallel)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

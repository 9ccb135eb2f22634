// Serial vs OpenMP-parallel comparison for the three hot kernels:
// per-second view ranking, per-(view, second) visibility ray casts,
// and one distillation training epoch. Both policies produce
// byte-identical results; these benchmarks measure the speedup only.

#include <benchmark/benchmark.h>

#include "viewdistill/distill.hpp"
#include "viewdistill/ranking.hpp"
#include "viewdistill/scene_sim.hpp"

using namespace viewdistill;

namespace {

SceneConfig bench_scene_config(int duration, int n_exo) {
  SceneConfig cfg;
  cfg.seed = 17;
  cfg.duration_s = duration;
  cfg.n_exo = n_exo;
  return cfg;
}

void bm_rank_take(benchmark::State& state, ExecPolicy policy) {
  const SyntheticTake scene = generate_scene(bench_scene_config(512, 8));
  for (auto _ : state) {
    RankingTimeline t = rank_take(scene.take, HoiConfig{}, policy);
    benchmark::DoNotOptimize(t);
  }
}

void bm_visibility(benchmark::State& state, ExecPolicy policy) {
  const SceneConfig cfg = bench_scene_config(128, 8);
  for (auto _ : state) {
    SyntheticTake scene = generate_scene(cfg, policy);
    benchmark::DoNotOptimize(scene);
  }
}

void bm_train_epochs(benchmark::State& state, ExecPolicy policy) {
  const SceneConfig cfg = bench_scene_config(48, 6);
  SyntheticTake scene = generate_scene(cfg);
  synth_features(scene, cfg);
  std::vector<Take> takes{scene.take};
  std::vector<RankingTimeline> rankings{rank_take(scene.take, HoiConfig{})};
  DistillConfig dc;
  dc.epochs = 4;
  const CurriculumSchedule schedule = build_schedule(dc.epochs, 1, 0.5);
  for (auto _ : state) {
    TrainResult r = train_distill(takes, rankings, schedule, dc, policy);
    benchmark::DoNotOptimize(r);
  }
}

}  // namespace

BENCHMARK_CAPTURE(bm_rank_take, serial, ExecPolicy::Serial);
BENCHMARK_CAPTURE(bm_rank_take, parallel, ExecPolicy::Parallel);
BENCHMARK_CAPTURE(bm_visibility, serial, ExecPolicy::Serial);
BENCHMARK_CAPTURE(bm_visibility, parallel, ExecPolicy::Parallel);
BENCHMARK_CAPTURE(bm_train_epochs, serial, ExecPolicy::Serial);
BENCHMARK_CAPTURE(bm_train_epochs, parallel, ExecPolicy::Parallel);

BENCHMARK_MAIN();

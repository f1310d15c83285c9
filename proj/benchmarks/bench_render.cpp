// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
// Hot paths of one training iteration at the default detector geometry.
#include "dsasrgs/dnaf.hpp"
#include "dsasrgs/geometry.hpp"
#include "dsasrgs/parallel.hpp"
#include "dsasrgs/rasterizer.hpp"
#include "dsasrgs/scene.hpp"
#include "dsasrgs/supervision.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace dsasrgs;

struct Fixture {
  Scene scene;
  AttenuationField field;
  CameraView view;
  int size = 256;

  Fixture(int n_kernels, int size_px) : size(size_px) {
    SceneInitConfig init;
    init.n_init = n_kernels;
    scene = init_scene(init, 1);
    field = init_field(FieldConfig{}, scene.bbox, 2);
    DetectorParams det;
    det.width = det.height = size;
    det.pixel_pitch_mm = 0.6 * 256.0 / size;
    view = make_circular_trajectory(2, 180, 750, det, TimeMode::sweep).views[0];
  }
};

void BM_Attenuations(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)), 256);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_attenuations(f.scene, f.field, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Attenuations)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

void BM_RenderForward(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  ThreadPool pool(static_cast<int>(state.range(2)));
  RenderSettings rs;
  rs.pool = &pool;
  for (auto _ : state) benchmark::DoNotOptimize(render(f.scene, f.field, f.view, 0.5, f.size, f.size, rs));
}
BENCHMARK(BM_RenderForward)
    ->ArgNames({"kernels", "px", "threads"})
    ->Args({2000, 64, 1})
    ->Args({2000, 256, 1})
    ->Args({8000, 256, 1})
    ->Args({8000, 256, 4})
    ->Unit(benchmark::kMillisecond);

void BM_RenderBackward(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)), 256);
  const RenderResult r = render(f.scene, f.field, f.view, 0.5, f.size, f.size);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e-3, 1e-3);
  std::vector<double> d(static_cast<std::size_t>(f.size) * f.size);
  for (auto& x : d) x = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(render_backward(f.scene, f.field, r.state, d, f.size, f.size));
}
BENCHMARK(BM_RenderBackward)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

void BM_SsimWithGrad(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(static_cast<std::size_t>(n) * n), b(a.size());
  for (auto& x : a) x = u(rng);
  for (auto& x : b) x = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssim_mean_with_grad(a, b, n, n));
}
BENCHMARK(BM_SsimWithGrad)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "gstvla/model.hpp"
#include "gstvla/splat_render.hpp"

using namespace gstvla;

namespace {

Tensor random(ad::Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  nn::Rng rng(seed);
  std::vector<double> v(ad::numel_of(s));
  for (double& x : v) x = nn::uniform(rng, lo, hi);
  return Tensor::from(std::move(s), std::move(v));
}

const SceneSample& scene() {
  static const SceneSample s = generate(random_scene(7));
  return s;
}

void BM_RenderForward(benchmark::State& st) {
  const std::size_t rays = static_cast<std::size_t>(st.range(0));
  const RayBundle b = ray_bundle_from(scene(), rays, 1);
  const Tensor c = random({256, 3}, 1, -0.2, 0.2);
  std::vector<double> cz(c.values().begin(), c.values().end());
  for (std::size_t k = 0; k < 256; ++k) cz[3 * k + 2] += 0.8;
  const Tensor centroids = Tensor::from({256, 3}, cz);
  const Tensor scales = random({256, 3}, 2, -4, -2);
  const Tensor alpha = random({256}, 3, 0.1, 0.9);
  RenderOptions ro;
  ro.keep_weights = false;
  ad::NoGradGuard g;
  for (auto _ : st) benchmark::DoNotOptimize(render_depth(centroids, scales, alpha, b, ro).rendered);
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(rays));
}
BENCHMARK(BM_RenderForward)->Arg(128)->Arg(1024);

void BM_RenderBackward(benchmark::State& st) {
  const RayBundle b = ray_bundle_from(scene(), 256, 1);
  std::vector<double> cz(768);
  nn::Rng rng(4);
  for (std::size_t k = 0; k < 256; ++k) {
    cz[3 * k] = nn::uniform(rng, -0.2, 0.2);
    cz[3 * k + 1] = nn::uniform(rng, -0.2, 0.2);
    cz[3 * k + 2] = nn::uniform(rng, 0.5, 1.2);
  }
  for (auto _ : st) {
    ad::Tape::current().reset();
    const Tensor c = Tensor::from({256, 3}, cz, true);
    const Tensor s = Tensor::full({256, 3}, -3.0, true);
    const Tensor a = Tensor::full({256}, 0.5, true);
    RenderOptions ro;
    ro.keep_weights = false;
    ad::backward(depth_loss(render_depth(c, s, a, b, ro).rendered, b.target_depths));
  }
  ad::Tape::current().reset();
}
BENCHMARK(BM_RenderBackward);

void BM_Matmul(benchmark::State& st) {
  const std::size_t n = static_cast<std::size_t>(st.range(0));
  const Tensor a = random({n, n}, 1), b = random({n, n}, 2);
  ad::NoGradGuard g;
  for (auto _ : st) benchmark::DoNotOptimize(ad::matmul(a, b));
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

ModelConfig small_model() {
  ModelConfig m;
  m.gst.width = 64;
  m.reasoner.width = 96;
  m.reasoner.layers = 2;
  m.expert.width = 64;
  m.expert.layers = 3;
  m.expert.expert_hidden = 128;
  m.rays_per_sample = 128;
  return m;
}

void BM_TrainingSampleForwardBackward(benchmark::State& st) {
  Model m(small_model());
  const PreparedSample s = prepare(scene());
  std::uint64_t seed = 0;
  for (auto _ : st) {
    ad::Tape::current().reset();
    const LossTerms t = m.losses(s, LossSwitches{}, ++seed);
    ad::backward(ad::add(ad::add(t.flow, ad::scale(t.cot, 0.5)), ad::scale(t.depth, 0.1)));
  }
  ad::Tape::current().reset();
}
BENCHMARK(BM_TrainingSampleForwardBackward)->Unit(benchmark::kMillisecond);

void BM_Inference(benchmark::State& st) {
  Model m(small_model());
  const PreparedSample s = prepare(scene());
  for (auto _ : st) benchmark::DoNotOptimize(m.infer(s, 1).chunk);
}
BENCHMARK(BM_Inference)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

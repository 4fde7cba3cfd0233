#include <random>

#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "lfr/evalkit.hpp"
#include "lfr/mapextract.hpp"
#include "lfr/matcher.hpp"
#include "lfr/nets.hpp"
#include "lfr/synthgen.hpp"

namespace {

using namespace lfr;

FingerprintImage clean_print(int size, int finger) {
  synth::SynthOptions opts;
  opts.image_size = size;
  return synth::synth_clean(finger, 7, opts).image;
}

void BM_MakeTargetStack(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const auto img = clean_print(size, 1);
  mapextract::ExtractOptions opts;
  opts.block_size = size >= 256 ? 16 : 8;
  for (auto _ : state) benchmark::DoNotOptimize(mapextract::make_target_stack(img, opts));
}
BENCHMARK(BM_MakeTargetStack)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_MatchInternal(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  mapextract::ExtractOptions opts;
  opts.block_size = 8;
  const auto probe = match::make_template(mapextract::make_target_stack(clean_print(size, 1), opts));
  const match::PreparedTemplate gallery(match::make_template(mapextract::make_target_stack(clean_print(size, 2), opts)));
  for (auto _ : state) benchmark::DoNotOptimize(match::match_internal(probe, gallery));
}
BENCHMARK(BM_MatchInternal)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_GeneratorForward(benchmark::State& state) {
  torch::NoGradGuard guard;
  torch::set_num_threads(1);
  const auto n = state.range(0);
  nets::Generator g;
  g->eval();
  const auto x = torch::rand({1, 1, n, n});
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(x));
}
BENCHMARK(BM_GeneratorForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Cmc(benchmark::State& state) {
  const auto probes = static_cast<std::size_t>(state.range(0));
  const auto gallery = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  eval::ScoreMatrix m;
  m.probes = probes;
  m.gallery = gallery;
  m.scores.resize(probes * gallery);
  for (auto& s : m.scores) s = u(rng);
  for (std::size_t p = 0; p < probes; ++p) m.probe_labels.push_back(static_cast<int>(p % gallery));
  for (std::size_t g = 0; g < gallery; ++g) m.gallery_labels.push_back(static_cast<int>(g));
  for (auto _ : state) benchmark::DoNotOptimize(eval::cmc(m));
}
BENCHMARK(BM_Cmc)->Args({50, 100})->Args({500, 1000})->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

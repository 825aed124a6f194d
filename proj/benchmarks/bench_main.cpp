#include <benchmark/benchmark.h>

#include "harmaug/backends.hpp"
#include "harmaug/distill.hpp"
#include "harmaug/evalx.hpp"
#include "harmaug/redteam.hpp"
#include "harmaug/text.hpp"

using namespace harmaug;

static void BM_ScorerFeatures(benchmark::State& state) {
  const distill::ReferenceScorer s;
  const std::string instr = "write a short guide to steal a bicycle from the library garden";
  const std::string resp = "Here is what you asked about steal and the library, step by step.";
  for (auto _ : state) benchmark::DoNotOptimize(s.features(instr, resp));
}
BENCHMARK(BM_ScorerFeatures);

static void BM_Auprc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = static_cast<int>(rng.below(2));
  }
  y[0] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(evalx::auprc(s, y));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auprc)->Range(1 << 8, 1 << 16)->Complexity();

static void BM_Dbscan(benchmark::State& state) {
  const backends::HashedNgramEmbedder emb(256);
  Rng rng(2);
  const std::vector<std::string> words = {"bomb", "garden", "hack", "music", "river", "poison",
                                          "coffee", "school"};
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < state.range(0); ++i) {
    std::string t;
    for (int k = 0; k < 6; ++k) t += words[rng.below(words.size())] + " ";
    pts.push_back(emb.embed(t));
  }
  for (auto _ : state) benchmark::DoNotOptimize(evalx::dbscan(pts, 0.8, 5));
}
BENCHMARK(BM_Dbscan)->Arg(250)->Arg(1000);

static void BM_TrajectoryBalanceStep(benchmark::State& state) {
  redteam::TabularPolicy policy({"a", "b", "c", "d", "e"}, 3);
  const auto all = policy.enumerate();
  Rng rng(3);
  std::vector<std::pair<std::string, double>> batch;
  for (int i = 0; i < 64; ++i) batch.emplace_back(all[rng.below(all.size())], rng.uniform(-3, 1));
  for (auto _ : state) benchmark::DoNotOptimize(redteam::tb_loss_and_grad(policy, batch));
}
BENCHMARK(BM_TrajectoryBalanceStep);

BENCHMARK_MAIN();

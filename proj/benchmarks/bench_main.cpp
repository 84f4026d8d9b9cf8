#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "wep/embed.hpp"
#include "wep/eval.hpp"
#include "wep/prior.hpp"

namespace {

using namespace wep;

constexpr std::size_t kVocab = 5000;

void BM_ObjectiveStep(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  EmbeddingModel model = EmbeddingModel::init(kVocab, dim, rng);
  for (double& x : model.target.values()) x = rng.uniform(-0.1, 0.1);
  const PriorNetParams prior = PriorNetParams::glorot(32, 64, dim, 1.0 / kVocab, rng);
  const ContextSample sample{7, {1, 2, 3, 4, 5, 6, 8, 9, 10, 11}, 0};
  const std::vector<TokenId> negatives{100, 200, 300, 400, 500};
  const ObjectiveOptions options{Backbone::cbow, true};
  for (auto _ : state) {
    ObjectiveCache cache;
    const ObjectiveBreakdown b = objective(sample, negatives, model, prior, 0.1, options, &cache);
    GradientSet g = backward(cache, model, prior, 0.1);
    benchmark::DoNotOptimize(b.total);
    benchmark::DoNotOptimize(g.context_rows.data());
  }
}
BENCHMARK(BM_ObjectiveStep)->Arg(16)->Arg(100)->Arg(300);

void BM_PriorForward(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const PriorNetParams prior = PriorNetParams::glorot(32, 64, dim, 1.0 / kVocab, rng);
  TokenId id = 0;
  for (auto _ : state) {
    PriorOutput out = prior_forward(id, prior, kVocab);
    benchmark::DoNotOptimize(out.mu.data());
    id = (id + 1) % static_cast<TokenId>(kVocab);
  }
}
BENCHMARK(BM_PriorForward)->Arg(16)->Arg(100);

void BM_NegativeSampling(benchmark::State& state) {
  std::vector<std::int64_t> counts(kVocab);
  for (std::size_t i = 0; i < kVocab; ++i) counts[i] = static_cast<std::int64_t>(kVocab - i);
  const NegativeTable table(counts, 0.75, 10'000'000);
  Rng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(table.sample(rng));
}
BENCHMARK(BM_NegativeSampling);

void BM_Analogy(benchmark::State& state) {
  const auto vocab = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  WordVectors w;
  w.vectors = Matrix(vocab, 100);
  for (std::size_t i = 0; i < vocab; ++i) w.tokens.push_back("w" + std::to_string(i));
  for (double& x : w.vectors.values()) x = rng.normal();
  w.rebuild_index();
  AnalogyDataset data;
  for (std::size_t q = 0; q < 100; ++q)
    data.push_back({w.tokens[q], w.tokens[q + 1], w.tokens[q + 2], w.tokens[q + 3]});
  for (auto _ : state) benchmark::DoNotOptimize(analogy_eval(w, data).value);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * data.size()));
}
BENCHMARK(BM_Analogy)->Arg(1000)->Arg(10000);

}  // namespace

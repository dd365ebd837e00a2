#include <benchmark/benchmark.h>

#include "caps_ood/caps_ood.hpp"

using namespace caps_ood;

namespace {

SaeModel bench_model(std::size_t d_in, std::size_t d_lat, std::size_t k) {
  Rng rng(1);
  auto m = SaeModel::zeros(d_in, d_lat, k);
  for (auto& v : m.w_dec.values()) v = static_cast<float>(rng.normal());
  normalize_decoder_columns(m);
  for (std::size_t j = 0; j < d_lat; ++j) {
    for (std::size_t d = 0; d < d_in; ++d) m.w_enc(j, d) = m.w_dec(d, j);
  }
  return m;
}

EmbeddingDataset bench_data(std::size_t n_per_class) {
  SynthConfig cfg;
  cfg.n_train_per_class = n_per_class;
  return gen_id(cfg, IdSplit::Train);
}

}  // namespace

static void BM_Encode(benchmark::State& state) {
  const auto d_in = static_cast<std::size_t>(state.range(0));
  const auto model = bench_model(d_in, 10 * d_in, d_in <= 64 ? 8 : 128);
  Rng rng(2);
  std::vector<double> x(d_in);
  for (auto& v : x) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(encode(model, x));
}
BENCHMARK(BM_Encode)->Arg(64)->Arg(768);

static void BM_TrainEpoch(benchmark::State& state) {
  const auto ds = bench_data(50);
  TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(ds, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.size()));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

static void BM_LossAndGradients(benchmark::State& state) {
  const auto ds = bench_data(20);
  const auto model = bench_model(64, 640, 8);
  const auto norm = fit_normalizer(ds);
  const auto inputs = normalize_rows(norm, ds);
  std::vector<std::size_t> rows(256);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  std::vector<std::uint8_t> dead(640, 0);
  for (std::size_t j = 0; j < 640; j += 3) dead[j] = 1;
  auto grads = SaeGradients::zeros(64, 640);
  for (auto _ : state) {
    const auto active = select_active_sets(model, inputs, rows, dead, 16);
    benchmark::DoNotOptimize(loss_with_active_sets(model, inputs, rows, active, 1.0 / 32.0, &grads));
  }
}
BENCHMARK(BM_LossAndGradients)->Unit(benchmark::kMicrosecond);

static void BM_ScoreDataset(benchmark::State& state) {
  const auto ds = bench_data(50);
  const auto model = bench_model(64, 640, 8);
  const auto norm = fit_normalizer(ds);
  const auto caps = build_caps(model, norm, ds, 0.05);
  ScoreConfig cfg;
  cfg.metric = static_cast<Metric>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(score_dataset(caps, model, norm, ds, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.size()));
}
BENCHMARK(BM_ScoreDataset)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

static void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> id(n), ood(n);
  for (auto& v : id) v = rng.normal();
  for (auto& v : ood) v = rng.normal() + 1.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(auroc(id, ood));
    benchmark::DoNotOptimize(fpr95(id, ood));
  }
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

BENCHMARK_MAIN();

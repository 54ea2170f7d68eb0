#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

#include "savc/asa.hpp"
#include "savc/convert.hpp"
#include "savc/metrics.hpp"
#include "savc/syndata.hpp"
#include "savc/train.hpp"

namespace fs = std::filesystem;
using namespace savc;

namespace {

Mat noise(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  CounterRng rng(seed);
  return Mat::NullaryExpr(r, c, [&] { return rng.normal(); });
}

// Small default-shaped corpus shared by the model benchmarks.
const Dataset& corpus() {
  static const Dataset data = [] {
    syndata::SynthSpec spec;
    spec.n_speakers = 4;
    spec.n_emotions = 5;
    spec.utterances_per_pair = 2;
    const fs::path dir = fs::temp_directory_path() / "savc_bench_corpus";
    fs::remove_all(dir);
    auto d = load_dataset(syndata::make_corpus(spec, dir));
    fs::remove_all(dir);
    return d;
  }();
  return data;
}

void BM_ChannelStats(benchmark::State& st) {
  const Mat x = noise(st.range(0), 16, 1);
  for (auto _ : st) benchmark::DoNotOptimize(asa::channel_stats(x));
}
BENCHMARK(BM_ChannelStats)->Arg(64)->Arg(512);

void BM_AsaForward(benchmark::State& st) {
  std::vector<Mat> batch;
  for (int b = 0; b < st.range(0); ++b) batch.push_back(noise(64, 16, 10 + b));
  const auto params = asa::PerturbParams::initial(16);
  CounterRng rng(3);
  asa::AsaCache cache;
  for (auto _ : st) benchmark::DoNotOptimize(asa::asa_forward(batch, params, rng, &cache));
}
BENCHMARK(BM_AsaForward)->Arg(8)->Arg(32);

void BM_Dtw(benchmark::State& st) {
  const Mat x = noise(st.range(0), 20, 4), y = noise(st.range(0) + 7, 20, 5);
  for (auto _ : st) benchmark::DoNotOptimize(dtw_align(x, y));
}
BENCHMARK(BM_Dtw)->Arg(64)->Arg(256);

void BM_McdDtw(benchmark::State& st) {
  const Mat x = noise(64, 20, 6), y = noise(70, 20, 7);
  for (auto _ : st) benchmark::DoNotOptimize(mcd_dtw(x, y));
}
BENCHMARK(BM_McdDtw);

void BM_StudentStep(benchmark::State& st) {
  const auto& data = corpus();
  SavcModel model(EncoderConfig{}, data.speakers, data.emotions, 1);
  TrainConfig cfg;
  std::vector<const Utterance*> batch;
  for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(&data.items[i]);
  CounterRng rng(2);
  for (auto _ : st) {
    for (auto& [n, p] : model.all_params()) p->zero_grad();
    benchmark::DoNotOptimize(student_batch_gradients(model, batch, cfg, StudentObjective::main, rng));
  }
}
BENCHMARK(BM_StudentStep)->Unit(benchmark::kMillisecond);

void BM_ConvertUtterance(benchmark::State& st) {
  const auto& data = corpus();
  SavcModel model(EncoderConfig{}, data.speakers, data.emotions, 1);
  const Vec target = model.speakers.embed(data.items[0].speaker);
  for (auto _ : st) benchmark::DoNotOptimize(convert_units(model, data.items[1].units, target));
}
BENCHMARK(BM_ConvertUtterance)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

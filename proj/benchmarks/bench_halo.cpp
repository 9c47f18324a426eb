#include <benchmark/benchmark.h>

#include "halo/heads.hpp"
#include "halo/hpr.hpp"
#include "halo/replaybuf.hpp"
#include "halo/runner.hpp"
#include "halo/taxonomy.hpp"

using namespace halo;

static void BM_RlsUpdate(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  heads::AnalyticHead head(static_cast<std::size_t>(d), 1.0);
  std::vector<std::string> ids;
  for (int i = 0; i < 60; ++i) ids.push_back("c" + std::to_string(i));
  head.expand(ids);
  const Eigen::MatrixXd phi = Eigen::MatrixXd::Random(d, 32);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(60, 32);
  for (int j = 0; j < 32; ++j) y(j % 60, j) = 1.0;
  for (auto _ : state) {
    heads::rls_update(head, phi, y);
    benchmark::DoNotOptimize(head.W().data());
  }
}
BENCHMARK(BM_RlsUpdate)->Arg(16)->Arg(32)->Arg(128);

static void BM_ProtoLoss(benchmark::State& state) {
  const auto t = taxonomy::make_balanced_taxonomy({5, 3, 4});
  hpr::PrototypeBank bank(16, 5);
  Rng rng(1);
  for (const auto& id : t.ids()) hpr::expand_prototypes(bank, t.node(id).level, id, nullptr, rng);
  hpr::PatchMatrix M(16, 16);
  for (auto& x : M.flat()) x = uniform01(rng);
  const auto label = heads::complete_label(t, {t.level_classes(2)[7], 2});
  hpr::PatchMatrix dM(16, 16);
  for (auto _ : state) {
    benchmark::DoNotOptimize(hpr::proto_loss(M, bank, label, {}, &dM));
  }
}
BENCHMARK(BM_ProtoLoss);

static void BM_ReservoirOffer(benchmark::State& state) {
  replay::ReplayBuffer buf(1000, 1);
  stream::StreamSample s;
  for (auto _ : state) {
    ++s.sample_id;
    benchmark::DoNotOptimize(buf.offer(s));
  }
}
BENCHMARK(BM_ReservoirOffer);

static void BM_TrainIteration(benchmark::State& state) {
  ExperimentConfig c;
  c.variant = static_cast<Variant>(state.range(0));
  const auto env = runner::build_environment(c);
  runner::Trainer trainer(c, env);
  std::size_t pos = 0;
  for (auto _ : state) {
    if (pos + c.batch_size > env.stream.size()) pos = 0;
    trainer.train_iteration(std::span(env.stream).subspan(pos, c.batch_size), {});
    pos += c.batch_size;
  }
}
BENCHMARK(BM_TrainIteration)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();

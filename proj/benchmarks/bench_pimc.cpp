// Microbenchmarks for the engine's hot paths: pair-table evaluation,
// table construction, path sweeps, energy measurement and the blocking
// analysis. Numbers are single-threaded.

#include <benchmark/benchmark.h>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "coulpimc/driver.hpp"

using namespace coulpimc;

namespace {

// Small but structurally complete e-p table shared by the evaluation and
// sampling benchmarks (built once, read-only afterwards).
std::shared_ptr<const PairActionTable> shared_table() {
    static std::shared_ptr<const PairActionTable> t = [] {
        PairTableSpec s;
        s.q1q2 = -1.0;
        s.mu = 1.0;
        s.tau = 0.03;
        s.grid_n = 128;
        s.r_min = 1e-3;
        s.r_max = 30.0;
        s.squarings = 8;
        s.l_max_cap = 8;
        s.tail_target = 1e-4;
        s.level_diagonals = 6;
        s.fit_points = 6;
        s.threads = 1;
        return std::make_shared<const PairActionTable>(build_pair_table(s));
    }();
    return t;
}

struct HydrogenFixture {
    SystemSpec spec;
    std::vector<std::shared_ptr<const PairActionTable>> tables;
    std::unique_ptr<LinkAction> action;
    PathConfiguration path;

    HydrogenFixture() {
        spec = build_system_spec(
            R"({"preset": "H", "model": "BO", "tau": 0.03, "M": 128})");
        tables.assign(spec.pairs.size(), shared_table());
        action = std::make_unique<LinkAction>(spec, ActionMode::Pair, tables);
        path = init_paths(spec, 97, InitStrategy::ThermalGaussian);
    }
};

HydrogenFixture& fixture() {
    static HydrogenFixture f;
    return f;
}

void BM_TableEval(benchmark::State& state) {
    const auto t = shared_table();
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> rd(0.05, 8.0), sd(0.0, 0.4);
    // Pre-drawn arguments so the RNG is not part of the measured loop.
    std::vector<double> r(1024), rp(1024), s(1024);
    for (size_t i = 0; i < r.size(); ++i) {
        r[i] = rd(gen);
        rp[i] = r[i] * std::exp(0.2 * (rd(gen) / 8.0 - 0.5));
        s[i] = sd(gen);
    }
    size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(t->eval(r[i], rp[i], s[i]));
        i = (i + 1) & 1023;
    }
}
BENCHMARK(BM_TableEval);

void BM_TableGradients(benchmark::State& state) {
    const auto t = shared_table();
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> rd(0.05, 8.0), sd(1e-3, 0.4);
    std::vector<double> r(1024), rp(1024), s(1024);
    for (size_t i = 0; i < r.size(); ++i) {
        r[i] = rd(gen);
        rp[i] = rd(gen);
        s[i] = sd(gen);
    }
    size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(t->gradients(r[i], rp[i], s[i]));
        i = (i + 1) & 1023;
    }
}
BENCHMARK(BM_TableGradients);

void BM_TableBuild(benchmark::State& state) {
    PairTableSpec s;
    s.q1q2 = -1.0;
    s.mu = 1.0;
    s.tau = 0.03;
    s.grid_n = static_cast<int>(state.range(0));
    s.r_min = 1e-3;
    s.r_max = 30.0;
    s.squarings = 6;
    s.l_max_cap = 4;
    s.tail_target = 1e-3;
    s.level_diagonals = 2;
    s.fit_points = 4;
    s.threads = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_pair_table(s));
    }
}
BENCHMARK(BM_TableBuild)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SweepHydrogen(benchmark::State& state) {
    auto& f = fixture();
    Sampler sampler(*f.action, MoveSchedule{}, 12345, 0);
    PathConfiguration path = f.path;
    for (auto _ : state) {
        sampler.sweep(path);
    }
    state.counters["bisection_rate"] = sampler.stats().bisection_rate();
}
BENCHMARK(BM_SweepHydrogen)->Unit(benchmark::kMicrosecond);

void BM_MeasureEnergy(benchmark::State& state) {
    auto& f = fixture();
    for (auto _ : state) {
        benchmark::DoNotOptimize(measure_energy(f.path, *f.action));
    }
}
BENCHMARK(BM_MeasureEnergy)->Unit(benchmark::kMicrosecond);

void BM_BlockMeasure(benchmark::State& state) {
    auto& f = fixture();
    BlockAccumulator acc(f.spec);
    for (auto _ : state) {
        acc.measure(f.path, *f.action);
    }
}
BENCHMARK(BM_BlockMeasure)->Unit(benchmark::kMicrosecond);

void BM_BlockingSem(benchmark::State& state) {
    std::mt19937_64 gen(9);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> series(4096);
    double prev = 0.0;
    for (auto& v : series) {
        prev = 0.9 * prev + nd(gen);
        v = prev;
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(blocking_sem(series));
    }
}
BENCHMARK(BM_BlockingSem)->Unit(benchmark::kMicrosecond);

} // namespace

BENCHMARK_MAIN();

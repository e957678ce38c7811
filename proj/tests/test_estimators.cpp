// Tests for error analysis (blocking, jackknife), histogram plumbing,
// contact/bond/fragment observables, and the two energy estimators.
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <vector>

#include "coulpimc/errors.hpp"
#include "coulpimc/estimators.hpp"
#include "coulpimc/link_action.hpp"
#include "coulpimc/paths.hpp"
#include "coulpimc/rng.hpp"
#include "coulpimc/sampling.hpp"
#include "coulpimc/system.hpp"

using namespace coulpimc;

namespace {

// One neutral particle, no pairs: the simplest system the estimators accept.
SystemSpec one_particle_spec(int m, double tau, ParticleModel model, double harmonic_k = 0.0,
                             Vec3 initial = Vec3{0.0, 0.0, 0.0}) {
    SystemSpec s;
    ParticleSpec p;
    p.label = "a";
    p.mass = 1.0;
    p.charge = 0.0;
    p.model = model;
    p.lambda = 0.5;
    p.initial = initial;
    s.particles = {p};
    s.box = BoxSpec{};
    s.discretization.tau = tau;
    s.discretization.trotter_m = m;
    s.harmonic_k = harmonic_k;
    s.derive_pairs();
    s.validate();
    return s;
}

SystemSpec h3plus_spec(int m, double tau) {
    char buf[160];
    std::snprintf(buf, sizeof buf, R"({"preset": "H3+", "model": "AQ", "tau": %g, "M": %d})",
                  tau, m);
    return build_system_spec(buf);
}

void move_ring(PathConfiguration& path, int particle, const Vec3& where) {
    for (int m = 0; m < path.slice_count(); ++m) path.bead(particle, m) = where;
}

// Fill one fine-format histogram so its shell density is exactly
// rho(r) = rho0 * (1 - r/2), using `scale` total samples.
Histogram fine_hist_with_linear_density(double rho0, double scale) {
    Histogram h(0.0, BlockAccumulator::kFineRange, BlockAccumulator::kFineBins);
    const double dr = h.bin_width();
    uint64_t sum = 0;
    for (size_t b = 0; b < h.counts.size(); ++b) {
        const double rc = h.bin_center(b);
        const double shell = 4.0 * M_PI * rc * rc * dr * scale;
        const double expected = rho0 * (1.0 - 0.5 * rc) * shell;
        h.counts[b] = static_cast<uint64_t>(std::llround(std::max(0.0, expected)));
        sum += h.counts[b];
    }
    h.total = static_cast<uint64_t>(std::llround(scale));
    h.overflow = h.total > sum ? h.total - sum : 0;
    return h;
}

// Main-format histogram holding round(amp * exp(-(r-c)^2 / (2 sigma^2))) counts.
Histogram main_hist_with_gaussian(double center, double sigma, double amp) {
    Histogram h(0.0, BlockAccumulator::kMainRange, BlockAccumulator::kMainBins);
    uint64_t sum = 0;
    for (size_t b = 0; b < h.counts.size(); ++b) {
        const double rc = h.bin_center(b);
        const double z = (rc - center) / sigma;
        h.counts[b] = static_cast<uint64_t>(std::llround(amp * std::exp(-0.5 * z * z)));
        sum += h.counts[b];
    }
    h.total = sum;
    return h;
}

} // namespace

TEST_CASE("histogram: binning, range edges, centers, and merge") {
    Histogram h(0.0, 1.0, 10);
    CHECK(h.bin_width() == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(h.bin_center(0) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(h.bin_center(9) == doctest::Approx(0.95).epsilon(1e-15));

    h.add(0.05);   // bin 0
    h.add(0.999);  // bin 9
    h.add(1.0);    // at hi: overflow
    h.add(-0.001); // below lo: overflow
    h.add(3.0);    // above: overflow
    CHECK(h.total == 5);
    CHECK(h.overflow == 3);
    CHECK(h.counts[0] == 1);
    CHECK(h.counts[9] == 1);

    Histogram g(0.0, 1.0, 10);
    g.add(0.05);
    g.add(0.45);
    g.merge(h);
    CHECK(g.total == 7);
    CHECK(g.overflow == 3);
    CHECK(g.counts[0] == 2);
    CHECK(g.counts[4] == 1);
    CHECK(g.counts[9] == 1);

    Histogram bad(0.0, 2.0, 10);
    CHECK_THROWS_AS(g.merge(bad), NumericalError);
    Histogram bad2(0.0, 1.0, 16);
    CHECK_THROWS_AS(g.merge(bad2), NumericalError);
}

TEST_CASE("blocking: independent samples reproduce the 1/sqrt(n) error") {
    RngStream rng(77, 0, 0);
    const size_t n = 4096;
    const double mu = 7.0, sd = 2.0;
    std::vector<double> x(n);
    for (auto& v : x) v = mu + sd * rng.gaussian();

    const BlockingResult r = blocking_sem(x);
    const double exact_mean = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
    CHECK(r.mean == doctest::Approx(exact_mean).epsilon(1e-14));
    CHECK(r.converged);
    // Independent data: the plateau is at (or very near) level zero.
    CHECK(r.levels <= 2);
    const double truth = sd / std::sqrt(double(n));
    CHECK(r.sem == doctest::Approx(truth).epsilon(0.12));
}

TEST_CASE("blocking: AR(1) correlation inflates the error to its true value") {
    // x_{t+1} = phi x_t + eps, eps ~ N(0,1). Stationary variance 1/(1-phi^2),
    // integrated autocorrelation (1+phi)/(1-phi), so the true standard error
    // of the mean is sqrt(var * tau_int / n).
    const double phi = 0.9;
    const size_t n = 65536;
    RngStream rng(78, 0, 0);
    std::vector<double> x(n);
    double state = 0.0;
    for (size_t i = 0; i < 512; ++i) state = phi * state + rng.gaussian(); // thermalize
    for (auto& v : x) {
        state = phi * state + rng.gaussian();
        v = state;
    }

    const double var = 1.0 / (1.0 - phi * phi);
    const double tau_int = (1.0 + phi) / (1.0 - phi);
    const double truth = std::sqrt(var * tau_int / double(n));

    const BlockingResult r = blocking_sem(x);
    CHECK(r.converged);
    CHECK(r.sem == doctest::Approx(truth).epsilon(0.25));

    // The naive (level-zero) estimate is badly low; blocking must grow well
    // past it.
    double m = 0.0;
    for (double v : x) m += v;
    m /= double(n);
    double c0 = 0.0;
    for (double v : x) c0 += (v - m) * (v - m);
    const double naive = std::sqrt(c0 / double(n) / (double(n) - 1.0));
    CHECK(r.sem > 3.0 * naive);
}

TEST_CASE("blocking: series too short to block is flagged unconverged") {
    std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
    const BlockingResult r = blocking_sem(x);
    CHECK(!r.converged);
    CHECK(r.levels == 0);
    CHECK(r.sem > 0.0);
    CHECK(r.mean == doctest::Approx(4.5).epsilon(1e-15));

    const BlockingResult one = blocking_sem({3.5});
    CHECK(one.mean == doctest::Approx(3.5));
    CHECK(one.sem == 0.0);
    CHECK(!one.converged);
}

TEST_CASE("jackknife of delete-one means equals the textbook standard error") {
    std::vector<double> v{1.2, 3.4, 2.2, 5.9, 4.4, 0.3, 2.8, 3.1,
                          6.0, 1.7, 2.9, 3.3, 4.1, 2.0, 5.2, 3.8};
    const size_t n = v.size();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(n);
    std::vector<double> delete_one(n);
    for (size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < n; ++j)
            if (j != i) s += v[j];
        delete_one[i] = s / double(n - 1);
    }
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double textbook = std::sqrt(ss / double(n - 1) / double(n));
    CHECK(jackknife_sem(delete_one, mean) == doctest::Approx(textbook).epsilon(1e-12));
    CHECK(jackknife_sem({1.0}, 1.0) == 0.0);
}

TEST_CASE("contact density: linear shell density extrapolates to its intercept") {
    const double rho0 = 0.3;
    const Histogram block = fine_hist_with_linear_density(rho0, 1e8);
    const std::vector<Histogram> blocks(8, block);

    const ContactResult c = contact_density(blocks, 0.2);
    CHECK(c.enough_counts);
    CHECK(c.counts_used >= 10000);
    CHECK(c.value == doctest::Approx(rho0).epsilon(0.01));
    // Identical blocks: the jackknife spread vanishes.
    CHECK(c.stat_sem == doctest::Approx(0.0).scale(rho0).epsilon(1e-10));
    // The density is linear over the whole window, so refits at half and
    // twice the window land on the same intercept up to count rounding.
    CHECK(c.sys_halfspread < 0.01 * rho0);
    CHECK(c.r_fit == 0.2);

    SUBCASE("too few counts clears the confidence flag") {
        const Histogram thin = fine_hist_with_linear_density(rho0, 2e4);
        const ContactResult t = contact_density({thin, thin}, 0.2);
        CHECK(!t.enough_counts);
    }
    SUBCASE("empty input returns zeros") {
        const ContactResult e = contact_density({}, 0.2);
        CHECK(e.value == 0.0);
        CHECK(!e.enough_counts);
    }
}

TEST_CASE("bond statistics: unimodal gaussian histogram") {
    const double r0 = 1.65, sigma = 0.1;
    const Histogram block = main_hist_with_gaussian(r0, sigma, 2e5);
    const std::vector<Histogram> blocks(4, block);

    const BondResult b = bond_stats(blocks);
    CHECK(b.mean == doctest::Approx(r0).epsilon(0.01));
    // The 3-bin smoothing widens the peak slightly: fwhm of the raw shape is
    // 2.3548 sigma; allow the smoothed value a one-and-a-half-bin band.
    CHECK(b.fwhm == doctest::Approx(2.3548 * sigma).epsilon(0.18));
    CHECK(!b.multimodal);
    CHECK(b.mean_sem == doctest::Approx(0.0).scale(r0).epsilon(1e-10));
}

TEST_CASE("bond statistics: well-separated double peak is flagged multimodal") {
    Histogram two = main_hist_with_gaussian(1.0, 0.08, 1e5);
    const Histogram second = main_hist_with_gaussian(3.0, 0.08, 9e4);
    for (size_t b = 0; b < two.counts.size(); ++b) two.counts[b] += second.counts[b];
    two.total += second.total;

    const BondResult r = bond_stats({two, two});
    CHECK(r.multimodal);
    CHECK(r.mean > 1.0);
    CHECK(r.mean < 3.0);
}

TEST_CASE("fragment classification tracks cluster splits of the five-particle system") {
    const SystemSpec spec = h3plus_spec(8, 0.03);
    REQUIRE(spec.n_particles() == 5);
    std::vector<int> nuclei, electrons;
    for (int p = 0; p < spec.n_particles(); ++p)
        (spec.particles[size_t(p)].charge > 0 ? nuclei : electrons).push_back(p);
    REQUIRE(nuclei.size() == 3);
    REQUIRE(electrons.size() == 2);

    PathConfiguration path = init_paths(spec, 11, InitStrategy::Point);
    const double cutoff = 6.0;

    // Point init: the equilateral triangle plus nearby electrons.
    CHECK(fragment_classify(path, spec, cutoff) == Fragment::H3Plus);

    SUBCASE("one distant bare nucleus leaves a two-nucleus molecule") {
        move_ring(path, nuclei[2], Vec3{40.0, 0.0, 0.0});
        // Both electrons stay near the remaining pair at the origin.
        CHECK(fragment_classify(path, spec, cutoff) == Fragment::H2_HPlus);
    }
    SUBCASE("one electron follows the lone nucleus") {
        move_ring(path, nuclei[2], Vec3{40.0, 0.0, 0.0});
        move_ring(path, electrons[1], Vec3{40.0, 0.4, 0.0});
        CHECK(fragment_classify(path, spec, cutoff) == Fragment::H2Plus_H);
    }
    SUBCASE("three separated nuclei, electrons on two of them") {
        move_ring(path, nuclei[0], Vec3{0.0, 0.0, 0.0});
        move_ring(path, nuclei[1], Vec3{40.0, 0.0, 0.0});
        move_ring(path, nuclei[2], Vec3{80.0, 0.0, 0.0});
        move_ring(path, electrons[0], Vec3{0.5, 0.0, 0.0});
        move_ring(path, electrons[1], Vec3{40.0, 0.5, 0.0});
        CHECK(fragment_classify(path, spec, cutoff) == Fragment::TwoH_HPlus);
    }
    SUBCASE("configurations outside the named list fall into Other") {
        move_ring(path, nuclei[0], Vec3{0.0, 0.0, 0.0});
        move_ring(path, nuclei[1], Vec3{40.0, 0.0, 0.0});
        move_ring(path, nuclei[2], Vec3{80.0, 0.0, 0.0});
        move_ring(path, electrons[0], Vec3{0.5, 0.0, 0.0});
        move_ring(path, electrons[1], Vec3{0.0, 0.5, 0.0});
        CHECK(fragment_classify(path, spec, cutoff) == Fragment::Other);
    }
}

TEST_CASE("fragment classification refuses systems that are not three nuclei plus two electrons") {
    const SystemSpec h = build_system_spec(R"({"preset": "H", "model": "BO", "tau": 0.03, "M": 8})");
    const PathConfiguration path = init_paths(h, 3, InitStrategy::Point);
    CHECK(fragment_classify(path, h, 6.0) == Fragment::Other);
}

TEST_CASE("fragment fraction bookkeeping") {
    std::array<uint64_t, kFragmentKinds> a{80, 10, 5, 3, 2};
    SUBCASE("identical blocks give exact fractions with zero spread") {
        const FragmentFractions f = fragment_fractions({a, a, a, a});
        CHECK(f.total == 400);
        CHECK(f.fraction[0] == doctest::Approx(0.80).epsilon(1e-15));
        CHECK(f.fraction[1] == doctest::Approx(0.10).epsilon(1e-15));
        CHECK(f.fraction[4] == doctest::Approx(0.02).epsilon(1e-15));
        for (double s : f.sem) CHECK(s == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("varying blocks give a positive spread") {
        std::array<uint64_t, kFragmentKinds> b{60, 30, 5, 3, 2};
        const FragmentFractions f = fragment_fractions({a, b, a, b});
        CHECK(f.total == 400);
        CHECK(f.fraction[0] == doctest::Approx(0.70).epsilon(1e-15));
        CHECK(f.sem[0] > 0.0);
        CHECK(f.sem[1] > 0.0);
    }
    SUBCASE("empty input") {
        const FragmentFractions f = fragment_fractions({});
        CHECK(f.total == 0);
    }
}

TEST_CASE("energy estimators on frozen configurations have the analytic values") {
    const double tau = 0.03;
    const int m = 16;
    const double beta = tau * m;

    SUBCASE("free quantum particle collapsed to a point") {
        const SystemSpec s = one_particle_spec(m, tau, ParticleModel::Quantum);
        const LinkAction action(s, ActionMode::Primitive, {});
        const PathConfiguration path = init_paths(s, 1, InitStrategy::Point);
        const EnergySample e = measure_energy(path, action);
        CHECK(e.spring == 0.0);
        CHECK(e.dudtau == 0.0);
        CHECK(e.virial_grad == 0.0);
        CHECK(e.classical_ideal == 0.0);
        CHECK(e.thermodynamic == doctest::Approx(1.5 / tau).epsilon(1e-14));
        CHECK(e.virial == doctest::Approx(1.5 / beta).epsilon(1e-14));
    }
    SUBCASE("classical particle contributes only the ideal term") {
        const SystemSpec s = one_particle_spec(m, tau, ParticleModel::Classical);
        const LinkAction action(s, ActionMode::Primitive, {});
        const PathConfiguration path = init_paths(s, 1, InitStrategy::Point);
        const EnergySample e = measure_energy(path, action);
        CHECK(e.spring == 0.0);
        CHECK(e.classical_ideal == doctest::Approx(1.5 / beta).epsilon(1e-14));
        CHECK(e.thermodynamic == doctest::Approx(1.5 / beta).epsilon(1e-14));
        CHECK(e.virial == doctest::Approx(1.5 / beta).epsilon(1e-14));
    }
    SUBCASE("fixed particle contributes nothing") {
        const SystemSpec s = one_particle_spec(m, tau, ParticleModel::Fixed);
        const LinkAction action(s, ActionMode::Primitive, {});
        const PathConfiguration path = init_paths(s, 1, InitStrategy::Point);
        const EnergySample e = measure_energy(path, action);
        CHECK(e.thermodynamic == 0.0);
        CHECK(e.virial == 0.0);
    }
    SUBCASE("harmonic well shifts both estimators by the same potential term") {
        // Point ring at |x| = 1 in V = 0.5 k x^2 with k = 1: every link's
        // tau-derivative is V = 0.5 and the virial gradient term vanishes
        // because every bead sits on the centroid.
        const SystemSpec s =
            one_particle_spec(m, tau, ParticleModel::Quantum, 1.0, Vec3{1.0, 0.0, 0.0});
        const LinkAction action(s, ActionMode::Primitive, {});
        const PathConfiguration path = init_paths(s, 1, InitStrategy::Point);
        const EnergySample e = measure_energy(path, action);
        CHECK(e.dudtau == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(e.virial_grad == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(e.thermodynamic == doctest::Approx(1.5 / tau + 0.5).epsilon(1e-14));
        CHECK(e.virial == doctest::Approx(1.5 / beta + 0.5).epsilon(1e-14));
    }
}

TEST_CASE("sampled harmonic oscillator matches the analytic thermal energy") {
    // One particle, m = 1, omega = 1, beta = 1 discretized with tau = 1/64.
    // E(beta) = 1.5 / tanh(0.5) = 3.245930... and the Trotter bias at this
    // tau is ~1e-3, far below the statistical band used here.
    const int m = 64;
    const double tau = 1.0 / 64.0;
    const SystemSpec s = one_particle_spec(m, tau, ParticleModel::Quantum, 1.0);
    const LinkAction action(s, ActionMode::Primitive, {});
    PathConfiguration path = init_paths(s, 5, InitStrategy::ThermalGaussian);

    MoveSchedule sched;
    Sampler sampler(action, sched, 20260816, 0);
    for (int i = 0; i < 400; ++i) sampler.sweep(path);
    sampler.freeze_tuning();

    const int n_meas = 4000;
    std::vector<double> e_th, e_vir;
    e_th.reserve(n_meas);
    e_vir.reserve(n_meas);
    for (int i = 0; i < n_meas; ++i) {
        sampler.sweep(path);
        const EnergySample e = measure_energy(path, action);
        e_th.push_back(e.thermodynamic);
        e_vir.push_back(e.virial);
    }

    const double exact = 1.5 / std::tanh(0.5);
    const BlockingResult th = blocking_sem(e_th);
    const BlockingResult vir = blocking_sem(e_vir);
    INFO("E_th = " << th.mean << " +- " << th.sem << ", E_vir = " << vir.mean << " +- "
                   << vir.sem << ", exact = " << exact);
    CHECK(std::abs(th.mean - exact) < std::max(5.0 * th.sem, 0.02 * exact));
    CHECK(std::abs(vir.mean - exact) < std::max(5.0 * vir.sem, 0.02 * exact));
    // The virial estimator's variance does not grow with the slice count; the
    // thermodynamic one's does. Verify the expected ordering holds here.
    CHECK(vir.sem < th.sem);
}

TEST_CASE("block accumulator: histograms, fragments, and exact merge arithmetic") {
    const SystemSpec spec = h3plus_spec(4, 0.03);
    std::vector<std::shared_ptr<const PairActionTable>> tables;
    const LinkAction action(spec, ActionMode::Primitive, tables,
                            /*allow_attractive_primitive=*/true);
    PathConfiguration path = init_paths(spec, 9, InitStrategy::Point);

    BlockAccumulator a(spec);
    BlockAccumulator b(spec);
    a.measure(path, action);
    a.measure(path, action);
    b.measure(path, action);

    CHECK(a.count() == 2);
    CHECK(a.has_kind(PairKind::PP));
    CHECK(a.has_kind(PairKind::EP));
    CHECK(a.has_kind(PairKind::EE));
    CHECK(!a.has_kind(PairKind::None));
    CHECK(a.tracks_fragments());

    // Each measurement adds one entry per slice per channel of the kind:
    // 3 PP channels, 6 EP, 1 EE with 4 slices each.
    CHECK(a.main_hist(PairKind::PP).total == 2u * 4u * 3u);
    CHECK(a.main_hist(PairKind::EP).total == 2u * 4u * 6u);
    CHECK(a.main_hist(PairKind::EE).total == 2u * 4u * 1u);
    CHECK(a.fine_hist(PairKind::EP).total == a.main_hist(PairKind::EP).total);
    CHECK(a.fine_hist(PairKind::EE).total == a.main_hist(PairKind::EE).total);
    CHECK(a.fragments()[size_t(Fragment::H3Plus)] == 2);

    const double e_th_a = a.e_th_sum();
    const double e_vir_a = a.e_vir_sum();
    BlockAccumulator merged(spec);
    merged.merge(a);
    merged.merge(b);
    CHECK(merged.count() == 3);
    CHECK(merged.e_th_sum() == doctest::Approx(e_th_a + b.e_th_sum()).epsilon(1e-15));
    CHECK(merged.e_vir_sum() == doctest::Approx(e_vir_a + b.e_vir_sum()).epsilon(1e-15));
    CHECK(merged.main_hist(PairKind::PP).total == 3u * 4u * 3u);
    CHECK(merged.fragments()[size_t(Fragment::H3Plus)] == 3);

    // The point-initialized triangle has side 1.65: every PP entry lands in
    // the same main-histogram bin.
    const Histogram& pp = merged.main_hist(PairKind::PP);
    uint64_t occupied = 0;
    for (uint64_t c : pp.counts) occupied += (c != 0);
    CHECK(occupied == 1);

    SUBCASE("no-pair system tracks energy only") {
        const SystemSpec fs = one_particle_spec(4, 0.03, ParticleModel::Quantum);
        const LinkAction fa(fs, ActionMode::Primitive, {});
        PathConfiguration fp = init_paths(fs, 2, InitStrategy::Point);
        BlockAccumulator acc(fs);
        acc.measure(fp, fa);
        CHECK(acc.count() == 1);
        CHECK(!acc.has_kind(PairKind::PP));
        CHECK(!acc.has_kind(PairKind::EP));
        CHECK(!acc.tracks_fragments());
    }
}

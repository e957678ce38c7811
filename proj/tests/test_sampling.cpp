// Path sampling: Metropolis kernel statistics, free-particle exactness of
// the bisection move, determinism and model constraints.
#include <cmath>
#include <vector>

#include "coulpimc/errors.hpp"
#include "coulpimc/link_action.hpp"
#include "coulpimc/paths.hpp"
#include "coulpimc/rng.hpp"
#include "coulpimc/sampling.hpp"
#include "coulpimc/system.hpp"
#include "doctest.h"

using namespace coulpimc;

namespace {

SystemSpec free_particle_system(int m, double tau = 0.03) {
    std::string cfg = R"({"particles":[{"label":"e","mass":1.0,"charge":0.0,
        "model":"quantum"}],"tau":)" +
                      std::to_string(tau) + R"(,"M":)" + std::to_string(m) +
                      R"(,"box_edge":"open"})";
    return build_system_spec(cfg);
}

} // namespace

TEST_CASE("metropolis acceptance statistics at a fixed action difference") {
    // For log_ratio = -ln 2, acceptance probability is exactly 1/2.
    RngStream rng(2024, 0, 99);
    const int n = 1000000;
    int acc = 0;
    for (int i = 0; i < n; ++i)
        if (metropolis_accept(-std::log(2.0), rng)) ++acc;
    const double rate = double(acc) / n;
    CHECK(rate == doctest::Approx(0.5).epsilon(0.01)); // 0.500 +- 0.005
    CHECK(std::abs(rate - 0.5) < 0.005);
}

TEST_CASE("metropolis always accepts uphill and consumes one variate") {
    RngStream a(7, 1, 1), b(7, 1, 1);
    CHECK(metropolis_accept(3.5, a));
    CHECK(metropolis_accept(0.0, a));
    // Stream position advanced identically for the accept-always branch:
    b.uniform();
    b.uniform();
    CHECK(a.next_u32() == b.next_u32());
    RngStream c(7, 1, 1);
    CHECK_THROWS_AS(metropolis_accept(std::nan(""), c), NumericalError);
}

TEST_CASE("free-particle bisection reproduces the free link variance") {
    // With zero interaction every proposed bridge is accepted and the ring
    // relaxes to the exact free-particle distribution: <|delta|^2> per link
    // is 3 * 2 lambda tau * (1 - 1/M).
    const int m = 64;
    const double tau = 0.03, lambda = 0.5;
    const auto spec = free_particle_system(m, tau);
    const LinkAction action(spec, ActionMode::Primitive, {});
    MoveSchedule sched;
    Sampler s(action, sched, 12345, 0);
    auto path = init_paths(spec, 7, InitStrategy::Point);

    for (int i = 0; i < 200; ++i) s.sweep(path); // decorrelate from the point start

    double acc = 0.0;
    uint64_t links = 0;
    for (int it = 0; it < 3000; ++it) {
        s.sweep(path);
        for (int sl = 0; sl < m; ++sl) {
            acc += norm2(path.link_delta(0, sl));
            ++links;
        }
    }
    const double mean = acc / double(links);
    const double expect = 6.0 * lambda * tau * (1.0 - 1.0 / m);
    CHECK(mean == doctest::Approx(expect).epsilon(0.02));
    CHECK(s.stats().bisection_rate() == doctest::Approx(1.0)); // free moves always accept
}

TEST_CASE("sweeps are deterministic and replayable through rng restore") {
    const auto spec = build_system_spec(R"({"preset":"H3+","model":"CN","tau":0.03,"M":32})");
    const LinkAction action(spec, ActionMode::Primitive, {},
                            /*allow_attractive_primitive=*/true);
    MoveSchedule sched;

    Sampler s1(action, sched, 999, 3);
    Sampler s2(action, sched, 999, 3);
    auto p1 = init_paths(spec, 11, InitStrategy::ThermalGaussian);
    auto p2 = init_paths(spec, 11, InitStrategy::ThermalGaussian);
    for (int i = 0; i < 50; ++i) {
        s1.sweep(p1);
        s2.sweep(p2);
    }
    for (int i = 0; i < spec.n_particles(); ++i)
        for (int m = 0; m < 32; ++m) CHECK(p1.bead(i, m) == p2.bead(i, m));
    CHECK(s1.stats().bisection_accepts == s2.stats().bisection_accepts);
    CHECK(s1.stats().displace_accepts == s2.stats().displace_accepts);

    // Replay the tail: snapshot the rng coordinates and path, run further,
    // then rebuild a sampler at the same coordinates and verify identical
    // evolution.
    const uint64_t blk = s1.rng().block_counter();
    const uint32_t pos = s1.rng().block_pos();
    auto p3 = p1;
    std::vector<double> steps;
    for (int i = 0; i < spec.n_particles(); ++i) steps.push_back(s1.displace_step(i));

    for (int i = 0; i < 25; ++i) s1.sweep(p1);

    Sampler s3(action, sched, 999, 3);
    s3.rng().restore(blk, pos);
    for (int i = 0; i < spec.n_particles(); ++i) s3.set_displace_step(i, steps[i]);
    if (!s1.tuning()) s3.freeze_tuning();
    for (int i = 0; i < 25; ++i) s3.sweep(p3);
    for (int i = 0; i < spec.n_particles(); ++i)
        for (int m = 0; m < 32; ++m) CHECK(p1.bead(i, m) == p3.bead(i, m));
}

TEST_CASE("different walker ids decorrelate immediately") {
    const auto spec = free_particle_system(16);
    const LinkAction action(spec, ActionMode::Primitive, {});
    Sampler a(action, {}, 4321, 0), b(action, {}, 4321, 1);
    auto pa = init_paths(spec, 3, InitStrategy::Point);
    auto pb = init_paths(spec, 3, InitStrategy::Point);
    a.sweep(pa);
    b.sweep(pb);
    bool same = true;
    for (int m = 0; m < 16 && same; ++m) same = pa.bead(0, m) == pb.bead(0, m);
    CHECK_FALSE(same);
}

TEST_CASE("fixed nuclei never move under sweeps") {
    const auto spec = build_system_spec(R"({"preset":"H3+","model":"BO","tau":0.03,"M":32})");
    const LinkAction action(spec, ActionMode::Primitive, {},
                            /*allow_attractive_primitive=*/true);
    Sampler s(action, {}, 77, 0);
    auto p = init_paths(spec, 5, InitStrategy::ThermalGaussian);
    const uint64_t fp = p.stored_fixed_fingerprint();
    for (int i = 0; i < 100; ++i) s.sweep(p);
    CHECK(p.fixed_fingerprint(spec) == fp);
    CHECK(validate(p, spec).all_ok());
    // Electrons did move.
    CHECK(s.stats().bisection_accepts > 0);
}

TEST_CASE("classical nuclei move rigidly and keep identity") {
    const auto spec = build_system_spec(R"({"preset":"H3+","model":"CN","tau":0.03,"M":32})");
    const LinkAction action(spec, ActionMode::Primitive, {},
                            /*allow_attractive_primitive=*/true);
    Sampler s(action, {}, 88, 0);
    auto p = init_paths(spec, 6, InitStrategy::ThermalGaussian);
    const Vec3 before = p.bead(0, 0);
    for (int i = 0; i < 300; ++i) s.sweep(p);
    CHECK(validate(p, spec).classical_identity_ok);
    const Vec3 after = p.bead(0, 0);
    CHECK(norm(after - before) > 0.0); // displacement moves accepted
    CHECK(s.stats().displace_accepts > 0);
}

TEST_CASE("displacement step tuning drives acceptance toward the target") {
    // A single classical charged particle in a harmonic well: tune during
    // an equilibration phase, then verify the frozen step keeps acceptance
    // in a healthy band.
    const auto spec = build_system_spec(
        R"({"particles":[{"label":"ion","mass":100.0,"charge":0.0,"model":"classical"}],
            "tau":0.05,"M":16,"harmonic_k":1.0,"box_edge":"open"})");
    const LinkAction action(spec, ActionMode::Primitive, {});
    MoveSchedule sched;
    sched.displace_step = 40.0; // absurdly large: must tune down
    Sampler s(action, sched, 31415, 0);
    auto p = init_paths(spec, 2, InitStrategy::Point);
    for (int i = 0; i < 4000; ++i) s.sweep(p);
    CHECK(s.displace_step(0) < 40.0);
    s.freeze_tuning();
    s.reset_stats();
    for (int i = 0; i < 2000; ++i) s.sweep(p);
    const double rate = s.stats().displace_rate();
    CHECK(rate > 0.25);
    CHECK(rate < 0.75);
}

TEST_CASE("bisection level auto-selection tracks the slice count") {
    const auto spec = free_particle_system(256);
    const LinkAction action(spec, ActionMode::Primitive, {});
    Sampler s(action, {}, 1, 0);
    // 2^l ~ M/16 = 16 -> l = 4.
    CHECK(s.bisection_level() == 4);

    const auto tiny = free_particle_system(8);
    const LinkAction ta(tiny, ActionMode::Primitive, {});
    Sampler st(ta, {}, 1, 0);
    CHECK(st.bisection_level() == 2); // clamped from below

    MoveSchedule fixed;
    fixed.bisection_level = 3;
    Sampler sf(action, fixed, 1, 0);
    CHECK(sf.bisection_level() == 3);
}

TEST_CASE("attractive primitive action requires explicit opt-in") {
    const auto spec = build_system_spec(R"({"preset":"H","model":"BO","tau":0.03,"M":16})");
    CHECK_THROWS_AS(LinkAction(spec, ActionMode::Primitive, {}), ConfigError);
    CHECK_NOTHROW(LinkAction(spec, ActionMode::Primitive, {},
                             /*allow_attractive_primitive=*/true));
}

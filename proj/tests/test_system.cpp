// System specification: presets, particle models, derived pair channels,
// Trotter-number bookkeeping and validation errors.
#include <cmath>

#include "coulpimc/errors.hpp"
#include "coulpimc/system.hpp"
#include "doctest.h"

using namespace coulpimc;

namespace {
int count_kind(const SystemSpec& s, PairKind k) {
    int n = 0;
    for (const auto& p : s.pairs)
        if (p.kind == k) ++n;
    return n;
}
} // namespace

TEST_CASE("H preset expands to proton plus electron") {
    const auto s = build_system_spec(R"({"preset":"H","model":"AQ","tau":0.03,"M":64})");
    REQUIRE(s.n_particles() == 2);
    CHECK(s.particles[0].charge == 1.0);
    CHECK(s.particles[0].mass == doctest::Approx(1.83615267248e3));
    CHECK(s.particles[1].charge == -1.0);
    CHECK(s.particles[1].mass == 1.0);
    CHECK(s.quantum_count() == 2);
    REQUIRE(s.pairs.size() == 1);
    CHECK(s.pairs[0].kind == PairKind::EP);
    CHECK(s.pairs[0].q1q2 == doctest::Approx(-1.0));
    CHECK(s.pairs[0].mu() == doctest::Approx(0.9994556794244814).epsilon(1e-12));
}

TEST_CASE("nucleus treatment selects the particle model") {
    const auto aq = build_system_spec(R"({"preset":"H3+","model":"AQ","tau":0.03,"M":64})");
    const auto cn = build_system_spec(R"({"preset":"H3+","model":"CN","tau":0.03,"M":64})");
    const auto bo = build_system_spec(R"({"preset":"H3+","model":"BO","tau":0.03,"M":64})");
    REQUIRE(aq.n_particles() == 5);
    CHECK(aq.quantum_count() == 5);
    CHECK(cn.quantum_count() == 2);
    CHECK(cn.classical_count() == 3);
    CHECK(bo.quantum_count() == 2);
    CHECK(bo.classical_count() == 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(aq.particles[i].model == ParticleModel::Quantum);
        CHECK(cn.particles[i].model == ParticleModel::Classical);
        CHECK(bo.particles[i].model == ParticleModel::Fixed);
        REQUIRE(bo.particles[i].initial.has_value());
    }
}

TEST_CASE("H3+ preset geometry is an equilateral triangle") {
    const auto s = build_system_spec(R"({"preset":"H3+","model":"BO","tau":0.03,"M":64})");
    const Vec3 a = *s.particles[0].initial;
    const Vec3 b = *s.particles[1].initial;
    const Vec3 c = *s.particles[2].initial;
    CHECK(norm(a - b) == doctest::Approx(1.65).epsilon(1e-12));
    CHECK(norm(b - c) == doctest::Approx(1.65).epsilon(1e-12));
    CHECK(norm(c - a) == doctest::Approx(1.65).epsilon(1e-12));

    const auto w = build_system_spec(
        R"({"preset":"H3+","model":"BO","triangle_side":2.5,"tau":0.03,"M":64})");
    CHECK(norm(*w.particles[0].initial - *w.particles[1].initial) ==
          doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("pair channels carry charge products and quantum lambdas") {
    const auto s = build_system_spec(R"({"preset":"H3+","model":"AQ","tau":0.03,"M":64})");
    REQUIRE(s.pairs.size() == 10);
    CHECK(count_kind(s, PairKind::PP) == 3);
    CHECK(count_kind(s, PairKind::EP) == 6);
    CHECK(count_kind(s, PairKind::EE) == 1);
    for (const auto& p : s.pairs) {
        if (p.kind == PairKind::PP) {
            CHECK(p.q1q2 == doctest::Approx(1.0));
            CHECK(p.lambda_pair == doctest::Approx(0.0005446170217694097).epsilon(1e-12));
        } else if (p.kind == PairKind::EE) {
            CHECK(p.q1q2 == doctest::Approx(1.0));
            CHECK(p.lambda_pair == doctest::Approx(1.0));
        } else {
            CHECK(p.q1q2 == doctest::Approx(-1.0));
            CHECK(p.lambda_pair == doctest::Approx(0.5 + 1.0 / (2.0 * 1.83615267248e3)));
        }
    }
}

TEST_CASE("classical and fixed nuclei zero out pair lambda") {
    const auto cn = build_system_spec(R"({"preset":"H3+","model":"CN","tau":0.03,"M":64})");
    const auto bo = build_system_spec(R"({"preset":"H3+","model":"BO","tau":0.03,"M":64})");
    for (const auto& s : {cn, bo}) {
        for (const auto& p : s.pairs) {
            if (p.kind == PairKind::PP) CHECK(p.lambda_pair == 0.0);
            if (p.kind == PairKind::EP) CHECK(p.lambda_pair == doctest::Approx(0.5));
        }
    }
}

TEST_CASE("trotter bookkeeping round-trips at fixed tau") {
    // 1/(k_B T tau) rounded to the nearest integer; achieved temperature
    // recomputed from the integer.
    const auto a = trotter_from_temperature(2570.0, 0.03);
    CHECK(a.trotter_m == 4096);
    CHECK(a.achieved_temperature == doctest::Approx(2569.7837308715593).epsilon(1e-12));

    const auto b = trotter_from_temperature(1365.0, 0.03);
    CHECK(b.trotter_m == 7711);

    const auto c = trotter_from_temperature(3999.0, 0.03);
    CHECK(c.trotter_m == 2632);

    CHECK(temperature_from(2730, 0.03) == doctest::Approx(3855.6169090292697).epsilon(1e-12));

    // Round trip through a large M.
    const double t65536 = temperature_from(65536, 0.03);
    CHECK(trotter_from_temperature(t65536, 0.03).trotter_m == 65536);
}

TEST_CASE("system config selects M or T but rejects contradictions") {
    const auto by_t = build_system_spec(R"({"preset":"H","model":"BO","tau":0.03,"T":2570})");
    CHECK(by_t.discretization.trotter_m == 4096);

    const auto both_ok =
        build_system_spec(R"({"preset":"H","model":"BO","tau":0.03,"M":4096,"T":2570})");
    CHECK(both_ok.discretization.trotter_m == 4096);

    CHECK_THROWS_AS(
        build_system_spec(R"({"preset":"H","model":"BO","tau":0.03,"M":4000,"T":2570})"),
        ConfigError);
    CHECK_THROWS_AS(build_system_spec(R"({"preset":"H","model":"BO","tau":0.03})"),
                    ConfigError);
}

TEST_CASE("mass density of the default H3+ cell") {
    const auto s = build_system_spec(R"({"preset":"H3+","model":"AQ","tau":0.03,"M":64})");
    REQUIRE(s.box.periodic);
    CHECK(s.box.edge == doctest::Approx(300.0));
    // (3 m_p + 2 m_e) in a (300 a0)^3 cell, in g/cm^3.
    CHECK(mass_density(s) == doctest::Approx(1.25e-6).epsilon(0.01));

    const auto open =
        build_system_spec(R"({"preset":"H","model":"BO","tau":0.03,"M":64,"box_edge":"open"})");
    CHECK_FALSE(open.box.periodic);
    CHECK_THROWS_AS(mass_density(open), ConfigError);
}

TEST_CASE("explicit particle lists and validation errors") {
    const auto s = build_system_spec(R"({
        "particles": [
            {"label":"a","mass":2.0,"charge":1.0,"model":"classical"},
            {"label":"b","mass":1.0,"charge":-1.0,"model":"quantum"},
            {"label":"n","mass":1.0,"charge":0.0,"model":"quantum"}
        ],
        "tau":0.05,"M":16})");
    REQUIRE(s.n_particles() == 3);
    // Neutral particle pairs with nothing: only the charged pair remains.
    REQUIRE(s.pairs.size() == 1);
    CHECK(s.pairs[0].q1q2 == doctest::Approx(-1.0));
    CHECK(s.pairs[0].lambda_pair == doctest::Approx(0.5)); // classical partner

    CHECK_THROWS_AS(build_system_spec(R"({"preset":"X","tau":0.03,"M":64})"), ConfigError);
    CHECK_THROWS_AS(build_system_spec(R"({"tau":0.03,"M":64})"), ConfigError);
    CHECK_THROWS_AS(build_system_spec(
                        R"({"particles":[{"label":"f","mass":1,"model":"fixed"}],"tau":0.03,"M":64})"),
                    ConfigError);
    CHECK_THROWS_AS(build_system_spec(R"({"preset":"H","tau":-0.03,"M":64})"), ConfigError);
    CHECK_THROWS_AS(build_system_spec(R"({"preset":"H","tau":0.03,"M":1})"), ConfigError);
    CHECK_THROWS_AS(build_system_spec(R"({"preset":"H","tau":0.03,"M":64,"box_edge":-4})"),
                    ConfigError);
    CHECK_THROWS_AS(build_system_spec("not json"), ConfigError);
}

TEST_CASE("temperature errors") {
    CHECK_THROWS_AS(trotter_from_temperature(-5.0, 0.03), ConfigError);
    CHECK_THROWS_AS(trotter_from_temperature(0.0, 0.03), ConfigError);
    // So hot that M would round below 2.
    CHECK_THROWS_AS(trotter_from_temperature(1e10, 0.03), ConfigError);
}

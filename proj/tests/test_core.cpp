// Numerics foundations: modified spherical Bessel evaluation, cubic
// splines, the counter-based RNG, and the FNV hash.
#include <cmath>
#include <cstdint>
#include <vector>

#include "coulpimc/bessel.hpp"
#include "coulpimc/hash.hpp"
#include "coulpimc/rng.hpp"
#include "coulpimc/spline.hpp"
#include "coulpimc/vec3.hpp"
#include "doctest.h"

using namespace coulpimc;

// ---------------------------------------------------------------------------
// log_itilde: log(exp(-z) i_l(z)) against high-precision reference values.
// ---------------------------------------------------------------------------
TEST_CASE("bessel reference values") {
    struct Case {
        int l;
        double z;
        double expected;
    };
    // Reference values computed with 40-digit arithmetic from
    // i_l(z) = sqrt(pi/(2z)) I_{l+1/2}(z).
    const Case cases[] = {
        {0, 1e-8, -9.99999998333333333e-9},
        {1, 1e-8, -19.5192930426204752},
        {0, 0.5, -0.458675145387081891},
        {2, 0.5, -4.5765226976440437},
        {5, 0.5, -13.205206872905922},
        {0, 3.7, -2.002091439862385},
        {1, 3.7, -2.31549757994726761},
        {7, 3.7, -8.66922674421373768},
        {0, 30, -4.09434456222210068},
        {10, 30, -5.93938810115664603},
        {25, 30, -14.5227002107402406},
        {0, 1e4, -9.90348755253612805},
        {20, 1e4, -9.92448859528894745},
        {40, 1e4, -9.98549154084644521},
        {63, 1e4, -10.1050969559732084},
        {63, 1e-3, -682.065442020738588},
        {12, 250, -6.52716897579811981},
    };
    for (const auto& c : cases) {
        CAPTURE(c.l);
        CAPTURE(c.z);
        auto out = log_itilde(c.z, c.l + 1);
        CHECK(out[c.l] == doctest::Approx(c.expected).epsilon(1e-10));
    }
}

TEST_CASE("bessel recurrence consistency across the algorithm switch") {
    // i_{l-1}(z) - i_{l+1}(z) = (2l+1) i_l(z) / z, rewritten in log space:
    // exp(a_{l-1} - a_l) - exp(a_{l+1} - a_l) = (2l+1)/z.
    for (double z : {1e-4, 0.03, 0.9, 5.0, 28.0, 33.0, 90.0, 95.0, 2e3, 1e7}) {
        auto a = log_itilde(z, 24);
        for (int l = 1; l < 23; ++l) {
            const double lhs = std::exp(a[l - 1] - a[l]) - std::exp(a[l + 1] - a[l]);
            CHECK(lhs == doctest::Approx((2 * l + 1) / z).epsilon(1e-9));
        }
    }
}

TEST_CASE("bessel small-argument limits") {
    // i_0 -> 1 and i_l ~ z^l / (2l+1)!! as z -> 0.
    auto a = log_itilde(1e-12, 4);
    CHECK(a[0] == doctest::Approx(0.0).epsilon(1e-11));
    // l = 1: log(z/3) = log z - log 3
    CHECK(a[1] == doctest::Approx(std::log(1e-12) - std::log(3.0)).epsilon(1e-10));
    // l = 3: log(z^3/105)
    CHECK(a[3] == doctest::Approx(3 * std::log(1e-12) - std::log(105.0)).epsilon(1e-10));
}

TEST_CASE("bessel large-argument asymptote") {
    // e^{-z} i_l(z) -> 1/(2z) for every fixed l as z -> infinity.
    auto a = log_itilde(1e9, 8);
    for (int l = 0; l < 8; ++l)
        CHECK(a[l] == doctest::Approx(-std::log(2e9)).epsilon(1e-7));
}

// ---------------------------------------------------------------------------
// Cubic spline.
// ---------------------------------------------------------------------------
TEST_CASE("spline reproduces linear data exactly") {
    std::vector<double> x{0.0, 0.7, 1.3, 2.9, 4.0};
    std::vector<double> y;
    for (double v : x) y.push_back(3.0 * v - 1.0);
    CubicSpline s(x, y);
    for (double t : {0.0, 0.21, 0.99, 2.0, 3.99, 4.0})
        CHECK(s.eval(t) == doctest::Approx(3.0 * t - 1.0).epsilon(1e-14));
    for (double t : {0.1, 1.0, 3.5}) CHECK(s.deriv(t) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("spline interpolates smooth data to quartic order") {
    const int n = 60;
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
        x[i] = 0.1 * i;
        y[i] = std::sin(x[i]);
    }
    CubicSpline s(x, y);
    // Interior accuracy: natural boundary conditions only degrade the ends.
    for (double t = 1.0; t < 4.9; t += 0.037) {
        CHECK(s.eval(t) == doctest::Approx(std::sin(t)).epsilon(2e-5));
        CHECK(s.deriv(t) == doctest::Approx(std::cos(t)).epsilon(2e-3));
    }
}

TEST_CASE("spline clamps outside the abscissa range") {
    CubicSpline s({1.0, 2.0, 3.0}, {5.0, 7.0, 4.0});
    CHECK(s.eval(0.0) == doctest::Approx(5.0));
    CHECK(s.eval(9.0) == doctest::Approx(4.0));
}

TEST_CASE("spline indexed fast path matches search path") {
    std::vector<double> x{0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
    std::vector<double> y{1.0, -2.0, 0.5, 3.0, 2.0, -1.0};
    CubicSpline s(x, y);
    for (size_t i = 0; i + 1 < x.size(); ++i) {
        const double t = 0.5 * (x[i] + x[i + 1]);
        CHECK(s.eval_at(i, t) == doctest::Approx(s.eval(t)).epsilon(1e-15));
        CHECK(s.deriv_at(i, t) == doctest::Approx(s.deriv(t)).epsilon(1e-15));
    }
}

// ---------------------------------------------------------------------------
// Counter-based RNG.
// ---------------------------------------------------------------------------
TEST_CASE("philox known-answer vectors") {
    uint32_t out[4];

    const uint32_t zero_ctr[4] = {0, 0, 0, 0};
    const uint32_t zero_key[2] = {0, 0};
    Philox4x32::block(zero_ctr, zero_key, out);
    CHECK(out[0] == 0x6627e8d5u);
    CHECK(out[1] == 0xe169c58du);
    CHECK(out[2] == 0xbc57ac4cu);
    CHECK(out[3] == 0x9b00dbd8u);

    const uint32_t ones_ctr[4] = {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu};
    const uint32_t ones_key[2] = {0xffffffffu, 0xffffffffu};
    Philox4x32::block(ones_ctr, ones_key, out);
    CHECK(out[0] == 0x408f276du);
    CHECK(out[1] == 0x41c83b0eu);
    CHECK(out[2] == 0xa20bc7c6u);
    CHECK(out[3] == 0x6d5451fdu);

    const uint32_t pi_ctr[4] = {0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u};
    const uint32_t pi_key[2] = {0xa4093822u, 0x299f31d0u};
    Philox4x32::block(pi_ctr, pi_key, out);
    CHECK(out[0] == 0xd16cfe09u);
    CHECK(out[1] == 0x94fdccebu);
    CHECK(out[2] == 0x5001e420u);
    CHECK(out[3] == 0x24126ea1u);
}

TEST_CASE("rng streams are deterministic and independent") {
    RngStream a(42, 7, 3), b(42, 7, 3), c(42, 8, 3), d(43, 7, 3);
    bool differs_c = false, differs_d = false;
    for (int i = 0; i < 1000; ++i) {
        const uint32_t va = a.next_u32();
        CHECK(va == b.next_u32());
        differs_c |= (va != c.next_u32());
        differs_d |= (va != d.next_u32());
    }
    CHECK(differs_c);
    CHECK(differs_d);
}

TEST_CASE("rng restore resumes the exact sequence") {
    RngStream a(123, 1, 2);
    for (int i = 0; i < 777; ++i) a.next_u32();
    const uint64_t blk = a.block_counter();
    const uint32_t pos = a.block_pos();
    std::vector<uint32_t> tail;
    for (int i = 0; i < 100; ++i) tail.push_back(a.next_u32());

    RngStream b(123, 1, 2);
    b.restore(blk, pos);
    for (int i = 0; i < 100; ++i) CHECK(b.next_u32() == tail[static_cast<size_t>(i)]);
}

TEST_CASE("rng uniform range and moments") {
    RngStream r(7, 0, 0);
    const int n = 200000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
        sum2 += u * u;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    // SEM of the mean is 1/sqrt(12 n) ~ 6.5e-4; allow 4 sigma.
    CHECK(mean == doctest::Approx(0.5).epsilon(5.2e-3));
    CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(2e-2));

    RngStream g(7, 0, 1);
    double gs = 0, gs2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = g.gaussian();
        gs += x;
        gs2 += x * x;
    }
    CHECK(gs / n == doctest::Approx(0.0).epsilon(1).scale(0.01));
    CHECK(gs2 / n == doctest::Approx(1.0).epsilon(1.5e-2));
}

TEST_CASE("rng uniform_open excludes zero") {
    RngStream r(99, 0, 0);
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform_open();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
    }
}

// ---------------------------------------------------------------------------
// FNV-1a hashing.
// ---------------------------------------------------------------------------
TEST_CASE("fnv1a64 standard vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("fnv1a64 distinguishes double payloads") {
    Fnv1a64 h1, h2;
    h1.update_double(1.0);
    h2.update_double(1.0 + 1e-16);
    CHECK(h1.digest() == h2.digest()); // same double after rounding
    Fnv1a64 h3;
    h3.update_double(std::nextafter(1.0, 2.0));
    CHECK(h1.digest() != h3.digest());
}

// ---------------------------------------------------------------------------
// Vec3.
// ---------------------------------------------------------------------------
TEST_CASE("vec3 algebra") {
    const Vec3 a{1, 2, 3}, b{-2, 0.5, 4};
    CHECK(dot(a, b) == doctest::Approx(-2 + 1 + 12));
    CHECK(norm2(a - a) == 0.0);
    CHECK(norm(Vec3{3, 4, 0}) == doctest::Approx(5.0));
    const Vec3 c = 2.0 * a - b * 0.5;
    CHECK(c.x == doctest::Approx(3.0));
    CHECK(c.y == doctest::Approx(3.75));
    CHECK(c.z == doctest::Approx(4.0));
}

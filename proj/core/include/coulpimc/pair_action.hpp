#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "coulpimc/spline.hpp"

namespace coulpimc {

// Exact free-particle density-matrix logarithm for one particle and one
// link: -|delta|^2/(4 lambda tau) - (3/2) ln(4 pi lambda tau).
double free_kernel_log(double delta2, double lambda, double tau);

// Primitive (endpoint-averaged) Coulomb pair action tau*q1q2*(1/r+1/r')/2.
// Exact for classical pairs; a validation mode for quantum ones.
double primitive_pair_action(double r, double r_next, double q1q2, double tau);

struct PairTableSpec {
    double q1q2 = 0.0; // charge product, e^2
    double mu = 1.0;   // reduced mass of the pair's relative coordinate, m_e
    double tau = 0.03; // target time step, E_H^-1

    int grid_n = 1024;
    double r_min = 1e-4;
    double r_max = 60.0;
    int squarings = 10;          // seed at tau0 = tau / 2^squarings
    int l_max_cap = 64;          // partial-wave cap
    double tail_target = 1e-6;   // stop adding waves when the assembled
                                 // diagonal stops changing by this much
                                 // (relative, two consecutive increments)
    int level_diagonals = 8;     // diagonal tables at tau*2^j, j=1..this
    double dudtau_delta = 0.0625; // centered-difference half-width (relative)
    int fit_points = 8;          // off-diagonal s samples per geometry
    int threads = 0;             // 0 = hardware concurrency

    // Test hook: run the full ladder even for q1q2 == 0 instead of
    // short-circuiting to the exact null table.
    bool force_build_null = false;
};

// Tabulated pair action u(r, r'; tau) for one (charge product, reduced mass,
// tau) combination, in the variables q = (r+r')/2 and s = |vec r - vec r'|:
//
//   u(q, s) = u0(q) + a1(q) s^2 + a2(q) s^4
//
// plus the tau-derivative tables (du0, da1, da2) and the diagonal action at
// the doubled timesteps tau*2^j used by multilevel sampling. Built by
// partial-wave radial matrix squaring from a primitive high-temperature
// seed. Immutable after construction; shared read-only across threads.
class PairActionTable {
public:
    PairActionTable() = default;
    PairActionTable(PairActionTable&& other) noexcept;
    PairActionTable& operator=(PairActionTable&& other) noexcept;

    double q1q2() const { return q1q2_; }
    double mu() const { return mu_; }
    double tau() const { return tau_; }
    double lambda() const { return lambda_; } // 1/(2 mu)
    bool is_null() const { return null_; }
    int l_used() const { return l_used_; }
    double tail_metric() const { return tail_metric_; }
    int squarings() const { return squarings_; }

    // Pair action for a link whose relative separations are r and r_next and
    // whose relative displacement magnitude is s. The two-argument overload
    // is the collinear case s = |r - r_next|.
    double eval(double r, double r_next, double s) const;
    double eval(double r, double r_next) const;

    // d u / d tau at the same point.
    double tau_derivative(double r, double r_next, double s) const;
    double tau_derivative(double r, double r_next) const;

    struct Gradients {
        double du_dr = 0.0;  // against the first separation, at fixed r', s
        double du_drp = 0.0; // against the second separation
        double du_ds = 0.0;  // against s, divided by s (regular at s = 0)
    };
    // Partial derivatives of u for the virial estimator; du_ds is returned
    // as (1/s) du/ds so the caller can multiply by the displacement vector.
    Gradients gradients(double r, double r_next, double s) const;

    // Diagonal action u(r, r; tau * 2^level) for multilevel sampling,
    // level in [1, level_count()].
    double level_diag(int level, double r) const;
    int level_count() const { return static_cast<int>(level_u0_.size()); }

    // Number of evaluations that fell outside the radial grid (clamped below
    // r_min or switched to the primitive form above r_max).
    uint64_t clamp_count() const { return clamp_count_.load(std::memory_order_relaxed); }

    const std::vector<double>& grid() const { return grid_; }
    const CubicSpline& u0() const { return u0_; }
    const CubicSpline& du0() const { return du0_; }
    double s_max(double q) const;

    // Serialization (versioned little-endian binary with CRC32; see
    // table_io.cpp for the layout).
    void save(const std::string& path) const;
    static std::shared_ptr<const PairActionTable> load(const std::string& path);

    // Cache key / filename stem derived from the build parameters.
    static std::string cache_stem(const PairTableSpec& spec);

private:
    friend PairActionTable build_pair_table(const PairTableSpec& spec);
    friend class TableReader;

    double q1q2_ = 0.0, mu_ = 1.0, tau_ = 0.0, lambda_ = 0.5;
    bool null_ = true;
    int l_used_ = 0;
    int squarings_ = 0;
    double tail_metric_ = 0.0;
    double r_min_ = 0.0, r_max_ = 0.0;

    std::vector<double> grid_;
    CubicSpline u0_, a1_, a2_;
    CubicSpline du0_, da1_, da2_;
    std::vector<CubicSpline> level_u0_;

    mutable std::atomic<uint64_t> clamp_count_{0};
};

// Builds the table by radial matrix squaring (three ladders for the centered
// tau-derivative, plus doubled-timestep continuation for the level
// diagonals). Throws NumericalError if the squaring produces a
// non-positive density beyond tolerance.
PairActionTable build_pair_table(const PairTableSpec& spec);

// Validation utility: the assembled diagonal pair density matrix ratio
// rho_pair(r, r; beta) / rho_free(r, r; beta) on the radial grid, built by
// k squarings from a primitive seed at beta/2^k. Used to check the squaring
// machinery against analytic references at large beta.
struct DiagonalCheck {
    std::vector<double> r;     // radial nodes
    std::vector<double> ratio; // rho_pair / rho_free on the diagonal
    int l_used = 0;
};
DiagonalCheck build_pair_diagonal(double q1q2, double mu, double beta, int grid_n,
                                  double r_min, double r_max, int l_count,
                                  int squarings, int threads = 0);

} // namespace coulpimc

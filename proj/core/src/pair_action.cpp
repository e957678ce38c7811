#include "coulpimc/pair_action.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <sstream>
#include <thread>

#include "coulpimc/bessel.hpp"
#include "coulpimc/errors.hpp"
#include "coulpimc/hash.hpp"

namespace coulpimc {

PairActionTable::PairActionTable(PairActionTable&& other) noexcept { *this = std::move(other); }

PairActionTable& PairActionTable::operator=(PairActionTable&& other) noexcept {
    if (this == &other) return *this;
    q1q2_ = other.q1q2_;
    mu_ = other.mu_;
    tau_ = other.tau_;
    lambda_ = other.lambda_;
    null_ = other.null_;
    l_used_ = other.l_used_;
    squarings_ = other.squarings_;
    tail_metric_ = other.tail_metric_;
    r_min_ = other.r_min_;
    r_max_ = other.r_max_;
    grid_ = std::move(other.grid_);
    u0_ = std::move(other.u0_);
    a1_ = std::move(other.a1_);
    a2_ = std::move(other.a2_);
    du0_ = std::move(other.du0_);
    da1_ = std::move(other.da1_);
    da2_ = std::move(other.da2_);
    level_u0_ = std::move(other.level_u0_);
    clamp_count_.store(other.clamp_count_.load(std::memory_order_relaxed),
                       std::memory_order_relaxed);
    return *this;
}

double free_kernel_log(double delta2, double lambda, double tau) {
    return -delta2 / (4.0 * lambda * tau) - 1.5 * std::log(4.0 * M_PI * lambda * tau);
}

double primitive_pair_action(double r, double r_next, double q1q2, double tau) {
    return 0.5 * tau * q1q2 * (1.0 / r + 1.0 / r_next);
}

namespace {

// ---------------------------------------------------------------------------
// Radial log grid with O(1) index lookup.
// ---------------------------------------------------------------------------
struct LogGrid {
    std::vector<double> r;
    double ln_r0 = 0.0;
    double h = 0.0; // log spacing
    int n = 0;

    double index_of(double x) const { return (std::log(x) - ln_r0) / h; }
};

LogGrid make_grid(int n, double r_min, double r_max) {
    LogGrid g;
    g.n = n;
    g.ln_r0 = std::log(r_min);
    g.h = (std::log(r_max) - g.ln_r0) / (n - 1);
    g.r.resize(n);
    for (int i = 0; i < n; ++i) g.r[i] = std::exp(g.ln_r0 + g.h * i);
    g.r.front() = r_min;
    g.r.back() = r_max;
    return g;
}

// 4-point Lagrange interpolation stencil on the (fractional) index axis.
struct Stencil {
    int j0 = 0;
    double w[4] = {0, 0, 0, 0};
};

Stencil lagrange4(double t, int n) {
    Stencil s;
    int j = static_cast<int>(std::floor(t));
    j = std::clamp(j, 1, n - 3); // stencil {j-1, j, j+1, j+2}
    double x = t - j;            // in [-inf, inf), usually [0, 1)
    // Clamp far extrapolation: beyond one spacing outside the grid the rows
    // are taken as constant (end value); the integrand there is negligible.
    x = std::clamp(x, -1.5, 2.5);
    s.j0 = j - 1;
    double xm = x + 1.0, x0 = x, x1 = x - 1.0, x2 = x - 2.0;
    s.w[0] = -x0 * x1 * x2 / 6.0;
    s.w[1] = xm * x1 * x2 / 2.0;
    s.w[2] = -xm * x0 * x2 / 2.0;
    s.w[3] = xm * x0 * x1 / 6.0;
    return s;
}

inline double row_gather(const double* row, const Stencil& s) {
    return s.w[0] * row[s.j0] + s.w[1] * row[s.j0 + 1] + s.w[2] * row[s.j0 + 2] +
           s.w[3] * row[s.j0 + 3];
}

// ---------------------------------------------------------------------------
// Quadrature template: composite 8-point Gauss-Legendre panels covering
// [-half_width, half_width] in units of the kernel width sigma.
// ---------------------------------------------------------------------------
constexpr double kGl8X[8] = {-0.9602898564975362, -0.7966664774136267, -0.5255324099163290,
                             -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                             0.7966664774136267,  0.9602898564975362};
constexpr double kGl8W[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                             0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                             0.2223810344533745, 0.1012285362903763};

// 6.5 sigma captures the Gaussian kernel to ~4e-10 of its mass. Away from
// the bound-state regime the integrand's non-Gaussian factors vary slowly on
// the kernel scale, so 8-point Gauss-Legendre per 1-sigma panel is converged
// to better than the table's own interpolation error. Once the kernel width
// of an attractive channel exceeds the channel's own bound-state length
// scale 1/(mu |q1 q2|), the integrand carries orbital structure narrower
// than sigma and the panels must resolve that absolute scale instead:
// panels wider than ~0.6 of it leave relative errors above 1e-4, while
// 0.5 of it is converged to a few 1e-5. Repulsive channels have no bound
// structure and keep the sigma-scaled panels at every timestep.
constexpr double kHalfWidthSigma = 6.5; // window half-width in sigma units
constexpr double kPanelSigma = 1.0;     // panel width in sigma units
constexpr double kPanelBound = 0.5;     // attractive panel cap, bound-scale units

struct QuadTemplate {
    std::vector<double> xi;   // nodes, sigma units
    std::vector<double> ln_w; // log weights, sigma units
};

QuadTemplate make_template(double panel_sigma) {
    QuadTemplate q;
    int panels = static_cast<int>(std::ceil(2.0 * kHalfWidthSigma / panel_sigma));
    double a = -kHalfWidthSigma;
    double width = 2.0 * kHalfWidthSigma / panels;
    for (int p = 0; p < panels; ++p) {
        double lo = a + p * width, mid = lo + 0.5 * width;
        for (int g = 0; g < 8; ++g) {
            q.xi.push_back(mid + 0.5 * width * kGl8X[g]);
            q.ln_w.push_back(std::log(0.5 * width * kGl8W[g]));
        }
    }
    return q;
}

// Panel width for one squaring step, in sigma units (see above).
double panel_width_sigma(double lambda, double q1q2, double sigma) {
    if (q1q2 >= 0.0) return kPanelSigma;
    const double mu = 0.5 / lambda;
    const double bound_scale = 1.0 / (mu * -q1q2);
    return std::min(kPanelSigma, kPanelBound * bound_scale / sigma);
}

// ---------------------------------------------------------------------------
// A contiguous block of partial-wave channels evolved through squaring.
// ---------------------------------------------------------------------------
using Matrix = std::vector<double>; // n*n row-major, symmetric

struct ChannelBlock {
    int l_lo = 0;
    int l_count = 0;
    double tau = 0.0; // current timestep of U
    std::vector<Matrix> U;
};

void seed_primitive(ChannelBlock& b, const LogGrid& g, double q1q2, double tau0) {
    b.tau = tau0;
    b.U.assign(b.l_count, Matrix(static_cast<size_t>(g.n) * g.n));
    Matrix seedm(static_cast<size_t>(g.n) * g.n);
    for (int i = 0; i < g.n; ++i)
        for (int k = 0; k < g.n; ++k)
            seedm[static_cast<size_t>(i) * g.n + k] =
                primitive_pair_action(g.r[i], g.r[k], q1q2, tau0);
    for (auto& m : b.U) m = seedm;
}

void run_rows(int n, int threads, const std::function<void(int)>& body) {
    int t = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    t = std::max(1, std::min(t, n));
    if (t == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (int w = 0; w < t; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += t) body(i);
        });
    for (auto& th : pool) th.join();
}

// One squaring step: U(tau) -> U(2 tau). The convolution over the
// intermediate radius x uses Gauss-Legendre panels scaled to the kernel
// width sqrt(lambda tau) around the midpoint m = (r_i + r_k)/2; the free
// radial kernel is exactly normalized, so for U == 0 the sum reproduces 1.
// Nodes beyond the grid's outer edge keep their kernel weight and take the
// asymptotic (endpoint-averaged primitive) action, which all channels share
// at large separation; dropping them instead would bleed probability mass
// out of the edge rows and the bias would compound over repeated squarings.
// Nodes below the inner edge likewise keep their kernel weight and evaluate
// the action at the inner edge value (the interpolation coordinate is
// clamped); dropping them would act as an absorbing core that eats real
// density near the origin, a bias that also compounds over squarings. Only
// x <= 0 is skipped: the radial kernel's own x^2 weight vanishes there.
void square_once(ChannelBlock& b, const LogGrid& g, double lambda, double q1q2, int threads) {
    const int n = g.n;
    const int lc = b.l_count;
    const int ltot = b.l_lo + lc; // Bessel entries needed per evaluation
    const double tau = b.tau;
    const double sigma = std::sqrt(lambda * tau);
    const QuadTemplate qt = make_template(panel_width_sigma(lambda, q1q2, sigma));
    const double inv_2lt = 1.0 / (2.0 * lambda * tau);
    const double ln_c = std::log(4.0 * M_PI) + 1.5 * std::log(2.0) -
                        1.5 * std::log(4.0 * M_PI * lambda * tau);
    const double x_in = g.r.front();
    const double x_hi = g.r.back();
    const int gw = static_cast<int>(qt.xi.size());

    std::vector<Matrix> out(lc, Matrix(static_cast<size_t>(n) * n));

    run_rows(n, threads, [&](int i) {
        // Per-row scratch. Allocated once per row; cheap beside the O(n)
        // inner work per pair.
        std::vector<double> b1(ltot), b2(ltot), i3(ltot);
        std::vector<double> expo(static_cast<size_t>(lc) * gw);
        std::vector<double> u1(lc), u2(lc);
        const double ri = g.r[i];
        for (int k = i; k < n; ++k) {
            const double rk = g.r[k];
            const double m = 0.5 * (ri + rk);
            log_itilde(ri * rk * 0.5 * inv_2lt, ltot, i3.data());
            int used = 0;
            for (int q = 0; q < gw; ++q) {
                const double x = m + sigma * qt.xi[q];
                if (x <= 0.0) continue;
                const double z1 = ri * x * inv_2lt;
                const double z2 = x * rk * inv_2lt;
                log_itilde(z1, ltot, b1.data());
                log_itilde(z2, ltot, b2.data());
                if (x >= x_hi) {
                    const double ua = primitive_pair_action(ri, x, q1q2, tau);
                    const double ub = primitive_pair_action(rk, x, q1q2, tau);
                    for (int l = 0; l < lc; ++l) {
                        u1[l] = ua;
                        u2[l] = ub;
                    }
                } else {
                    const Stencil st = lagrange4(g.index_of(x < x_in ? x_in : x), n);
                    for (int l = 0; l < lc; ++l) {
                        const double* mat = b.U[l].data();
                        u1[l] = row_gather(mat + static_cast<size_t>(i) * n, st);
                        u2[l] = row_gather(mat + static_cast<size_t>(k) * n, st);
                    }
                }
                const double pre = qt.ln_w[q] + std::log(sigma) + ln_c + 2.0 * std::log(x) -
                                   0.5 * qt.xi[q] * qt.xi[q];
                for (int l = 0; l < lc; ++l)
                    expo[static_cast<size_t>(l) * gw + used] =
                        pre + b1[b.l_lo + l] + b2[b.l_lo + l] - i3[b.l_lo + l] - u1[l] - u2[l];
                ++used;
            }
            for (int l = 0; l < lc; ++l) {
                const double* e = expo.data() + static_cast<size_t>(l) * gw;
                double peak = -HUGE_VAL;
                for (int q = 0; q < used; ++q) peak = std::max(peak, e[q]);
                double acc = 0.0;
                for (int q = 0; q < used; ++q) acc += std::exp(e[q] - peak);
                const double val = (used > 0 && acc > 0.0 && std::isfinite(peak))
                                       ? -(peak + std::log(acc))
                                       : HUGE_VAL;
                out[l][static_cast<size_t>(i) * n + k] = val;
            }
        }
    });

    for (int l = 0; l < lc; ++l)
        for (int i = 0; i < n; ++i)
            for (int k = i + 1; k < n; ++k)
                out[l][static_cast<size_t>(k) * n + i] = out[l][static_cast<size_t>(i) * n + k];
    b.U = std::move(out);
    b.tau = 2.0 * tau;
}

// Evolve a channel block from the primitive seed at tau/2^k up to tau.
ChannelBlock build_block(int l_lo, int l_count, const LogGrid& g, double q1q2, double lambda,
                         double tau, int k, int threads) {
    ChannelBlock b;
    b.l_lo = l_lo;
    b.l_count = l_count;
    seed_primitive(b, g, q1q2, std::ldexp(tau, -k));
    for (int s = 0; s < k; ++s) square_once(b, g, lambda, q1q2, threads);
    return b;
}

// View over the concatenated channels of several blocks.
struct ChannelView {
    std::vector<const Matrix*> mats;
    int total() const { return static_cast<int>(mats.size()); }
    void add(const ChannelBlock& b) {
        for (const auto& m : b.U) mats.push_back(&m);
    }
};

// ---------------------------------------------------------------------------
// Partial-wave assembly: the full off-diagonal density-matrix ratio
//
//   ratio(r, r', ct) = W_last + sum_{l < L-1} (2l+1) exp(zeta + log itl_l(z))
//                                 P_l(ct) (W_l - W_last)
//
// with z = r r' / (2 lambda tau), zeta = z (1 - ct), W_l = exp(-U_l). The
// W_last term completes the partial-wave series exactly for a tail of
// l-independent channels.
// ---------------------------------------------------------------------------
double assemble_ratio(const double* ul, int lc, double z, double ct, const double* log_itl) {
    const double w_last = std::exp(-ul[lc - 1]);
    const double zeta = z * (1.0 - ct);
    double ratio = w_last;
    double p_prev = 1.0, p_cur = ct;
    for (int l = 0; l + 1 < lc; ++l) {
        const double p = (l == 0) ? 1.0 : p_cur;
        if (l >= 1) {
            const double p_next = ((2 * l + 1) * ct * p_cur - l * p_prev) / (l + 1);
            p_prev = p_cur;
            p_cur = p_next;
        }
        ratio += (2 * l + 1) * std::exp(zeta + log_itl[l]) * p * (std::exp(-ul[l]) - w_last);
    }
    return ratio;
}

// Convenience: diagonal ratio (ct = 1, all P_l = 1, zeta = 0).
double assemble_ratio_diag(const double* ul, int lc, const double* log_itl) {
    const double w_last = std::exp(-ul[lc - 1]);
    double ratio = w_last;
    for (int l = 0; l + 1 < lc; ++l)
        ratio += (2 * l + 1) * std::exp(log_itl[l]) * (std::exp(-ul[l]) - w_last);
    return ratio;
}

// Gather per-channel U values at an off-grid point (r, r') by tensor-product
// Lagrange interpolation on the log-index coordinates.
void gather_offdiag(const ChannelView& v, const LogGrid& g, double r, double rp, double* ul) {
    const Stencil sa = lagrange4(g.index_of(r), g.n);
    const Stencil sb = lagrange4(g.index_of(rp), g.n);
    for (int l = 0; l < v.total(); ++l) {
        const double* m = v.mats[l]->data();
        double acc = 0.0;
        for (int a = 0; a < 4; ++a) {
            const double* row = m + static_cast<size_t>(sa.j0 + a) * g.n;
            acc += sa.w[a] * row_gather(row, sb);
        }
        ul[l] = acc;
    }
}

double s_max_for(double lambda, double tau, double q) {
    return std::min(4.0 * std::sqrt(2.0 * lambda * tau), 1.4 * q);
}

// Harvested tables on the radial grid at one timestep.
struct Harvest {
    std::vector<double> u0, a1, a2;
};

// Assemble the diagonal and fit the quadratic/quartic off-diagonal
// coefficients in s at every grid node.
Harvest harvest_fit(const ChannelView& v, const LogGrid& g, double lambda, double tau,
                    int fit_points, bool throw_on_bad) {
    const int n = g.n;
    const int lc = v.total();
    Harvest h;
    h.u0.resize(n);
    h.a1.assign(n, 0.0);
    h.a2.assign(n, 0.0);
    const double inv_2lt = 1.0 / (2.0 * lambda * tau);
    std::vector<double> ul(lc), itl(lc), itl_off(lc);

    for (int i = 0; i < n; ++i) {
        const double q = g.r[i];
        const double z = q * q * inv_2lt;
        log_itilde(z, lc, itl.data());
        for (int l = 0; l < lc; ++l) ul[l] = (*v.mats[l])[static_cast<size_t>(i) * n + i];
        const double ratio0 = assemble_ratio_diag(ul.data(), lc, itl.data());
        if (!(ratio0 > 0.0) || !std::isfinite(ratio0)) {
            if (throw_on_bad) {
                std::ostringstream os;
                os << "partial-wave assembly produced non-positive diagonal density ratio "
                   << ratio0 << " at r = " << q << ", tau = " << tau << ", channels = " << lc;
                throw NumericalError(os.str());
            }
            h.u0[i] = HUGE_VAL;
            continue;
        }
        h.u0[i] = -std::log(ratio0);

        // Off-diagonal samples: collinear (theta = 0) and transverse
        // (r = r' = q) geometries, s up to the displacement cutoff.
        const double sm = s_max_for(lambda, tau, q);
        if (!(sm > 0.0) || fit_points < 1) continue;
        double s22 = 0, s23 = 0, s24 = 0, b1 = 0, b2 = 0;
        int npts = 0;
        const double sm2 = sm * sm;
        for (int j = 1; j <= fit_points; ++j) {
            const double s = sm * j / fit_points;
            const double shat2 = (s * s) / sm2; // conditioning: s^2 in units of sm^2
            const double wgt = std::exp(-s * s * 0.25 / (lambda * tau));
            // collinear
            const double r = q + 0.5 * s, rp = q - 0.5 * s;
            if (rp >= g.r.front() && r <= g.r.back()) {
                gather_offdiag(v, g, r, rp, ul.data());
                const double zr = r * rp * inv_2lt;
                log_itilde(zr, lc, itl_off.data());
                const double ratio = assemble_ratio_diag(ul.data(), lc, itl_off.data());
                if (ratio > 0.0 && std::isfinite(ratio)) {
                    const double y = -std::log(ratio) - h.u0[i];
                    s22 += wgt * shat2 * shat2;
                    s23 += wgt * shat2 * shat2 * shat2;
                    s24 += wgt * shat2 * shat2 * shat2 * shat2;
                    b1 += wgt * shat2 * y;
                    b2 += wgt * shat2 * shat2 * y;
                    ++npts;
                }
            }
            // transverse
            const double ct = 1.0 - 0.5 * s * s / (q * q);
            if (ct >= -1.0) {
                for (int l = 0; l < lc; ++l) ul[l] = (*v.mats[l])[static_cast<size_t>(i) * n + i];
                const double ratio = assemble_ratio(ul.data(), lc, z, ct, itl.data());
                if (ratio > 0.0 && std::isfinite(ratio)) {
                    const double y = -std::log(ratio) - h.u0[i];
                    s22 += wgt * shat2 * shat2;
                    s23 += wgt * shat2 * shat2 * shat2;
                    s24 += wgt * shat2 * shat2 * shat2 * shat2;
                    b1 += wgt * shat2 * y;
                    b2 += wgt * shat2 * shat2 * y;
                    ++npts;
                }
            }
        }
        const double det = s22 * s24 - s23 * s23;
        if (npts >= 3 && std::abs(det) > 1e-14 * s22 * s24) {
            const double a1hat = (s24 * b1 - s23 * b2) / det;
            const double a2hat = (s22 * b2 - s23 * b1) / det;
            h.a1[i] = a1hat / sm2;
            h.a2[i] = a2hat / (sm2 * sm2);
        }
    }
    return h;
}

// Diagonal-only assembly (for the level tables and the tail metric).
std::vector<double> assemble_diag_all(const ChannelView& v, const LogGrid& g, double lambda,
                                      double tau, int lc_use) {
    const int n = g.n;
    std::vector<double> out(n), ul(lc_use), itl(lc_use);
    const double inv_2lt = 1.0 / (2.0 * lambda * tau);
    for (int i = 0; i < n; ++i) {
        const double z = g.r[i] * g.r[i] * inv_2lt;
        log_itilde(z, lc_use, itl.data());
        for (int l = 0; l < lc_use; ++l) ul[l] = (*v.mats[l])[static_cast<size_t>(i) * n + i];
        out[i] = assemble_ratio_diag(ul.data(), lc_use, itl.data());
    }
    return out;
}

// Largest relative change of the assembled diagonal when going from
// lc-1 to lc channels.
double tail_increment(const ChannelView& v, const LogGrid& g, double lambda, double tau,
                      int lc) {
    if (lc < 2) return HUGE_VAL;
    const auto full = assemble_diag_all(v, g, lambda, tau, lc);
    const auto prev = assemble_diag_all(v, g, lambda, tau, lc - 1);
    double metric = 0.0;
    for (int i = 0; i < g.n; ++i) {
        if (!(full[i] > 0.0) || !(prev[i] > 0.0)) return HUGE_VAL;
        metric = std::max(metric, std::abs(full[i] / prev[i] - 1.0));
    }
    return metric;
}

} // namespace

// ---------------------------------------------------------------------------
// Table construction.
// ---------------------------------------------------------------------------
PairActionTable build_pair_table(const PairTableSpec& spec) {
    if (spec.grid_n < 16) throw ConfigError("pair table grid_n must be at least 16");
    if (!(spec.r_min > 0.0) || !(spec.r_max > spec.r_min))
        throw ConfigError("pair table needs 0 < r_min < r_max");
    if (!(spec.tau > 0.0)) throw ConfigError("pair table tau must be positive");
    if (!(spec.mu > 0.0)) throw ConfigError("pair table reduced mass must be positive");
    if (spec.squarings < 1 || spec.squarings > 40)
        throw ConfigError("pair table squarings must be in [1, 40]");
    if (spec.l_max_cap < 2) throw ConfigError("pair table partial-wave cap must be >= 2");
    if (spec.level_diagonals < 0 || spec.level_diagonals > 16)
        throw ConfigError("pair table level_diagonals must be in [0, 16]");
    if (!(spec.dudtau_delta > 0.0) || spec.dudtau_delta >= 0.5)
        throw ConfigError("pair table dudtau_delta must be in (0, 0.5)");

    PairActionTable t;
    t.q1q2_ = spec.q1q2;
    t.mu_ = spec.mu;
    t.tau_ = spec.tau;
    t.lambda_ = 0.5 / spec.mu;
    t.r_min_ = spec.r_min;
    t.r_max_ = spec.r_max;
    t.squarings_ = spec.squarings;

    if (spec.q1q2 == 0.0 && !spec.force_build_null) {
        t.null_ = true;
        return t;
    }
    t.null_ = false;

    const LogGrid grid = make_grid(spec.grid_n, spec.r_min, spec.r_max);
    const double lambda = t.lambda_;
    const double tau = spec.tau;
    const int k = spec.squarings;

    // Middle ladder with adaptive channel count: extend in blocks until the
    // assembled diagonal stops moving or the cap is reached.
    std::vector<ChannelBlock> blocks;
    blocks.push_back(build_block(0, std::min(spec.l_max_cap, 12), grid, spec.q1q2, lambda, tau,
                                 k, spec.threads));
    ChannelView view;
    view.add(blocks.back());
    double metric = HUGE_VAL;
    for (;;) {
        const int lc = view.total();
        if (lc >= 4) {
            const double m1 = tail_increment(view, grid, lambda, tau, lc);
            const double m2 = tail_increment(view, grid, lambda, tau, lc - 1);
            metric = std::max(m1, m2);
            if (metric <= spec.tail_target) break;
        }
        if (lc >= spec.l_max_cap) break;
        const int add = std::min(8, spec.l_max_cap - lc);
        blocks.push_back(
            build_block(lc, add, grid, spec.q1q2, lambda, tau, k, spec.threads));
        view.add(blocks.back());
    }
    const int lc = view.total();
    t.l_used_ = lc;
    t.tail_metric_ = metric;

    // Harvest the target-timestep tables (diagonal + off-diagonal fit).
    const Harvest mid = harvest_fit(view, grid, lambda, tau, spec.fit_points, true);

    // Level diagonals at tau * 2^j from continued squaring of the same ladder.
    std::vector<std::vector<double>> levels;
    for (int j = 1; j <= spec.level_diagonals; ++j) {
        for (auto& b : blocks) square_once(b, grid, lambda, spec.q1q2, spec.threads);
        ChannelView vj;
        for (auto& b : blocks) vj.add(b);
        const auto ratios = assemble_diag_all(vj, grid, lambda, std::ldexp(tau, j), lc);
        std::vector<double> uj(grid.n);
        for (int i = 0; i < grid.n; ++i) {
            if (!(ratios[i] > 0.0) || !std::isfinite(ratios[i])) {
                if (std::getenv("COULPIMC_DEBUG_LEVELS")) {
                    std::fprintf(stderr, "DBG level=%d i=%d r=%.6g ratio=%.6g\n", j, i,
                                 grid.r[i], ratios[i]);
                    for (int l = 0; l < lc; ++l)
                        std::fprintf(stderr, "  l=%d U=%.6g\n", l,
                                     (*vj.mats[l])[static_cast<size_t>(i) * grid.n + i]);
                }
                std::ostringstream os;
                os << "level-diagonal assembly produced non-positive ratio at r = " << grid.r[i]
                   << ", level " << j;
                throw NumericalError(os.str());
            }
            uj[i] = -std::log(ratios[i]);
        }
        levels.push_back(std::move(uj));
    }
    blocks.clear(); // free the big matrices before the +/- ladders

    // Centered tau-derivative from two more ladders at tau (1 +/- delta).
    const double dt = spec.dudtau_delta * tau;
    Harvest lo, hi;
    for (int side = 0; side < 2; ++side) {
        const double tau_s = side == 0 ? tau - dt : tau + dt;
        ChannelBlock b = build_block(0, lc, grid, spec.q1q2, lambda, tau_s, k, spec.threads);
        ChannelView vs;
        vs.add(b);
        Harvest hh = harvest_fit(vs, grid, lambda, tau_s, spec.fit_points, true);
        if (side == 0)
            lo = std::move(hh);
        else
            hi = std::move(hh);
    }
    std::vector<double> du0(grid.n), da1(grid.n), da2(grid.n);
    for (int i = 0; i < grid.n; ++i) {
        du0[i] = (hi.u0[i] - lo.u0[i]) / (2.0 * dt);
        da1[i] = (hi.a1[i] - lo.a1[i]) / (2.0 * dt);
        da2[i] = (hi.a2[i] - lo.a2[i]) / (2.0 * dt);
    }

    t.grid_ = grid.r;
    t.u0_ = CubicSpline(grid.r, mid.u0);
    t.a1_ = CubicSpline(grid.r, mid.a1);
    t.a2_ = CubicSpline(grid.r, mid.a2);
    t.du0_ = CubicSpline(grid.r, du0);
    t.da1_ = CubicSpline(grid.r, da1);
    t.da2_ = CubicSpline(grid.r, da2);
    t.level_u0_.clear();
    for (auto& uj : levels) t.level_u0_.emplace_back(grid.r, uj);
    return t;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------
double PairActionTable::s_max(double q) const { return s_max_for(lambda_, tau_, q); }

double PairActionTable::eval(double r, double r_next, double s) const {
    if (null_) return 0.0;
    const double q = 0.5 * (r + r_next);
    if (q > r_max_) {
        clamp_count_.fetch_add(1, std::memory_order_relaxed);
        return primitive_pair_action(r, r_next, q1q2_, tau_);
    }
    double qc = q;
    if (q < r_min_) {
        clamp_count_.fetch_add(1, std::memory_order_relaxed);
        qc = r_min_;
    }
    const double ss = std::min(s, s_max(qc));
    const double s2 = ss * ss;
    return u0_.eval(qc) + (a1_.eval(qc) + a2_.eval(qc) * s2) * s2;
}

double PairActionTable::eval(double r, double r_next) const {
    return eval(r, r_next, std::abs(r - r_next));
}

double PairActionTable::tau_derivative(double r, double r_next, double s) const {
    if (null_) return 0.0;
    const double q = 0.5 * (r + r_next);
    if (q > r_max_) {
        clamp_count_.fetch_add(1, std::memory_order_relaxed);
        return 0.5 * q1q2_ * (1.0 / r + 1.0 / r_next);
    }
    double qc = q;
    if (q < r_min_) {
        clamp_count_.fetch_add(1, std::memory_order_relaxed);
        qc = r_min_;
    }
    const double ss = std::min(s, s_max(qc));
    const double s2 = ss * ss;
    return du0_.eval(qc) + (da1_.eval(qc) + da2_.eval(qc) * s2) * s2;
}

double PairActionTable::tau_derivative(double r, double r_next) const {
    return tau_derivative(r, r_next, std::abs(r - r_next));
}

PairActionTable::Gradients PairActionTable::gradients(double r, double r_next, double s) const {
    Gradients g;
    if (null_) return g;
    const double q = 0.5 * (r + r_next);
    if (q > r_max_) {
        clamp_count_.fetch_add(1, std::memory_order_relaxed);
        g.du_dr = -0.5 * tau_ * q1q2_ / (r * r);
        g.du_drp = -0.5 * tau_ * q1q2_ / (r_next * r_next);
        return g;
    }
    if (q < r_min_) {
        clamp_count_.fetch_add(1, std::memory_order_relaxed);
        return g; // flat in the clamped corner
    }
    const double sm = s_max(q);
    const double ss = std::min(s, sm);
    const double s2 = ss * ss;
    const double du_dq = u0_.deriv(q) + (a1_.deriv(q) + a2_.deriv(q) * s2) * s2;
    g.du_dr = 0.5 * du_dq;
    g.du_drp = 0.5 * du_dq;
    g.du_ds = (s < sm) ? (2.0 * a1_.eval(q) + 4.0 * a2_.eval(q) * s2) : 0.0;
    return g;
}

double PairActionTable::level_diag(int level, double r) const {
    if (level < 1 || level > level_count())
        throw ConfigError("level_diag: level " + std::to_string(level) +
                          " outside [1, " + std::to_string(level_count()) + "]");
    if (null_) return 0.0;
    if (r > r_max_) {
        clamp_count_.fetch_add(1, std::memory_order_relaxed);
        return std::ldexp(tau_, level) * q1q2_ / r;
    }
    return level_u0_[level - 1].eval(std::max(r, r_min_));
}

std::string PairActionTable::cache_stem(const PairTableSpec& spec) {
    Fnv1a64 h;
    h.update_double(spec.q1q2);
    h.update_double(spec.mu);
    h.update_double(spec.tau);
    h.update_u64(static_cast<uint64_t>(spec.grid_n));
    h.update_double(spec.r_min);
    h.update_double(spec.r_max);
    h.update_u64(static_cast<uint64_t>(spec.squarings));
    h.update_u64(static_cast<uint64_t>(spec.l_max_cap));
    h.update_double(spec.tail_target);
    h.update_u64(static_cast<uint64_t>(spec.level_diagonals));
    h.update_double(spec.dudtau_delta);
    h.update_u64(static_cast<uint64_t>(spec.fit_points));
    h.update_u64(spec.force_build_null ? 1u : 0u);
    char buf[32];
    std::snprintf(buf, sizeof buf, "pair_%016llx",
                  static_cast<unsigned long long>(h.digest()));
    return buf;
}

// ---------------------------------------------------------------------------
// Diagonal validation ladder.
// ---------------------------------------------------------------------------
DiagonalCheck build_pair_diagonal(double q1q2, double mu, double beta, int grid_n, double r_min,
                                  double r_max, int l_count, int squarings, int threads) {
    if (grid_n < 16 || l_count < 2 || squarings < 1)
        throw ConfigError("diagonal check: bad grid/l_count/squarings");
    const LogGrid grid = make_grid(grid_n, r_min, r_max);
    const double lambda = 0.5 / mu;
    ChannelBlock b;
    b.l_lo = 0;
    b.l_count = l_count;
    seed_primitive(b, grid, q1q2, std::ldexp(beta, -squarings));
    const bool dbg = std::getenv("COULPIMC_DEBUG_DIAG") != nullptr;
    for (int s = 0; s < squarings; ++s) {
        square_once(b, grid, lambda, q1q2, threads);
        if (dbg) {
            for (int l : {0, l_count - 1}) {
                double mn = HUGE_VAL, mx = -HUGE_VAL;
                int mi = 0, mk = 0;
                for (int i = 0; i < grid.n; ++i)
                    for (int k = 0; k < grid.n; ++k) {
                        const double u = b.U[l][static_cast<size_t>(i) * grid.n + k];
                        if (u < mn) { mn = u; mi = i; mk = k; }
                        if (u > mx) mx = u;
                    }
                std::fprintf(stderr,
                             "rung %2d tau=%-10.5g l=%2d  minU=%-12.5g at (%.4g, %.4g)  maxU=%.5g\n",
                             s, b.tau, l, mn, grid.r[mi], grid.r[mk], mx);
            }
        }
    }
    ChannelView v;
    v.add(b);
    DiagonalCheck out;
    out.r = grid.r;
    out.ratio = assemble_diag_all(v, grid, lambda, beta, l_count);
    out.l_used = l_count;
    return out;
}

} // namespace coulpimc

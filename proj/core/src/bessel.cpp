#include "coulpimc/bessel.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace coulpimc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kTiny = 1e-300;

// Small-z series: i_l(z) ~ z^l / (2l+1)!! * (1 + z^2/(2(2l+3)) + ...),
// so log itilde_l = l ln z - ln (2l+1)!! - z + log1p(z^2/(2(2l+3))).
void series_branch(double z, int count, double* out) {
    if (z <= 0.0) {
        out[0] = 0.0;
        for (int l = 1; l < count; ++l) out[l] = kNegInf;
        return;
    }
    const double lnz = std::log(z);
    double ln_dfact = 0.0; // ln (2l+1)!!
    for (int l = 0; l < count; ++l) {
        if (l > 0) ln_dfact += std::log(2.0 * l + 1.0);
        out[l] = l * lnz - ln_dfact - z + std::log1p(z * z / (2.0 * (2.0 * l + 3.0)));
    }
}

// Downward continued fraction (Miller-style) for the ratios
// r_l = i_{l+1}(z)/i_l(z), seeded well above the needed order, then
// log itilde_l accumulated from the exact l=0 value.
void downward_branch(double z, int count, double* out) {
    const int depth = count + 40 + static_cast<int>(3.0 * std::sqrt(z));
    std::vector<double> ratio(static_cast<size_t>(count), 0.0);
    double cur = 0.0;
    for (int l = depth - 2; l >= 0; --l) {
        cur = 1.0 / ((2.0 * l + 3.0) / z + cur);
        if (l < count) ratio[static_cast<size_t>(l)] = cur;
    }
    double acc = std::log1p(-std::exp(-2.0 * z)) - std::log(2.0 * z);
    out[0] = acc;
    for (int l = 1; l < count; ++l) {
        acc += std::log(std::max(ratio[static_cast<size_t>(l - 1)], kTiny));
        out[l] = acc;
    }
}

// Upward recurrence itilde_{l+1} = itilde_{l-1} - (2l+1)/z * itilde_l,
// stable only when z dominates l(l+1) (precision loss ~ e^{l(l+1)/z}).
void upward_branch(double z, int count, double* out) {
    const double e2 = std::exp(-2.0 * z);
    double prev = (1.0 - e2) / (2.0 * z);
    out[0] = std::log(prev);
    if (count == 1) return;
    double cur = ((z - 1.0) + (z + 1.0) * e2) / (2.0 * z * z);
    out[1] = std::log(std::max(cur, kTiny));
    for (int l = 1; l + 1 < count; ++l) {
        const double nxt = std::max(prev - (2.0 * l + 1.0) / z * cur, kTiny);
        out[l + 1] = std::log(nxt);
        prev = cur;
        cur = nxt;
    }
}

} // namespace

void log_itilde(double z, int count, double* out) {
    if (count <= 0) return;
    if (z < 1e-6) {
        series_branch(z, count, out);
        return;
    }
    const double z_up = std::max(30.0, 0.5 * count * (count + 1.0));
    if (z <= z_up) {
        downward_branch(z, count, out);
    } else {
        upward_branch(z, count, out);
    }
}

} // namespace coulpimc

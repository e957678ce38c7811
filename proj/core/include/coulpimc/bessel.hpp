#pragma once

#include <vector>

namespace coulpimc {

// Logarithm of the scaled modified spherical Bessel function
// itilde_l(z) = exp(-z) * i_l(z), for l = 0 .. count-1, written to out.
//
// itilde_l appears in the partial-wave expansion of the free-particle
// kernel, exp(-z(1-cos(theta))) = sum_l (2l+1) itilde_l(z) P_l(cos(theta)),
// so itilde_l in (0, 1] for z >= 0 and the log form stays finite over the
// full dynamic range needed by radial kernel convolution (z up to ~1e10).
//
// Accuracy: better than 1e-11 absolute in the log for z in [0, 1e10],
// l < 64 (three branches: small-z series, downward continued fraction,
// upward recurrence where it is stable).
void log_itilde(double z, int count, double* out);

inline std::vector<double> log_itilde(double z, int count) {
    std::vector<double> out(static_cast<size_t>(count));
    log_itilde(z, count, out.data());
    return out;
}

} // namespace coulpimc

#include <algorithm>
#include <cmath>
#include <vector>

#include "coulpimc/estimators.hpp"

namespace coulpimc {

namespace {

double series_mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return x.empty() ? 0.0 : s / x.size();
}

// Standard error of the mean at one blocking level: sqrt(c0 / (n - 1)).
double level_sem(const std::vector<double>& x) {
    const size_t n = x.size();
    if (n < 2) return 0.0;
    const double m = series_mean(x);
    double c0 = 0.0;
    for (double v : x) c0 += (v - m) * (v - m);
    c0 /= n;
    return std::sqrt(c0 / (n - 1));
}

} // namespace

BlockingResult blocking_sem(const std::vector<double>& series) {
    BlockingResult r;
    r.mean = series_mean(series);
    if (series.size() < 2) return r;

    std::vector<double> sems;
    std::vector<double> x = series;
    while (x.size() >= 32) {
        sems.push_back(level_sem(x));
        std::vector<double> next(x.size() / 2);
        for (size_t i = 0; i < next.size(); ++i) next[i] = 0.5 * (x[2 * i] + x[2 * i + 1]);
        x = std::move(next);
    }
    if (sems.empty()) {
        // Too little data for any blocking: plain SEM, flagged unconverged.
        r.sem = level_sem(series);
        r.levels = 0;
        r.converged = false;
        return r;
    }

    // Plateau: relative change below 5% across two consecutive level steps.
    for (size_t k = 0; k + 2 < sems.size(); ++k) {
        const double a = sems[k], b = sems[k + 1], c = sems[k + 2];
        if (a <= 0.0) continue;
        if (std::abs(b - a) <= 0.05 * a && std::abs(c - b) <= 0.05 * std::max(b, 1e-300)) {
            r.sem = std::max({a, b, c});
            r.levels = static_cast<int>(k);
            r.converged = true;
            return r;
        }
    }
    r.sem = sems.back();
    r.levels = static_cast<int>(sems.size()) - 1;
    r.converged = sems.size() == 1; // a single level that never grew: iid-like
    if (sems.size() >= 2) {
        const double a = sems[sems.size() - 2], b = sems.back();
        if (a > 0.0 && std::abs(b - a) <= 0.05 * a) {
            r.converged = true;
            r.sem = std::max(a, b);
        }
    }
    return r;
}

double jackknife_sem(const std::vector<double>& delete_one, double full_value) {
    const size_t b = delete_one.size();
    if (b < 2) return 0.0;
    double acc = 0.0;
    const double mean = series_mean(delete_one);
    for (double v : delete_one) acc += (v - mean) * (v - mean);
    (void)full_value; // the delete-one spread around its own mean is used
    return std::sqrt((double(b) - 1.0) / double(b) * acc);
}

namespace {

// Shell density at the fine-histogram bin centers and the weighted linear
// fit extrapolated to r = 0 over centers in (0, r_fit].
double contact_fit(const Histogram& h, double r_fit, uint64_t* counts_used) {
    double s_w = 0, s_wr = 0, s_wrr = 0, s_wy = 0, s_wry = 0;
    uint64_t used = 0;
    if (h.total == 0) return 0.0;
    const double dr = h.bin_width();
    for (size_t b = 0; b < h.counts.size(); ++b) {
        const double rc = h.bin_center(b);
        if (rc > r_fit) break;
        const double shell = 4.0 * M_PI * rc * rc * dr * double(h.total);
        const double y = double(h.counts[b]) / shell;
        // Poisson variance: var(y) = counts / shell^2; zero-count bins get
        // a one-count variance floor so they still inform the fit.
        const double var = std::max<double>(double(h.counts[b]), 1.0) / (shell * shell);
        const double w = 1.0 / var;
        s_w += w;
        s_wr += w * rc;
        s_wrr += w * rc * rc;
        s_wy += w * y;
        s_wry += w * rc * y;
        used += h.counts[b];
    }
    if (counts_used) *counts_used = used;
    const double det = s_w * s_wrr - s_wr * s_wr;
    if (!(std::abs(det) > 0.0)) return 0.0;
    return (s_wrr * s_wy - s_wr * s_wry) / det; // intercept
}

Histogram sum_blocks(const std::vector<Histogram>& blocks) {
    Histogram total = blocks.front();
    for (size_t i = 1; i < blocks.size(); ++i) total.merge(blocks[i]);
    return total;
}

} // namespace

ContactResult contact_density(const std::vector<Histogram>& per_block, double r_fit) {
    ContactResult out;
    out.r_fit = r_fit;
    if (per_block.empty()) return out;
    const Histogram total = sum_blocks(per_block);
    if (total.counts.empty() || total.total == 0) return out;

    out.value = contact_fit(total, r_fit, &out.counts_used);
    out.enough_counts = out.counts_used >= 10000;

    // Window sensitivity: refit at half and twice the window (clamped to the
    // histogram range); half the spread is the systematic estimate.
    const double hi_window = std::min(2.0 * r_fit, total.hi);
    const double v_lo = contact_fit(total, 0.5 * r_fit, nullptr);
    const double v_hi = contact_fit(total, hi_window, nullptr);
    out.sys_halfspread =
        0.5 * (std::max({out.value, v_lo, v_hi}) - std::min({out.value, v_lo, v_hi}));

    // Jackknife across blocks.
    if (per_block.size() >= 2) {
        std::vector<double> del;
        del.reserve(per_block.size());
        for (size_t i = 0; i < per_block.size(); ++i) {
            Histogram rest = total;
            // Subtract block i.
            const Histogram& b = per_block[i];
            for (size_t j = 0; j < rest.counts.size(); ++j) rest.counts[j] -= b.counts[j];
            rest.overflow -= b.overflow;
            rest.total -= b.total;
            del.push_back(contact_fit(rest, r_fit, nullptr));
        }
        out.stat_sem = jackknife_sem(del, out.value);
    }
    return out;
}

namespace {

struct BondScalars {
    double mean = 0.0, fwhm = 0.0;
    bool multimodal = false;
};

BondScalars bond_scalars(const Histogram& h) {
    BondScalars out;
    if (h.counts.empty() || h.total == h.overflow) return out;

    double s = 0.0, sr = 0.0;
    for (size_t b = 0; b < h.counts.size(); ++b) {
        s += double(h.counts[b]);
        sr += double(h.counts[b]) * h.bin_center(b);
    }
    if (s <= 0.0) return out;
    out.mean = sr / s;

    // 3-bin smoothed shape for peak work.
    const size_t n = h.counts.size();
    std::vector<double> sm(n, 0.0);
    for (size_t b = 0; b < n; ++b) {
        double acc = double(h.counts[b]);
        double cnt = 1.0;
        if (b > 0) {
            acc += double(h.counts[b - 1]);
            cnt += 1.0;
        }
        if (b + 1 < n) {
            acc += double(h.counts[b + 1]);
            cnt += 1.0;
        }
        sm[b] = acc / cnt;
    }
    size_t peak = 0;
    for (size_t b = 1; b < n; ++b)
        if (sm[b] > sm[peak]) peak = b;
    const double half = 0.5 * sm[peak];
    if (half <= 0.0) return out;

    // Half-max crossings with linear interpolation.
    double left = h.bin_center(0);
    for (size_t b = peak; b-- > 0;) {
        if (sm[b] < half) {
            const double f = (half - sm[b]) / (sm[b + 1] - sm[b]);
            left = h.bin_center(b) + f * h.bin_width();
            break;
        }
        if (b == 0) left = h.bin_center(0);
    }
    double right = h.bin_center(n - 1);
    for (size_t b = peak + 1; b < n; ++b) {
        if (sm[b] < half) {
            const double f = (sm[b - 1] - half) / (sm[b - 1] - sm[b]);
            right = h.bin_center(b - 1) + f * h.bin_width();
            break;
        }
    }
    out.fwhm = right - left;

    // Multimodality: distinct local maxima above half max, separated by a
    // dip below 75% of the peak.
    int peaks = 0;
    bool dipped = true;
    for (size_t b = 1; b + 1 < n; ++b) {
        if (sm[b] >= sm[b - 1] && sm[b] >= sm[b + 1] && sm[b] >= half) {
            if (dipped) {
                ++peaks;
                dipped = false;
            }
        } else if (sm[b] < 0.75 * sm[peak]) {
            dipped = true;
        }
    }
    out.multimodal = peaks > 1;
    return out;
}

} // namespace

BondResult bond_stats(const std::vector<Histogram>& per_block) {
    BondResult out;
    if (per_block.empty()) return out;
    const Histogram total = sum_blocks(per_block);
    const BondScalars full = bond_scalars(total);
    out.mean = full.mean;
    out.fwhm = full.fwhm;
    out.multimodal = full.multimodal;

    if (per_block.size() >= 2) {
        std::vector<double> del_mean, del_fwhm;
        for (size_t i = 0; i < per_block.size(); ++i) {
            Histogram rest = total;
            const Histogram& b = per_block[i];
            for (size_t j = 0; j < rest.counts.size(); ++j) rest.counts[j] -= b.counts[j];
            rest.overflow -= b.overflow;
            rest.total -= b.total;
            const BondScalars sc = bond_scalars(rest);
            del_mean.push_back(sc.mean);
            del_fwhm.push_back(sc.fwhm);
        }
        out.mean_sem = jackknife_sem(del_mean, full.mean);
        out.fwhm_sem = jackknife_sem(del_fwhm, full.fwhm);
    }
    return out;
}

FragmentFractions fragment_fractions(
    const std::vector<std::array<uint64_t, kFragmentKinds>>& per_block) {
    FragmentFractions out;
    std::array<uint64_t, kFragmentKinds> total{};
    uint64_t grand = 0;
    for (const auto& b : per_block)
        for (int k = 0; k < kFragmentKinds; ++k) {
            total[static_cast<size_t>(k)] += b[static_cast<size_t>(k)];
            grand += b[static_cast<size_t>(k)];
        }
    out.total = grand;
    if (grand == 0) return out;
    for (int k = 0; k < kFragmentKinds; ++k)
        out.fraction[static_cast<size_t>(k)] = double(total[static_cast<size_t>(k)]) / double(grand);

    if (per_block.size() >= 2) {
        for (int k = 0; k < kFragmentKinds; ++k) {
            std::vector<double> del;
            for (const auto& b : per_block) {
                uint64_t blk_total = 0;
                for (uint64_t v : b) blk_total += v;
                const uint64_t rest_k = total[static_cast<size_t>(k)] - b[static_cast<size_t>(k)];
                const uint64_t rest_n = grand - blk_total;
                del.push_back(rest_n ? double(rest_k) / double(rest_n) : 0.0);
            }
            out.sem[static_cast<size_t>(k)] =
                jackknife_sem(del, out.fraction[static_cast<size_t>(k)]);
        }
    }
    return out;
}

} // namespace coulpimc

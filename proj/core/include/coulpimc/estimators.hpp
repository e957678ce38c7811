#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "coulpimc/link_action.hpp"
#include "coulpimc/paths.hpp"
#include "coulpimc/system.hpp"

namespace coulpimc {

// ---------------------------------------------------------------------------
// Per-measurement energy estimators.
// ---------------------------------------------------------------------------
struct EnergySample {
    double thermodynamic = 0.0; // kinetic from link springs + dU/dtau
    double virial = 0.0;        // centroid-virial kinetic + dU/dtau
    // Components, for diagnostics and tests:
    double spring = 0.0;        // (1/M) sum |delta|^2 / (4 lambda tau^2)
    double dudtau = 0.0;        // (1/M) sum dU_m/dtau
    double virial_grad = 0.0;   // (1/(2 M tau)) sum (x - xbar) . grad U
    double classical_ideal = 0.0;
};

// Evaluates both energy estimators on the current configuration. Quantum
// particles contribute through the link terms; classical particles add the
// analytic (3/2) k_B T each; fixed particles add nothing kinetic. The
// interaction enters through dU/dtau (and the gradient term for the
// virial form), so all particles' potential energy is counted once.
EnergySample measure_energy(const PathConfiguration& path, const LinkAction& action);

// ---------------------------------------------------------------------------
// Distance histograms.
// ---------------------------------------------------------------------------
struct Histogram {
    double lo = 0.0, hi = 1.0;
    std::vector<uint64_t> counts;
    uint64_t overflow = 0;
    uint64_t total = 0; // all add() calls, overflow included

    Histogram() = default;
    Histogram(double lo_, double hi_, int bins) : lo(lo_), hi(hi_), counts(bins, 0) {}

    void add(double x) {
        ++total;
        if (x >= hi || x < lo) {
            ++overflow;
            return;
        }
        const auto b = static_cast<size_t>((x - lo) / (hi - lo) * counts.size());
        ++counts[b < counts.size() ? b : counts.size() - 1];
    }
    void merge(const Histogram& o);
    double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / counts.size(); }
    double bin_center(size_t b) const { return lo + (b + 0.5) * bin_width(); }
};

// ---------------------------------------------------------------------------
// Fragment classification (single-linkage on slice-averaged nucleus
// centroids; electrons assigned to the nearest cluster).
// ---------------------------------------------------------------------------
enum class Fragment : int {
    H3Plus = 0,   // all three nuclei in one cluster
    H2_HPlus = 1, // (2,1) split, both electrons with the pair
    H2Plus_H = 2, // (2,1) split, one electron each
    TwoH_HPlus = 3,
    Other = 4
};
constexpr int kFragmentKinds = 5;
const char* fragment_label(Fragment f);

// Returns the fragment class of the current configuration (Other unless the
// system has exactly three positive nuclei and two electrons).
Fragment fragment_classify(const PathConfiguration& path, const SystemSpec& spec,
                           double cutoff);

// ---------------------------------------------------------------------------
// One block's worth of accumulated measurements. Merging is associative and
// order-independent in exact arithmetic; the driver merges in a fixed order
// so results are bitwise reproducible.
// ---------------------------------------------------------------------------
class BlockAccumulator {
public:
    BlockAccumulator() = default;
    explicit BlockAccumulator(const SystemSpec& spec, double fragment_cutoff = 6.0);

    void measure(const PathConfiguration& path, const LinkAction& action);
    void merge(const BlockAccumulator& other);

    uint64_t count() const { return n_; }
    double e_th_mean() const { return n_ ? e_th_sum_ / n_ : 0.0; }
    double e_vir_mean() const { return n_ ? e_vir_sum_ / n_ : 0.0; }
    double e_th_sum() const { return e_th_sum_; }
    double e_vir_sum() const { return e_vir_sum_; }

    bool has_kind(PairKind k) const;
    const Histogram& main_hist(PairKind k) const;
    const Histogram& fine_hist(PairKind k) const; // EP and EE only
    const std::array<uint64_t, kFragmentKinds>& fragments() const { return fragments_; }
    bool tracks_fragments() const { return track_fragments_; }

    static constexpr int kMainBins = 512;
    static constexpr double kMainRange = 12.0;
    static constexpr int kFineBins = 256;
    static constexpr double kFineRange = 0.64;

private:
    const SystemSpec* spec_ = nullptr;
    double cutoff_ = 6.0;
    uint64_t n_ = 0;
    double e_th_sum_ = 0.0, e_vir_sum_ = 0.0;
    std::array<Histogram, 4> main_;  // indexed by PairKind
    std::array<Histogram, 4> fine_;  // EP, EE populated
    std::array<bool, 4> present_{};
    std::array<uint64_t, kFragmentKinds> fragments_{};
    bool track_fragments_ = false;
};

// ---------------------------------------------------------------------------
// Error analysis.
// ---------------------------------------------------------------------------
struct BlockingResult {
    double mean = 0.0;
    double sem = 0.0;
    int levels = 0;     // blocking transformations applied to reach the answer
    bool converged = false;
};

// Flyvbjerg-Petersen blocking on a series of (possibly correlated) block
// means: repeatedly pair-averages and reports the standard error at the
// first plateau (relative change < 5% across two consecutive levels), never
// descending below 32 points. converged=false falls back to the deepest
// valid level (error then likely underestimated; callers surface the flag).
BlockingResult blocking_sem(const std::vector<double>& series);

// Delete-one jackknife standard error for a statistic computed from mergeable
// per-block states.
double jackknife_sem(const std::vector<double>& delete_one_values, double full_value);

struct ContactResult {
    double value = 0.0;      // extrapolated pair density at zero separation
    double stat_sem = 0.0;   // jackknife over blocks
    double sys_halfspread = 0.0; // half-spread of refits at r_fit/2 and 2 r_fit
    uint64_t counts_used = 0;
    bool enough_counts = false; // >= 1e4 counts inside the fit window
    double r_fit = 0.0;
};

// Contact (zero-separation) pair density from the fine histograms: bins are
// converted to shell densities counts/(total * 4 pi r^2 dr), a weighted
// linear fit over (0, r_fit] is extrapolated to r = 0, and the fit window is
// varied to bound the systematic error.
ContactResult contact_density(const std::vector<Histogram>& per_block_fine, double r_fit);

struct BondResult {
    double mean = 0.0; // <R> over the histogram support
    double mean_sem = 0.0;
    double fwhm = 0.0; // of the 3-bin-smoothed distribution, interpolated
    double fwhm_sem = 0.0;
    bool multimodal = false; // more than one smoothed peak above half max
};

// Bond-length statistics from per-block nucleus-nucleus histograms.
BondResult bond_stats(const std::vector<Histogram>& per_block_main);

struct FragmentFractions {
    std::array<double, kFragmentKinds> fraction{};
    std::array<double, kFragmentKinds> sem{};
    uint64_t total = 0;
};

FragmentFractions fragment_fractions(
    const std::vector<std::array<uint64_t, kFragmentKinds>>& per_block);

} // namespace coulpimc

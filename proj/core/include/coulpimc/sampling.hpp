#pragma once

#include <cstdint>
#include <vector>

#include "coulpimc/link_action.hpp"
#include "coulpimc/paths.hpp"
#include "coulpimc/rng.hpp"

namespace coulpimc {

struct MoveStats {
    uint64_t bisection_attempts = 0;
    uint64_t bisection_accepts = 0;
    uint64_t displace_attempts = 0;
    uint64_t displace_accepts = 0;

    void merge(const MoveStats& o) {
        bisection_attempts += o.bisection_attempts;
        bisection_accepts += o.bisection_accepts;
        displace_attempts += o.displace_attempts;
        displace_accepts += o.displace_accepts;
    }
    double bisection_rate() const {
        return bisection_attempts ? double(bisection_accepts) / double(bisection_attempts) : 0.0;
    }
    double displace_rate() const {
        return displace_attempts ? double(displace_accepts) / double(displace_attempts) : 0.0;
    }
};

struct MoveSchedule {
    int bisection_level = 0;    // 0 = auto: 2^l ~ M/16, clamped to [2, 8] and <= log2(M)
    double displace_step = 0.5; // initial rigid-translation half-width, a0
    bool tune_displace = true;  // adapt toward ~50% acceptance until frozen
};

// Metropolis acceptance on a log-ratio; throws NumericalError on NaN (a NaN
// action difference means the state or tables are corrupt — never sample
// through it).
bool metropolis_accept(double log_ratio, RngStream& rng);

// Single-walker path sampler: multilevel bisection for quantum particles,
// rigid ring displacement for every mobile particle (the only move that
// shifts classical particles). Deterministic given the stream state.
class Sampler {
public:
    Sampler(const LinkAction& action, const MoveSchedule& schedule, uint64_t master_seed,
            uint32_t walker_id);

    // One sweep: enough bisection segments to cover each quantum ring once
    // on average, plus one displacement trial per mobile particle.
    void sweep(PathConfiguration& path);

    void freeze_tuning() { tuning_ = false; }
    bool tuning() const { return tuning_; }

    const MoveStats& stats() const { return stats_; }
    void reset_stats() { stats_ = MoveStats{}; }

    int bisection_level() const { return level_; }
    double displace_step(int particle) const {
        return steps_[static_cast<size_t>(particle)];
    }
    void set_displace_step(int particle, double s) {
        steps_[static_cast<size_t>(particle)] = s;
    }

    RngStream& rng() { return rng_; }
    const RngStream& rng() const { return rng_; }

private:
    bool bisection_move(PathConfiguration& path, int particle);
    bool displace_move(PathConfiguration& path, int particle);

    const LinkAction* action_;
    const SystemSpec* spec_;
    RngStream rng_;
    MoveStats stats_;
    int level_ = 2;
    int slices_ = 0;
    bool tuning_ = true;
    std::vector<double> steps_;
    std::vector<uint64_t> window_attempts_, window_accepts_;
    std::vector<Vec3> saved_; // scratch for segment restore
};

} // namespace coulpimc

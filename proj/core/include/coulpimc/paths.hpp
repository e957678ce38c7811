#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coulpimc/system.hpp"
#include "coulpimc/vec3.hpp"

namespace coulpimc {

class RngStream;

// Minimum-image displacement: every component shifted by integer multiples
// of the edge into (-L/2, L/2] (half-edge maps to +L/2). Identity for open
// boundaries.
Vec3 minimum_image(Vec3 delta, const BoxSpec& box);

// Closed imaginary-time world lines for every particle: positions[p][m] is
// bead m of particle p, with bead M wrapping to bead 0. Classical particles
// keep all M beads identical; fixed particles never change after init.
class PathConfiguration {
public:
    PathConfiguration() = default;
    PathConfiguration(int n_particles, int slice_count);

    int n_particles() const { return static_cast<int>(positions_.size()); }
    int slice_count() const { return slices_; }

    const Vec3& bead(int particle, int slice) const {
        return positions_[static_cast<size_t>(particle)][static_cast<size_t>(slice)];
    }
    Vec3& bead(int particle, int slice) {
        return positions_[static_cast<size_t>(particle)][static_cast<size_t>(slice)];
    }
    const std::vector<Vec3>& ring(int particle) const {
        return positions_[static_cast<size_t>(particle)];
    }
    std::vector<Vec3>& ring(int particle) {
        return positions_[static_cast<size_t>(particle)];
    }

    int next_slice(int m) const { return m + 1 < slices_ ? m + 1 : 0; }
    int prev_slice(int m) const { return m > 0 ? m - 1 : slices_ - 1; }

    // Raw (unwrapped) link difference R_{m+1} - R_m; kinetic actions use
    // this, never the minimum image.
    Vec3 link_delta(int particle, int slice) const {
        return bead(particle, next_slice(slice)) - bead(particle, slice);
    }

    uint64_t generation() const { return generation_; }
    void bump_generation() { ++generation_; }

    // Fingerprint of all beads of fixed particles, stored at init time so
    // immutability is checkable later.
    void store_fixed_fingerprint(const SystemSpec& spec);
    uint64_t fixed_fingerprint(const SystemSpec& spec) const;
    uint64_t stored_fixed_fingerprint() const { return fixed_fingerprint_; }
    void set_generation(uint64_t g) { generation_ = g; }
    void set_stored_fixed_fingerprint(uint64_t f) { fixed_fingerprint_ = f; }

private:
    std::vector<std::vector<Vec3>> positions_;
    int slices_ = 0;
    uint64_t generation_ = 0;
    uint64_t fixed_fingerprint_ = 0;
};

enum class InitStrategy { Point, ThermalGaussian };

// Builds the initial path configuration. `point` collapses every ring onto
// the particle's configured position; `thermal-gaussian` spreads quantum
// rings around that point with free-particle link variance 2*lambda*tau.
PathConfiguration init_paths(const SystemSpec& spec, uint64_t seed, InitStrategy strategy);

// Minimum-image scalar distance between beads of particles i and j at slice m.
double pair_distance(const PathConfiguration& paths, const SystemSpec& spec,
                     int i, int j, int m);

struct PathDiagnostics {
    bool closure_ok = true;
    bool classical_identity_ok = true;
    bool fixed_immutable_ok = true;
    std::string message;
    bool all_ok() const { return closure_ok && classical_identity_ok && fixed_immutable_ok; }
};

// Report-only consistency checks (shape, classical-bead identity, fixed-bead
// immutability against the stored fingerprint).
PathDiagnostics validate(const PathConfiguration& paths, const SystemSpec& spec);

} // namespace coulpimc

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "coulpimc/pair_action.hpp"
#include "coulpimc/paths.hpp"
#include "coulpimc/system.hpp"
#include "coulpimc/vec3.hpp"

namespace coulpimc {

enum class ActionMode {
    Pair,     // tabulated pair action (exact classical channels inline)
    Primitive // endpoint-averaged tau * V for every channel
};

// Interaction action of imaginary-time links: resolves the system's pair
// list into channels (nothing / exact classical endpoint form / table),
// evaluates per-link actions, the coarse-timestep endpoint actions used by
// multilevel sampling, tau-derivatives, and bead gradients.
//
// Separations r use the minimum image; the relative displacement s of a
// link uses raw (unwrapped) bead differences, consistent with the kinetic
// term.
class LinkAction {
public:
    // `tables` must be aligned with spec.pairs: tables[i] backs pair i when
    // that pair needs one (quantum member, nonzero charge product, Pair
    // mode); other entries may be empty. Throws ConfigError on mismatched
    // table parameters, or when Primitive mode is requested for an
    // attractive pair without `allow_attractive_primitive` (the primitive
    // form is not integrable there and exists for validation only).
    LinkAction(const SystemSpec& spec, ActionMode mode,
               std::vector<std::shared_ptr<const PairActionTable>> tables,
               bool allow_attractive_primitive = false);

    ActionMode mode() const { return mode_; }
    const SystemSpec& system() const { return *spec_; }
    int active_channels() const { return static_cast<int>(channels_.size()); }
    bool has_one_body() const { return one_body_k_ != 0.0; }

    // Interaction action of link `slice` (towards slice+1), all channels.
    double pair_link(const PathConfiguration& path, int slice) const;

    // Same, restricted to channels touching `particle` (plus its one-body
    // term); the rest cancels in single-particle move ratios.
    double pair_link_particle(const PathConfiguration& path, int slice, int particle) const;

    // Sum of pair_link_particle over all links: the full interaction a
    // rigid displacement of `particle` changes.
    double particle_interaction(const PathConfiguration& path, int particle) const;

    // Full-action sum over links a..b-1 restricted to `particle` (the final
    // stage of a multilevel move).
    double segment_full_action(const PathConfiguration& path, int slice_a, int slice_b,
                               int particle) const;

    // Coarse endpoint action for intermediate multilevel stages: for the
    // interior beads t = a+stride, a+2*stride, ... < b, the diagonal pair
    // action at timestep tau * 2^level (stride = 2^level) plus the one-body
    // endpoint term. Exactness of the move does not depend on this form;
    // only efficiency does.
    double segment_level_action(const PathConfiguration& path, int slice_a, int slice_b,
                                int stride, int level, int particle) const;

    // d/dtau of the link interaction (thermodynamic estimator).
    double dudtau_link(const PathConfiguration& path, int slice) const;

    // Accumulates d(link action)/d(bead position) for every bead of link
    // `slice` into grad[particle * M + slice_index].
    void accumulate_gradients(const PathConfiguration& path, int slice,
                              std::vector<Vec3>& grad) const;

    // Endpoint-averaged one-body (harmonic confinement) term of one link.
    double one_body_link(const PathConfiguration& path, int slice, int particle) const;

    // Total table out-of-range events across all channels.
    uint64_t table_clamp_total() const;

private:
    struct Channel {
        int a = 0, b = 0;
        double q1q2 = 0.0;
        bool classical = false; // exact endpoint-averaged form
        const PairActionTable* table = nullptr;
    };

    double channel_link(const Channel& c, const PathConfiguration& path, int slice) const;
    double channel_dudtau(const Channel& c, const PathConfiguration& path, int slice) const;
    double channel_level_diag(const Channel& c, const PathConfiguration& path, int slice,
                              int level) const;

    const SystemSpec* spec_; // owned by the driver; outlives this object
    ActionMode mode_;
    double tau_ = 0.0;
    int slices_ = 0;
    double one_body_k_ = 0.0;
    std::vector<Channel> channels_;
    std::vector<std::vector<int>> by_particle_; // channel indices per particle
    std::vector<std::shared_ptr<const PairActionTable>> owned_;
};

} // namespace coulpimc

#include "coulpimc/paths.hpp"

#include <cmath>
#include <stdexcept>

#include "coulpimc/errors.hpp"
#include "coulpimc/hash.hpp"
#include "coulpimc/rng.hpp"

namespace coulpimc {

Vec3 minimum_image(Vec3 d, const BoxSpec& box) {
    if (!box.periodic) return d;
    const double L = box.edge;
    d.x -= L * std::ceil(d.x / L - 0.5);
    d.y -= L * std::ceil(d.y / L - 0.5);
    d.z -= L * std::ceil(d.z / L - 0.5);
    return d;
}

PathConfiguration::PathConfiguration(int n_particles, int slice_count)
    : positions_(static_cast<size_t>(n_particles),
                 std::vector<Vec3>(static_cast<size_t>(slice_count))),
      slices_(slice_count) {}

void PathConfiguration::store_fixed_fingerprint(const SystemSpec& spec) {
    fixed_fingerprint_ = fixed_fingerprint(spec);
}

uint64_t PathConfiguration::fixed_fingerprint(const SystemSpec& spec) const {
    Fnv1a64 h;
    for (int p = 0; p < n_particles(); ++p) {
        if (spec.particles[static_cast<size_t>(p)].model != ParticleModel::Fixed) continue;
        for (int m = 0; m < slices_; ++m) {
            const Vec3& r = bead(p, m);
            h.update_double(r.x);
            h.update_double(r.y);
            h.update_double(r.z);
        }
    }
    return h.digest();
}

namespace {

// Sequential free-particle bridge closing back onto r0: at step m (of M)
// the conditional law of R_m given R_{m-1} and R_M = r0 is Gaussian with
// mean R_{m-1} + (r0 - R_{m-1})/(M-m+1) and variance 2*lambda*tau*(M-m)/(M-m+1).
void thermal_ring(std::vector<Vec3>& ring, const Vec3& r0, double lambda, double tau,
                  RngStream& rng) {
    const int m_total = static_cast<int>(ring.size());
    ring[0] = r0;
    for (int m = 1; m < m_total; ++m) {
        const int left = m_total - m + 1; // links remaining including this one
        const Vec3& prev = ring[static_cast<size_t>(m - 1)];
        const double frac = 1.0 / left;
        const double var = 2.0 * lambda * tau * (1.0 - frac);
        const double sd = std::sqrt(var);
        ring[static_cast<size_t>(m)] = Vec3{
            prev.x + (r0.x - prev.x) * frac + sd * rng.gaussian(),
            prev.y + (r0.y - prev.y) * frac + sd * rng.gaussian(),
            prev.z + (r0.z - prev.z) * frac + sd * rng.gaussian(),
        };
    }
}

} // namespace

PathConfiguration init_paths(const SystemSpec& spec, uint64_t seed, InitStrategy strategy) {
    const int m_total = spec.discretization.trotter_m;
    PathConfiguration paths(spec.n_particles(), m_total);

    for (int p = 0; p < spec.n_particles(); ++p) {
        const auto& part = spec.particles[static_cast<size_t>(p)];
        const Vec3 base = part.initial.value_or(Vec3{0, 0, 0});
        auto& ring = paths.ring(p);
        if (strategy == InitStrategy::ThermalGaussian &&
            part.model == ParticleModel::Quantum) {
            RngStream rng(seed, static_cast<uint32_t>(p), /*purpose=*/0xF17u);
            thermal_ring(ring, base, part.lambda, spec.discretization.tau, rng);
        } else {
            for (auto& r : ring) r = base;
        }
    }

    // Coincident opposite charges would make the action singular.
    for (const auto& ch : spec.pairs) {
        if (ch.q1q2 >= 0.0) continue;
        for (int m = 0; m < m_total; ++m) {
            if (pair_distance(paths, spec, ch.i, ch.j, m) <= 0.0)
                throw ConfigError("init_paths: particles '" +
                                  spec.particles[static_cast<size_t>(ch.i)].label + "' and '" +
                                  spec.particles[static_cast<size_t>(ch.j)].label +
                                  "' coincide; attractive action is singular");
        }
    }

    paths.store_fixed_fingerprint(spec);
    return paths;
}

double pair_distance(const PathConfiguration& paths, const SystemSpec& spec,
                     int i, int j, int m) {
    if (i == j) throw std::invalid_argument("pair_distance: i == j");
    return norm(minimum_image(paths.bead(i, m) - paths.bead(j, m), spec.box));
}

PathDiagnostics validate(const PathConfiguration& paths, const SystemSpec& spec) {
    PathDiagnostics d;
    if (paths.n_particles() != spec.n_particles() ||
        paths.slice_count() != spec.discretization.trotter_m) {
        d.closure_ok = false;
        d.message += "storage shape does not match the system spec; ";
    }
    for (int p = 0; p < paths.n_particles() && d.classical_identity_ok; ++p) {
        if (spec.particles[static_cast<size_t>(p)].model != ParticleModel::Classical) continue;
        const Vec3& r0 = paths.bead(p, 0);
        for (int m = 1; m < paths.slice_count(); ++m) {
            if (!(paths.bead(p, m) == r0)) {
                d.classical_identity_ok = false;
                d.message += "classical particle " + std::to_string(p) +
                             " has non-identical beads; ";
                break;
            }
        }
    }
    if (paths.fixed_fingerprint(spec) != paths.stored_fixed_fingerprint()) {
        d.fixed_immutable_ok = false;
        d.message += "fixed-particle beads changed since init; ";
    }
    return d;
}

} // namespace coulpimc

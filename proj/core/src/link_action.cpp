#include "coulpimc/link_action.hpp"

#include <cmath>
#include <sstream>

#include "coulpimc/errors.hpp"

namespace coulpimc {

LinkAction::LinkAction(const SystemSpec& spec, ActionMode mode,
                       std::vector<std::shared_ptr<const PairActionTable>> tables,
                       bool allow_attractive_primitive)
    : spec_(&spec), mode_(mode), tau_(spec.discretization.tau),
      slices_(spec.discretization.trotter_m), one_body_k_(spec.harmonic_k),
      owned_(std::move(tables)) {
    if (!owned_.empty() && owned_.size() != spec.pairs.size())
        throw ConfigError("link action: table list must align with the pair list");
    by_particle_.resize(static_cast<size_t>(spec.n_particles()));
    for (size_t idx = 0; idx < spec.pairs.size(); ++idx) {
        const PairChannelSpec& pc = spec.pairs[idx];
        if (pc.q1q2 == 0.0) continue; // no interaction at all
        Channel c;
        c.a = pc.i;
        c.b = pc.j;
        c.q1q2 = pc.q1q2;
        if (mode_ == ActionMode::Primitive) {
            if (pc.q1q2 < 0.0 && !allow_attractive_primitive)
                throw ConfigError(
                    "primitive action requested for an attractive pair; the endpoint form "
                    "diverges there (override only for validation runs)");
            c.classical = true;
        } else if (pc.lambda_pair == 0.0) {
            c.classical = true; // both members classical/fixed: endpoint form is exact
        } else {
            const PairActionTable* t =
                idx < owned_.size() && owned_[idx] ? owned_[idx].get() : nullptr;
            if (!t)
                throw ConfigError("link action: missing pair table for a quantum channel");
            auto close = [](double x, double y) {
                return std::abs(x - y) <= 1e-10 * (std::abs(x) + std::abs(y) + 1.0);
            };
            if (t->is_null() || !close(t->q1q2(), pc.q1q2) || !close(t->mu(), pc.mu()) ||
                !close(t->tau(), spec.discretization.tau)) {
                std::ostringstream os;
                os << "link action: pair table mismatch for channel (" << pc.i << "," << pc.j
                   << "): table (q1q2=" << t->q1q2() << ", mu=" << t->mu()
                   << ", tau=" << t->tau() << ") vs run (q1q2=" << pc.q1q2
                   << ", mu=" << pc.mu() << ", tau=" << spec.discretization.tau << ")";
                throw ConfigError(os.str());
            }
            c.table = t;
        }
        by_particle_[static_cast<size_t>(c.a)].push_back(static_cast<int>(channels_.size()));
        by_particle_[static_cast<size_t>(c.b)].push_back(static_cast<int>(channels_.size()));
        channels_.push_back(c);
    }
}

double LinkAction::channel_link(const Channel& c, const PathConfiguration& path,
                                int slice) const {
    const int mn = path.next_slice(slice);
    const Vec3 d0 = minimum_image(path.bead(c.a, slice) - path.bead(c.b, slice), spec_->box);
    const Vec3 d1 = minimum_image(path.bead(c.a, mn) - path.bead(c.b, mn), spec_->box);
    const double r0 = norm(d0), r1 = norm(d1);
    if (c.classical) return primitive_pair_action(r0, r1, c.q1q2, tau_);
    const Vec3 rel = path.link_delta(c.a, slice) - path.link_delta(c.b, slice);
    return c.table->eval(r0, r1, norm(rel));
}

double LinkAction::channel_dudtau(const Channel& c, const PathConfiguration& path,
                                  int slice) const {
    const int mn = path.next_slice(slice);
    const Vec3 d0 = minimum_image(path.bead(c.a, slice) - path.bead(c.b, slice), spec_->box);
    const Vec3 d1 = minimum_image(path.bead(c.a, mn) - path.bead(c.b, mn), spec_->box);
    const double r0 = norm(d0), r1 = norm(d1);
    if (c.classical) return 0.5 * c.q1q2 * (1.0 / r0 + 1.0 / r1);
    const Vec3 rel = path.link_delta(c.a, slice) - path.link_delta(c.b, slice);
    return c.table->tau_derivative(r0, r1, norm(rel));
}

double LinkAction::channel_level_diag(const Channel& c, const PathConfiguration& path,
                                      int slice, int level) const {
    const Vec3 d = minimum_image(path.bead(c.a, slice) - path.bead(c.b, slice), spec_->box);
    const double r = norm(d);
    if (c.classical) return std::ldexp(tau_, level) * c.q1q2 / r;
    return c.table->level_diag(level, r);
}

double LinkAction::pair_link(const PathConfiguration& path, int slice) const {
    double u = 0.0;
    for (const Channel& c : channels_) u += channel_link(c, path, slice);
    if (one_body_k_ != 0.0)
        for (int p = 0; p < spec_->n_particles(); ++p) u += one_body_link(path, slice, p);
    return u;
}

double LinkAction::pair_link_particle(const PathConfiguration& path, int slice,
                                      int particle) const {
    double u = 0.0;
    for (int ci : by_particle_[static_cast<size_t>(particle)])
        u += channel_link(channels_[static_cast<size_t>(ci)], path, slice);
    if (one_body_k_ != 0.0) u += one_body_link(path, slice, particle);
    return u;
}

double LinkAction::particle_interaction(const PathConfiguration& path, int particle) const {
    double u = 0.0;
    for (int m = 0; m < slices_; ++m) u += pair_link_particle(path, m, particle);
    return u;
}

double LinkAction::segment_full_action(const PathConfiguration& path, int slice_a, int slice_b,
                                       int particle) const {
    double u = 0.0;
    for (int m = slice_a; m < slice_b; ++m)
        u += pair_link_particle(path, m % slices_, particle);
    return u;
}

double LinkAction::segment_level_action(const PathConfiguration& path, int slice_a,
                                        int slice_b, int stride, int level,
                                        int particle) const {
    double u = 0.0;
    const double tau_level = std::ldexp(tau_, level);
    for (int t = slice_a + stride; t < slice_b; t += stride) {
        const int m = t % slices_;
        for (int ci : by_particle_[static_cast<size_t>(particle)])
            u += channel_level_diag(channels_[static_cast<size_t>(ci)], path, m, level);
        if (one_body_k_ != 0.0) {
            const Vec3& x = path.bead(particle, m);
            u += tau_level * 0.5 * one_body_k_ * norm2(x);
        }
    }
    return u;
}

double LinkAction::dudtau_link(const PathConfiguration& path, int slice) const {
    double du = 0.0;
    for (const Channel& c : channels_) du += channel_dudtau(c, path, slice);
    if (one_body_k_ != 0.0) {
        const int mn = path.next_slice(slice);
        for (int p = 0; p < spec_->n_particles(); ++p) {
            const double v0 = 0.5 * one_body_k_ * norm2(path.bead(p, slice));
            const double v1 = 0.5 * one_body_k_ * norm2(path.bead(p, mn));
            du += 0.5 * (v0 + v1);
        }
    }
    return du;
}

void LinkAction::accumulate_gradients(const PathConfiguration& path, int slice,
                                      std::vector<Vec3>& grad) const {
    const int mn = path.next_slice(slice);
    const size_t m_sz = static_cast<size_t>(slices_);
    for (const Channel& c : channels_) {
        const Vec3 d0 = minimum_image(path.bead(c.a, slice) - path.bead(c.b, slice), spec_->box);
        const Vec3 d1 = minimum_image(path.bead(c.a, mn) - path.bead(c.b, mn), spec_->box);
        const double r0 = norm(d0), r1 = norm(d1);
        const Vec3 rhat0 = d0 * (1.0 / r0);
        const Vec3 rhat1 = d1 * (1.0 / r1);
        Vec3 g_a0, g_a1; // gradient on particle a's beads at the two slices
        if (c.classical) {
            g_a0 = rhat0 * (-0.5 * tau_ * c.q1q2 / (r0 * r0));
            g_a1 = rhat1 * (-0.5 * tau_ * c.q1q2 / (r1 * r1));
        } else {
            const Vec3 rel = path.link_delta(c.a, slice) - path.link_delta(c.b, slice);
            const double s = norm(rel);
            const PairActionTable::Gradients g = c.table->gradients(r0, r1, s);
            g_a0 = rhat0 * g.du_dr - rel * g.du_ds;
            g_a1 = rhat1 * g.du_drp + rel * g.du_ds;
        }
        grad[static_cast<size_t>(c.a) * m_sz + slice] += g_a0;
        grad[static_cast<size_t>(c.b) * m_sz + slice] -= g_a0;
        grad[static_cast<size_t>(c.a) * m_sz + mn] += g_a1;
        grad[static_cast<size_t>(c.b) * m_sz + mn] -= g_a1;
    }
    if (one_body_k_ != 0.0) {
        for (int p = 0; p < spec_->n_particles(); ++p) {
            grad[static_cast<size_t>(p) * m_sz + slice] +=
                path.bead(p, slice) * (0.5 * tau_ * one_body_k_);
            grad[static_cast<size_t>(p) * m_sz + mn] +=
                path.bead(p, mn) * (0.5 * tau_ * one_body_k_);
        }
    }
}

double LinkAction::one_body_link(const PathConfiguration& path, int slice, int particle) const {
    if (one_body_k_ == 0.0) return 0.0;
    const int mn = path.next_slice(slice);
    const double v0 = 0.5 * one_body_k_ * norm2(path.bead(particle, slice));
    const double v1 = 0.5 * one_body_k_ * norm2(path.bead(particle, mn));
    return 0.5 * tau_ * (v0 + v1);
}

uint64_t LinkAction::table_clamp_total() const {
    uint64_t total = 0;
    for (const auto& t : owned_)
        if (t) total += t->clamp_count();
    return total;
}

} // namespace coulpimc

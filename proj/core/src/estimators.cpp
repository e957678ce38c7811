#include "coulpimc/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "coulpimc/errors.hpp"

namespace coulpimc {

EnergySample measure_energy(const PathConfiguration& path, const LinkAction& action) {
    const SystemSpec& spec = action.system();
    const int n = spec.n_particles();
    const int slices = path.slice_count();
    const double tau = spec.discretization.tau;
    const double beta = spec.discretization.beta();

    EnergySample e;
    int n_quantum = 0, n_classical = 0;
    for (const auto& p : spec.particles) {
        if (p.model == ParticleModel::Quantum) ++n_quantum;
        if (p.model == ParticleModel::Classical) ++n_classical;
    }

    // Interaction tau-derivative, averaged over links.
    double dudtau = 0.0;
    for (int m = 0; m < slices; ++m) dudtau += action.dudtau_link(path, m);
    dudtau /= slices;
    e.dudtau = dudtau;

    // Spring (thermodynamic kinetic) term from raw link differences.
    double spring = 0.0;
    for (int p = 0; p < n; ++p) {
        const ParticleSpec& ps = spec.particles[static_cast<size_t>(p)];
        if (ps.model != ParticleModel::Quantum) continue;
        double acc = 0.0;
        for (int m = 0; m < slices; ++m) acc += norm2(path.link_delta(p, m));
        spring += acc / (4.0 * ps.lambda * tau * tau);
    }
    spring /= slices;
    e.spring = spring;

    // Centroid-virial gradient term: grad[p*M+m] accumulates the gradient of
    // every link action touching bead (p, m).
    std::vector<Vec3> grad(static_cast<size_t>(n) * slices);
    for (int m = 0; m < slices; ++m) action.accumulate_gradients(path, m, grad);
    double vg = 0.0;
    for (int p = 0; p < n; ++p) {
        const ParticleSpec& ps = spec.particles[static_cast<size_t>(p)];
        if (ps.model != ParticleModel::Quantum) continue;
        Vec3 centroid{0, 0, 0};
        for (int m = 0; m < slices; ++m) centroid += path.bead(p, m);
        centroid *= 1.0 / slices;
        double acc = 0.0;
        for (int m = 0; m < slices; ++m)
            acc += dot(path.bead(p, m) - centroid, grad[static_cast<size_t>(p) * slices + m]);
        vg += acc;
    }
    vg /= 2.0 * slices * tau;
    e.virial_grad = vg;

    e.classical_ideal = 1.5 * n_classical / beta;

    e.thermodynamic = 1.5 * n_quantum / tau - spring + dudtau + e.classical_ideal;
    e.virial = 1.5 * n_quantum / beta + dudtau + vg + e.classical_ideal;
    return e;
}

void Histogram::merge(const Histogram& o) {
    if (counts.size() != o.counts.size() || lo != o.lo || hi != o.hi)
        throw NumericalError("histogram merge: incompatible shapes");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    overflow += o.overflow;
    total += o.total;
}

const char* fragment_label(Fragment f) {
    switch (f) {
    case Fragment::H3Plus: return "H3+";
    case Fragment::H2_HPlus: return "H2+H+";
    case Fragment::H2Plus_H: return "H2++H";
    case Fragment::TwoH_HPlus: return "2H+H+";
    default: return "other";
    }
}

Fragment fragment_classify(const PathConfiguration& path, const SystemSpec& spec,
                           double cutoff) {
    std::vector<int> nuclei, electrons;
    for (int p = 0; p < spec.n_particles(); ++p) {
        const auto& ps = spec.particles[static_cast<size_t>(p)];
        if (ps.charge > 0)
            nuclei.push_back(p);
        else if (ps.charge < 0)
            electrons.push_back(p);
    }
    if (nuclei.size() != 3 || electrons.size() != 2) return Fragment::Other;

    const int slices = path.slice_count();
    auto centroid = [&](int p) {
        Vec3 c{0, 0, 0};
        for (int m = 0; m < slices; ++m) c += path.bead(p, m);
        return c * (1.0 / slices);
    };
    std::array<Vec3, 3> nc;
    for (int i = 0; i < 3; ++i) nc[static_cast<size_t>(i)] = centroid(nuclei[static_cast<size_t>(i)]);

    // Single-linkage components among the three nuclei.
    auto near = [&](const Vec3& a, const Vec3& b) {
        return norm(minimum_image(a - b, spec.box)) <= cutoff;
    };
    std::array<int, 3> comp{0, 1, 2};
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (near(nc[static_cast<size_t>(i)], nc[static_cast<size_t>(j)])) {
                const int a = comp[static_cast<size_t>(i)], b = comp[static_cast<size_t>(j)];
                for (auto& c : comp)
                    if (c == b) c = a;
            }
    std::array<int, 3> size{0, 0, 0};
    for (int i = 0; i < 3; ++i) ++size[static_cast<size_t>(comp[static_cast<size_t>(i)])];
    int n_comp = 0, largest = 0;
    for (int i = 0; i < 3; ++i)
        if (size[static_cast<size_t>(i)] > 0) {
            ++n_comp;
            largest = std::max(largest, size[static_cast<size_t>(i)]);
        }

    if (n_comp == 1) return Fragment::H3Plus;

    // Assign each electron to the component of its nearest nucleus.
    std::array<int, 3> electrons_per_comp{0, 0, 0};
    for (int e : electrons) {
        const Vec3 ec = centroid(e);
        int best = 0;
        double best_d = HUGE_VAL;
        for (int i = 0; i < 3; ++i) {
            const double d = norm(minimum_image(ec - nc[static_cast<size_t>(i)], spec.box));
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        ++electrons_per_comp[static_cast<size_t>(comp[static_cast<size_t>(best)])];
    }

    if (n_comp == 2) {
        // Components are a pair and a singleton.
        int pair_comp = -1;
        for (int i = 0; i < 3; ++i)
            if (size[static_cast<size_t>(i)] == 2) pair_comp = i;
        if (pair_comp < 0) return Fragment::Other;
        const int on_pair = electrons_per_comp[static_cast<size_t>(pair_comp)];
        if (on_pair == 2) return Fragment::H2_HPlus;
        if (on_pair == 1) return Fragment::H2Plus_H;
        return Fragment::Other;
    }

    // Three separate nuclei: 2H + H+ when two of them hold one electron each.
    int with_one = 0, with_many = 0;
    for (int i = 0; i < 3; ++i) {
        if (size[static_cast<size_t>(i)] == 0) continue;
        if (electrons_per_comp[static_cast<size_t>(i)] == 1) ++with_one;
        if (electrons_per_comp[static_cast<size_t>(i)] > 1) ++with_many;
    }
    if (with_one == 2 && with_many == 0) return Fragment::TwoH_HPlus;
    return Fragment::Other;
}

BlockAccumulator::BlockAccumulator(const SystemSpec& spec, double fragment_cutoff)
    : spec_(&spec), cutoff_(fragment_cutoff) {
    for (const auto& pc : spec.pairs) {
        const auto k = static_cast<size_t>(pc.kind);
        if (pc.kind == PairKind::None) continue;
        if (!present_[k]) {
            present_[k] = true;
            main_[k] = Histogram(0.0, kMainRange, kMainBins);
            if (pc.kind == PairKind::EP || pc.kind == PairKind::EE)
                fine_[k] = Histogram(0.0, kFineRange, kFineBins);
        }
    }
    int nuclei = 0, electrons = 0;
    for (const auto& ps : spec.particles) {
        if (ps.charge > 0) ++nuclei;
        if (ps.charge < 0) ++electrons;
    }
    track_fragments_ = (nuclei == 3 && electrons == 2);
}

void BlockAccumulator::measure(const PathConfiguration& path, const LinkAction& action) {
    const EnergySample e = measure_energy(path, action);
    ++n_;
    e_th_sum_ += e.thermodynamic;
    e_vir_sum_ += e.virial;

    const int slices = path.slice_count();
    for (const auto& pc : spec_->pairs) {
        if (pc.kind == PairKind::None) continue;
        const auto k = static_cast<size_t>(pc.kind);
        Histogram& hm = main_[k];
        Histogram* hf = fine_[k].counts.empty() ? nullptr : &fine_[k];
        for (int m = 0; m < slices; ++m) {
            const double r =
                norm(minimum_image(path.bead(pc.i, m) - path.bead(pc.j, m), spec_->box));
            hm.add(r);
            if (hf) hf->add(r);
        }
    }

    if (track_fragments_) {
        const Fragment f = fragment_classify(path, *spec_, cutoff_);
        ++fragments_[static_cast<size_t>(static_cast<int>(f))];
    }
}

void BlockAccumulator::merge(const BlockAccumulator& other) {
    n_ += other.n_;
    e_th_sum_ += other.e_th_sum_;
    e_vir_sum_ += other.e_vir_sum_;
    for (size_t k = 0; k < main_.size(); ++k) {
        if (!present_[k]) continue;
        main_[k].merge(other.main_[k]);
        if (!fine_[k].counts.empty()) fine_[k].merge(other.fine_[k]);
    }
    for (size_t i = 0; i < fragments_.size(); ++i) fragments_[i] += other.fragments_[i];
}

bool BlockAccumulator::has_kind(PairKind k) const { return present_[static_cast<size_t>(k)]; }

const Histogram& BlockAccumulator::main_hist(PairKind k) const {
    return main_[static_cast<size_t>(k)];
}

const Histogram& BlockAccumulator::fine_hist(PairKind k) const {
    return fine_[static_cast<size_t>(k)];
}

} // namespace coulpimc

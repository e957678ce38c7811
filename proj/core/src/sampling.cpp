#include "coulpimc/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "coulpimc/errors.hpp"

namespace coulpimc {

namespace {

constexpr uint32_t kMovePurpose = 0x01;

int auto_level(int slices) {
    int l = 2;
    while ((1 << (l + 1)) * 16 <= slices && l < 8) ++l;
    while ((1 << l) > slices && l > 1) --l;
    return l;
}

} // namespace

bool metropolis_accept(double log_ratio, RngStream& rng) {
    if (std::isnan(log_ratio))
        throw NumericalError("metropolis: NaN action difference");
    if (log_ratio >= 0.0) {
        rng.uniform(); // keep the draw count independent of the outcome
        return true;
    }
    return rng.uniform() < std::exp(log_ratio);
}

Sampler::Sampler(const LinkAction& action, const MoveSchedule& schedule, uint64_t master_seed,
                 uint32_t walker_id)
    : action_(&action), spec_(&action.system()), rng_(master_seed, walker_id, kMovePurpose),
      slices_(action.system().discretization.trotter_m), tuning_(schedule.tune_displace) {
    level_ = schedule.bisection_level > 0 ? schedule.bisection_level : auto_level(slices_);
    while ((1 << level_) > slices_ && level_ > 1) --level_;
    const size_t n = static_cast<size_t>(spec_->n_particles());
    steps_.assign(n, schedule.displace_step);
    window_attempts_.assign(n, 0);
    window_accepts_.assign(n, 0);
}

bool Sampler::bisection_move(PathConfiguration& path, int particle) {
    const int seg = 1 << level_;
    const double tau = spec_->discretization.tau;
    const double lambda = spec_->particles[static_cast<size_t>(particle)].lambda;
    const int a = static_cast<int>(rng_.uniform_in(0, slices_));

    // Save the interior beads for restore-on-reject.
    saved_.resize(static_cast<size_t>(seg - 1));
    for (int t = 1; t < seg; ++t)
        saved_[static_cast<size_t>(t - 1)] = path.bead(particle, (a + t) % slices_);

    // Level actions of the original segment, computed up front because the
    // stage loop overwrites beads as it descends.
    std::vector<double> old_level(static_cast<size_t>(level_) + 1, 0.0);
    for (int k = 1; k < level_; ++k) {
        const int stride = 1 << (level_ - k);
        old_level[static_cast<size_t>(k)] =
            action_->segment_level_action(path, a, a + seg, stride, level_ - k, particle);
    }
    old_level[static_cast<size_t>(level_)] =
        action_->segment_full_action(path, a, a + seg, particle);

    auto restore = [&] {
        for (int t = 1; t < seg; ++t)
            path.bead(particle, (a + t) % slices_) = saved_[static_cast<size_t>(t - 1)];
    };

    double prev_new = 0.0, prev_old = 0.0;
    for (int k = 1; k <= level_; ++k) {
        const int stride = 1 << (level_ - k); // spacing of links after this stage
        // Place the new midpoint beads from the exact free bridge.
        for (int t = a + stride; t < a + seg; t += 2 * stride) {
            const Vec3& left = path.bead(particle, (t - stride + slices_) % slices_);
            const Vec3& right = path.bead(particle, (t + stride) % slices_);
            const Vec3 mean = (left + right) * 0.5;
            const double sig = std::sqrt(lambda * stride * tau);
            Vec3& b = path.bead(particle, t % slices_);
            b.x = mean.x + sig * rng_.gaussian();
            b.y = mean.y + sig * rng_.gaussian();
            b.z = mean.z + sig * rng_.gaussian();
        }
        const double a_new =
            k == level_
                ? action_->segment_full_action(path, a, a + seg, particle)
                : action_->segment_level_action(path, a, a + seg, stride, level_ - k, particle);
        const double a_old = old_level[static_cast<size_t>(k)];
        const double log_q = -(a_new - a_old) + (prev_new - prev_old);
        if (!metropolis_accept(log_q, rng_)) {
            restore();
            return false;
        }
        prev_new = a_new;
        prev_old = a_old;
    }
    path.bump_generation();
    return true;
}

bool Sampler::displace_move(PathConfiguration& path, int particle) {
    const double step = steps_[static_cast<size_t>(particle)];
    const Vec3 shift{step * (2.0 * rng_.uniform() - 1.0), step * (2.0 * rng_.uniform() - 1.0),
                     step * (2.0 * rng_.uniform() - 1.0)};
    const double before = action_->particle_interaction(path, particle);
    auto& ring = path.ring(particle);
    for (Vec3& b : ring) b += shift;
    const double after = action_->particle_interaction(path, particle);
    if (metropolis_accept(-(after - before), rng_)) {
        path.bump_generation();
        return true;
    }
    for (Vec3& b : ring) b -= shift;
    return false;
}

void Sampler::sweep(PathConfiguration& path) {
    const int n = spec_->n_particles();
    for (int p = 0; p < n; ++p) {
        const ParticleSpec& ps = spec_->particles[static_cast<size_t>(p)];
        if (ps.model != ParticleModel::Quantum) continue;
        const int seg = 1 << level_;
        const int per_sweep = std::max(1, slices_ / seg);
        for (int rep = 0; rep < per_sweep; ++rep) {
            ++stats_.bisection_attempts;
            if (bisection_move(path, p)) ++stats_.bisection_accepts;
        }
    }
    for (int p = 0; p < n; ++p) {
        const ParticleSpec& ps = spec_->particles[static_cast<size_t>(p)];
        if (ps.model == ParticleModel::Fixed) continue;
        ++stats_.displace_attempts;
        ++window_attempts_[static_cast<size_t>(p)];
        if (displace_move(path, p)) {
            ++stats_.displace_accepts;
            ++window_accepts_[static_cast<size_t>(p)];
        }
        if (tuning_ && window_attempts_[static_cast<size_t>(p)] >= 100) {
            const double rate = double(window_accepts_[static_cast<size_t>(p)]) /
                                double(window_attempts_[static_cast<size_t>(p)]);
            double& s = steps_[static_cast<size_t>(p)];
            if (rate > 0.55)
                s *= 1.2;
            else if (rate < 0.45)
                s /= 1.2;
            const double cap = spec_->box.periodic ? 0.5 * spec_->box.edge : 50.0;
            s = std::clamp(s, 1e-4, cap);
            window_attempts_[static_cast<size_t>(p)] = 0;
            window_accepts_[static_cast<size_t>(p)] = 0;
        }
    }
}

} // namespace coulpimc

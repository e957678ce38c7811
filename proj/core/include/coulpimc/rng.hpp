#pragma once

#include <cstdint>

namespace coulpimc {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11 "Parallel
// random numbers: as easy as 1, 2, 3"). Pure function of (counter, key):
// splittable, reproducible, trivially checkpointable.
struct Philox4x32 {
    static void block(const uint32_t ctr[4], const uint32_t key[2], uint32_t out[4]);
};

// One logical random stream, keyed by (master_seed, stream_id, purpose).
// Different (stream_id, purpose) pairs under the same master seed are
// statistically independent; state is just a 64-bit draw counter plus a
// position within the current 4-word block.
class RngStream {
public:
    RngStream() : RngStream(0, 0, 0) {}
    RngStream(uint64_t master_seed, uint32_t stream_id, uint32_t purpose);

    uint32_t next_u32();
    uint64_t next_u64();

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform();
    // Uniform on (0, 1] (safe as a log argument).
    double uniform_open();
    // Uniform on [a, b).
    double uniform_in(double a, double b);
    // Standard normal (Box-Muller, one value per two uniforms; stateless
    // beyond the counter, which keeps checkpointing exact).
    double gaussian();

    // Checkpoint support: the full mutable state is (block counter, position).
    uint64_t block_counter() const { return n_; }
    uint32_t block_pos() const { return pos_; }
    void restore(uint64_t block_counter, uint32_t block_pos);

    uint64_t master_seed() const { return seed_; }
    uint32_t stream_id() const { return ctr_hi_[0]; }
    uint32_t purpose() const { return ctr_hi_[1]; }

private:
    void refill();

    uint64_t seed_ = 0;
    uint32_t key_[2] = {0, 0};
    uint32_t ctr_hi_[2] = {0, 0}; // (stream_id, purpose)
    uint64_t n_ = 0;              // block counter (low 64 bits of the 128-bit counter)
    uint32_t buf_[4] = {0, 0, 0, 0};
    uint32_t pos_ = 4; // 4 = buffer empty
};

} // namespace coulpimc

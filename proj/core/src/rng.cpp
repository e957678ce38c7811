#include "coulpimc/rng.hpp"

#include <cmath>

namespace coulpimc {

namespace {

constexpr uint32_t kMul0 = 0xD2511F53u;
constexpr uint32_t kMul1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline void round_once(uint32_t c[4], const uint32_t k[2]) {
    const uint64_t p0 = static_cast<uint64_t>(kMul0) * c[0];
    const uint64_t p1 = static_cast<uint64_t>(kMul1) * c[2];
    const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
    const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
    c[0] = hi1 ^ c[1] ^ k[0];
    c[1] = lo1;
    c[2] = hi0 ^ c[3] ^ k[1];
    c[3] = lo0;
}

} // namespace

void Philox4x32::block(const uint32_t ctr[4], const uint32_t key[2], uint32_t out[4]) {
    uint32_t c[4] = {ctr[0], ctr[1], ctr[2], ctr[3]};
    uint32_t k[2] = {key[0], key[1]};
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            k[0] += kWeyl0;
            k[1] += kWeyl1;
        }
        round_once(c, k);
    }
    out[0] = c[0];
    out[1] = c[1];
    out[2] = c[2];
    out[3] = c[3];
}

RngStream::RngStream(uint64_t master_seed, uint32_t stream_id, uint32_t purpose)
    : seed_(master_seed) {
    key_[0] = static_cast<uint32_t>(master_seed);
    key_[1] = static_cast<uint32_t>(master_seed >> 32);
    ctr_hi_[0] = stream_id;
    ctr_hi_[1] = purpose;
}

void RngStream::refill() {
    const uint32_t ctr[4] = {static_cast<uint32_t>(n_), static_cast<uint32_t>(n_ >> 32),
                             ctr_hi_[0], ctr_hi_[1]};
    Philox4x32::block(ctr, key_, buf_);
    ++n_;
    pos_ = 0;
}

uint32_t RngStream::next_u32() {
    if (pos_ >= 4) refill();
    return buf_[pos_++];
}

uint64_t RngStream::next_u64() {
    const uint64_t lo = next_u32();
    const uint64_t hi = next_u32();
    return lo | (hi << 32);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::uniform_in(double a, double b) {
    return a + (b - a) * uniform();
}

double RngStream::gaussian() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

void RngStream::restore(uint64_t block_counter, uint32_t block_pos) {
    if (block_pos >= 4) {
        n_ = block_counter;
        pos_ = 4;
        return;
    }
    // Re-derive the buffered block so mid-block positions restore exactly.
    n_ = block_counter - 1;
    refill();
    pos_ = block_pos;
}

} // namespace coulpimc

#pragma once

// Internal little-endian byte packing helpers shared by the binary file
// writers (pair tables, checkpoints). Not installed.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace coulpimc::detail {

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void i32(int32_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64v(const std::vector<double>& v) {
        if (!v.empty()) raw(v.data(), v.size() * sizeof(double));
    }
    void u64v(const std::vector<uint64_t>& v) {
        if (!v.empty()) raw(v.data(), v.size() * sizeof(uint64_t));
    }
    const std::vector<uint8_t>& bytes() const { return buf_; }

private:
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<uint8_t> buf_;
};

// Throws std::out_of_range on truncation; callers translate to IoError with
// file context.
class ByteReader {
public:
    ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
    uint8_t u8() { return *take(1); }
    uint32_t u32() { return get<uint32_t>(); }
    uint64_t u64() { return get<uint64_t>(); }
    int32_t i32() { return get<int32_t>(); }
    double f64() { return get<double>(); }
    std::vector<double> f64v(size_t count) {
        std::vector<double> v(count);
        if (count) std::memcpy(v.data(), take(count * sizeof(double)), count * sizeof(double));
        return v;
    }
    std::vector<uint64_t> u64v(size_t count) {
        std::vector<uint64_t> v(count);
        if (count)
            std::memcpy(v.data(), take(count * sizeof(uint64_t)), count * sizeof(uint64_t));
        return v;
    }
    size_t remaining() const { return n_ - pos_; }

private:
    template <typename T> T get() {
        T v;
        std::memcpy(&v, take(sizeof v), sizeof v);
        return v;
    }
    const uint8_t* take(size_t n) {
        if (pos_ + n > n_) throw std::out_of_range("byte stream truncated");
        const uint8_t* p = p_ + pos_;
        pos_ += n;
        return p;
    }
    const uint8_t* p_;
    size_t n_, pos_ = 0;
};

inline uint32_t crc_of(const std::vector<uint8_t>& payload) {
    uLong c = crc32(0L, Z_NULL, 0);
    if (!payload.empty()) c = crc32(c, payload.data(), static_cast<uInt>(payload.size()));
    return static_cast<uint32_t>(c);
}

} // namespace coulpimc::detail

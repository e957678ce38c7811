#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>

namespace coulpimc {

// FNV-1a 64-bit, used for config hashes and path fingerprints.
class Fnv1a64 {
public:
    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ull;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    void update_double(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        update(&bits, sizeof bits);
    }
    void update_u64(uint64_t v) { update(&v, sizeof v); }

    uint64_t digest() const { return h_; }

private:
    uint64_t h_ = 0xcbf29ce484222325ull;
};

inline uint64_t fnv1a64(std::string_view s) {
    Fnv1a64 h;
    h.update(s);
    return h.digest();
}

} // namespace coulpimc

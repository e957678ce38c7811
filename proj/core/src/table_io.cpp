#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "bytes.hpp"
#include "coulpimc/errors.hpp"
#include "coulpimc/pair_action.hpp"

// Binary pair-table file, little-endian:
//
//   bytes 0..3   magic "CPT1"
//   bytes 4..    payload (fixed header, then arrays)
//   last 4 bytes CRC32 (zlib) of the payload
//
// Payload layout:
//   u32 version (= 1)
//   u8  null flag
//   f64 q1q2, mu, tau, lambda, r_min, r_max, tail_metric
//   i32 l_used, squarings, grid_n, level_count
//   f64[grid_n] grid
//   f64[grid_n] u0, a1, a2, du0, da1, da2   (six arrays)
//   f64[grid_n] per level diagonal, level_count arrays
// Null tables store grid_n = 0 and no arrays.

namespace coulpimc {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

using detail::ByteReader;
using detail::ByteWriter;
using detail::crc_of;

} // namespace

// Friend of PairActionTable: reconstructs the private state on load.
class TableReader {
public:
    static std::shared_ptr<const PairActionTable> read(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open pair table file: " + path);
        std::vector<uint8_t> all((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
        if (all.size() < 8 || std::memcmp(all.data(), kMagic, 4) != 0)
            throw IoError("not a pair table file: " + path);
        std::vector<uint8_t> payload(all.begin() + 4, all.end() - 4);
        uint32_t stored;
        std::memcpy(&stored, all.data() + all.size() - 4, 4);
        if (crc_of(payload) != stored)
            throw IoError("pair table file failed its checksum: " + path);

        try {
            return parse(payload, path);
        } catch (const std::out_of_range&) {
            throw IoError("pair table file truncated: " + path);
        }
    }

private:
    static std::shared_ptr<const PairActionTable> parse(const std::vector<uint8_t>& payload,
                                                        const std::string& path) {
        ByteReader r(payload.data(), payload.size());
        if (r.u32() != kVersion) throw IoError("unsupported pair table version: " + path);

        auto t = std::make_shared<PairActionTable>();
        const bool null = r.u8() != 0;
        t->null_ = null;
        t->q1q2_ = r.f64();
        t->mu_ = r.f64();
        t->tau_ = r.f64();
        t->lambda_ = r.f64();
        t->r_min_ = r.f64();
        t->r_max_ = r.f64();
        t->tail_metric_ = r.f64();
        t->l_used_ = r.i32();
        t->squarings_ = r.i32();
        const int n = r.i32();
        const int levels = r.i32();
        if (n < 0 || levels < 0 || n > (1 << 24) || levels > 64)
            throw IoError("pair table file has implausible sizes: " + path);
        if (n > 0) {
            t->grid_ = r.f64v(n);
            auto mk = [&](CubicSpline& s) { s = CubicSpline(t->grid_, r.f64v(n)); };
            mk(t->u0_);
            mk(t->a1_);
            mk(t->a2_);
            mk(t->du0_);
            mk(t->da1_);
            mk(t->da2_);
            t->level_u0_.clear();
            for (int j = 0; j < levels; ++j)
                t->level_u0_.emplace_back(t->grid_, r.f64v(n));
        }
        return t;
    }
};

void PairActionTable::save(const std::string& path) const {
    ByteWriter w;
    w.u32(kVersion);
    w.u8(null_ ? 1 : 0);
    w.f64(q1q2_);
    w.f64(mu_);
    w.f64(tau_);
    w.f64(lambda_);
    w.f64(r_min_);
    w.f64(r_max_);
    w.f64(tail_metric_);
    w.i32(l_used_);
    w.i32(squarings_);
    const int n = null_ ? 0 : static_cast<int>(grid_.size());
    w.i32(n);
    w.i32(null_ ? 0 : static_cast<int>(level_u0_.size()));
    if (n > 0) {
        w.f64v(grid_);
        w.f64v(u0_.ys());
        w.f64v(a1_.ys());
        w.f64v(a2_.ys());
        w.f64v(du0_.ys());
        w.f64v(da1_.ys());
        w.f64v(da2_.ys());
        for (const auto& lv : level_u0_) w.f64v(lv.ys());
    }
    const uint32_t crc = crc_of(w.bytes());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write pair table file: " + path);
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(w.bytes().data()),
              static_cast<std::streamsize>(w.bytes().size()));
    out.write(reinterpret_cast<const char*>(&crc), 4);
    if (!out) throw IoError("short write on pair table file: " + path);
}

std::shared_ptr<const PairActionTable> PairActionTable::load(const std::string& path) {
    return TableReader::read(path);
}

} // namespace coulpimc

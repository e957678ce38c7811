#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "bytes.hpp"
#include "coulpimc/driver.hpp"
#include "coulpimc/errors.hpp"

// Binary checkpoint file, little-endian:
//
//   bytes 0..3   magic "CPCK"
//   bytes 4..    payload
//   last 4 bytes CRC32 (zlib) of the payload
//
// The payload stores the config digest, phase counters, every walker's exact
// sampler state (beads, RNG counters, tuned step sizes), the completed block
// rows and their accumulator snapshots. Restoring from it reproduces the
// uninterrupted run bit for bit.

namespace coulpimc {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'C', 'K'};
constexpr uint32_t kVersion = 1;

using detail::ByteReader;
using detail::ByteWriter;
using detail::crc_of;

void put_histogram(ByteWriter& w, const Histogram& h) {
    w.f64(h.lo);
    w.f64(h.hi);
    w.u32(static_cast<uint32_t>(h.counts.size()));
    w.u64(h.overflow);
    w.u64(h.total);
    w.u64v(h.counts);
}

Histogram get_histogram(ByteReader& r) {
    Histogram h;
    h.lo = r.f64();
    h.hi = r.f64();
    const uint32_t bins = r.u32();
    if (bins > (1u << 20)) throw IoError("checkpoint histogram has implausible bin count");
    h.overflow = r.u64();
    h.total = r.u64();
    h.counts = r.u64v(bins);
    return h;
}

void put_walker(ByteWriter& w, const WalkerCheckpoint& ws) {
    w.u64(ws.rng_block);
    w.u32(ws.rng_pos);
    w.u8(ws.tuning_active);
    const int np = ws.path.n_particles();
    const int slices = ws.path.slice_count();
    w.u32(static_cast<uint32_t>(np));
    w.u32(static_cast<uint32_t>(slices));
    w.u64(ws.path.generation());
    w.u64(ws.path.stored_fixed_fingerprint());
    if (static_cast<int>(ws.displace_steps.size()) != np)
        throw IoError("checkpoint walker has mismatched displace-step count");
    w.f64v(ws.displace_steps);
    for (int p = 0; p < np; ++p)
        for (int m = 0; m < slices; ++m) {
            const Vec3& x = ws.path.bead(p, m);
            w.f64(x.x);
            w.f64(x.y);
            w.f64(x.z);
        }
}

WalkerCheckpoint get_walker(ByteReader& r) {
    WalkerCheckpoint ws;
    ws.rng_block = r.u64();
    ws.rng_pos = r.u32();
    ws.tuning_active = r.u8();
    const uint32_t np = r.u32();
    const uint32_t slices = r.u32();
    if (np > 10000u || slices > (1u << 22))
        throw IoError("checkpoint walker has implausible path dimensions");
    const uint64_t generation = r.u64();
    const uint64_t fingerprint = r.u64();
    ws.displace_steps = r.f64v(np);
    ws.path = PathConfiguration(static_cast<int>(np), static_cast<int>(slices));
    for (uint32_t p = 0; p < np; ++p)
        for (uint32_t m = 0; m < slices; ++m) {
            Vec3& x = ws.path.bead(static_cast<int>(p), static_cast<int>(m));
            x.x = r.f64();
            x.y = r.f64();
            x.z = r.f64();
        }
    ws.path.set_generation(generation);
    ws.path.set_stored_fixed_fingerprint(fingerprint);
    return ws;
}

void put_accum(ByteWriter& w, const AccumCheckpoint& a) {
    w.u64(a.n);
    w.f64(a.e_th_sum);
    w.f64(a.e_vir_sum);
    w.u8(a.tracks_fragments);
    for (int k = 0; k < kFragmentKinds; ++k) w.u64(a.fragments[static_cast<size_t>(k)]);
    for (size_t k = 0; k < 4; ++k) w.u8(a.present[k]);
    for (size_t k = 0; k < 4; ++k) {
        if (!a.present[k]) continue;
        put_histogram(w, a.main[k]);
        w.u8(a.fine[k].counts.empty() ? 0 : 1);
        if (!a.fine[k].counts.empty()) put_histogram(w, a.fine[k]);
    }
}

AccumCheckpoint get_accum(ByteReader& r) {
    AccumCheckpoint a;
    a.n = r.u64();
    a.e_th_sum = r.f64();
    a.e_vir_sum = r.f64();
    a.tracks_fragments = r.u8();
    for (int k = 0; k < kFragmentKinds; ++k) a.fragments[static_cast<size_t>(k)] = r.u64();
    for (size_t k = 0; k < 4; ++k) a.present[k] = r.u8();
    for (size_t k = 0; k < 4; ++k) {
        if (!a.present[k]) continue;
        a.main[k] = get_histogram(r);
        if (r.u8() != 0) a.fine[k] = get_histogram(r);
    }
    return a;
}

void put_row(ByteWriter& w, const BlockRow& row) {
    w.u32(row.block);
    w.u32(row.walker);
    w.u64(row.n_meas);
    w.f64(row.e_th);
    w.f64(row.e_vir);
    w.u64(row.bis_att);
    w.u64(row.bis_acc);
    w.u64(row.disp_att);
    w.u64(row.disp_acc);
}

BlockRow get_row(ByteReader& r) {
    BlockRow row;
    row.block = r.u32();
    row.walker = r.u32();
    row.n_meas = r.u64();
    row.e_th = r.f64();
    row.e_vir = r.f64();
    row.bis_att = r.u64();
    row.bis_acc = r.u64();
    row.disp_att = r.u64();
    row.disp_acc = r.u64();
    return row;
}

CheckpointState parse_checkpoint(const std::vector<uint8_t>& payload, const std::string& file) {
    ByteReader r(payload.data(), payload.size());
    if (r.u32() != kVersion) throw IoError("unsupported checkpoint version: " + file);
    CheckpointState st;
    st.config_digest = r.u64();
    st.equilibrated = r.u8();
    st.blocks_done = r.u32();
    const uint32_t walkers = r.u32();
    if (walkers > 4096u) throw IoError("checkpoint has implausible walker count: " + file);
    st.walkers.reserve(walkers);
    for (uint32_t w = 0; w < walkers; ++w) st.walkers.push_back(get_walker(r));
    const uint32_t n_rows = r.u32();
    if (n_rows > (1u << 26)) throw IoError("checkpoint has implausible row count: " + file);
    st.rows.reserve(n_rows);
    for (uint32_t i = 0; i < n_rows; ++i) st.rows.push_back(get_row(r));
    st.accums.reserve(n_rows);
    for (uint32_t i = 0; i < n_rows; ++i) st.accums.push_back(get_accum(r));
    if (r.remaining() != 0) throw IoError("checkpoint has trailing bytes: " + file);
    return st;
}

} // namespace

void save_checkpoint(const std::string& file, const CheckpointState& state) {
    if (state.rows.size() != state.accums.size())
        throw IoError("checkpoint state has mismatched rows and accumulators");
    ByteWriter w;
    w.u32(kVersion);
    w.u64(state.config_digest);
    w.u8(state.equilibrated);
    w.u32(state.blocks_done);
    w.u32(static_cast<uint32_t>(state.walkers.size()));
    for (const auto& ws : state.walkers) put_walker(w, ws);
    w.u32(static_cast<uint32_t>(state.rows.size()));
    for (const auto& row : state.rows) put_row(w, row);
    for (const auto& a : state.accums) put_accum(w, a);

    const uint32_t crc = crc_of(w.bytes());
    // Write to a temp name and rename so an interrupted save never leaves a
    // torn checkpoint behind.
    const std::string tmp = file + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint file: " + tmp);
        out.write(kMagic, 4);
        out.write(reinterpret_cast<const char*>(w.bytes().data()),
                  static_cast<std::streamsize>(w.bytes().size()));
        out.write(reinterpret_cast<const char*>(&crc), 4);
        if (!out) throw IoError("short write on checkpoint file: " + tmp);
    }
    std::remove(file.c_str());
    if (std::rename(tmp.c_str(), file.c_str()) != 0)
        throw IoError("cannot move checkpoint into place: " + file);
}

CheckpointState load_checkpoint(const std::string& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint file: " + file);
    std::vector<uint8_t> all((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
    if (all.size() < 8 || std::memcmp(all.data(), kMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + file);
    std::vector<uint8_t> payload(all.begin() + 4, all.end() - 4);
    uint32_t stored;
    std::memcpy(&stored, all.data() + all.size() - 4, 4);
    if (crc_of(payload) != stored)
        throw IoError("checkpoint file failed its checksum: " + file);
    try {
        return parse_checkpoint(payload, file);
    } catch (const std::out_of_range&) {
        throw IoError("checkpoint file truncated: " + file);
    }
}

} // namespace coulpimc

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "coulpimc/estimators.hpp"
#include "coulpimc/link_action.hpp"
#include "coulpimc/pair_action.hpp"
#include "coulpimc/paths.hpp"
#include "coulpimc/sampling.hpp"
#include "coulpimc/system.hpp"

namespace coulpimc {

// ---------------------------------------------------------------------------
// Run configuration: one JSON document describing the system, the sampling
// schedule, table construction, analysis windows and output layout.
// ---------------------------------------------------------------------------
struct RunConfig {
    SystemSpec system;

    // Sampling schedule.
    uint64_t seed = 1;
    int walkers = 4;
    uint64_t equilibration_sweeps = 20000;
    uint64_t measurement_sweeps = 200000;
    uint64_t block_sweeps = 1000;  // must divide measurement_sweeps
    int measure_every = 5;         // sweeps between measurements
    ActionMode action_mode = ActionMode::Pair;
    bool allow_attractive_primitive = false;
    MoveSchedule schedule;
    InitStrategy init = InitStrategy::ThermalGaussian;
    int threads = 1; // walkers run thread-parallel; results independent of this

    // Pair-table construction defaults (q1q2, mu, tau filled per channel).
    PairTableSpec table_defaults;
    std::string table_cache_dir; // "" -> $COULPIMC_TABLE_CACHE -> out_dir/tables

    // Analysis windows.
    double fragment_cutoff = 6.0; // nucleus clustering cutoff, a0
    double contact_r_fit = 0.25;  // contact-density fit window, a0

    // Output layout.
    std::string out_dir = ".";
    std::string label;
    uint64_t checkpoint_every_blocks = 0; // 0 = no periodic checkpoints
};

// Parses and validates a full run configuration document. Unknown keys in
// the run/tables/analysis/output sections are rejected.
RunConfig parse_run_config(const std::string& json_text);

// Digest over everything that influences the Markov chain and accumulated
// data (system, schedule, seed, tables, analysis windows). Output paths,
// thread counts and checkpoint cadence are excluded. Checkpoints refuse to
// resume under a different digest.
uint64_t config_hash(const RunConfig& cfg);

using ProgressFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Pair-table acquisition with an on-disk cache.
// ---------------------------------------------------------------------------
struct TableNote {
    int pair_index = -1;   // index into spec.pairs; -1 for deduplicated alias
    double q1q2 = 0.0, mu = 0.0;
    bool needed = false;   // channel requires a table in this mode
    bool from_cache = false;
    std::string file;
    int l_used = 0;
    double tail_metric = 0.0;
    double seconds = 0.0;  // build time (0 when loaded)
};

struct TableAcquisition {
    std::vector<std::shared_ptr<const PairActionTable>> tables; // aligned with spec.pairs
    std::vector<TableNote> notes;
};

std::string resolve_table_cache_dir(const RunConfig& cfg);

// Loads each required channel table from the cache directory or builds and
// stores it. Channels sharing (q1q2, mu) share one table object.
TableAcquisition acquire_tables(const RunConfig& cfg, ProgressFn progress = {});

// ---------------------------------------------------------------------------
// Results.
// ---------------------------------------------------------------------------
struct BlockRow {
    uint32_t block = 0;
    uint32_t walker = 0;
    uint64_t n_meas = 0;
    double e_th = 0.0;  // block mean, E_H
    double e_vir = 0.0; // block mean, E_H
    uint64_t bis_att = 0, bis_acc = 0;   // this block's move counts
    uint64_t disp_att = 0, disp_acc = 0;
};

struct EnergyEstimate {
    double mean = 0.0;
    double sem = 0.0;
    bool converged = false; // every walker's blocking analysis plateaued
    int blocking_levels = 0;
};

struct RunResult {
    std::vector<BlockRow> rows; // sorted by (block, walker)

    EnergyEstimate e_th, e_vir;
    double virial_gap = 0.0;     // |mean_th - mean_vir|
    double virial_gap_tol = 0.0; // 2 * combined SEM
    bool virial_consistent = false;

    bool has_contact_ep = false, has_contact_ee = false;
    ContactResult contact_ep, contact_ee;
    bool has_bond = false;
    BondResult bond;
    bool has_fragments = false;
    FragmentFractions fragments;

    std::array<Histogram, 4> total_main{}; // indexed by PairKind
    std::array<Histogram, 4> total_fine{}; // EP / EE
    std::array<bool, 4> kind_present{};

    std::vector<TableNote> tables;
    uint64_t table_clamp_total = 0;
    MoveStats move_totals; // measurement phase only
    double seconds = 0.0;
    uint64_t config_digest = 0;
    bool resumed = false;
};

// Runs the NVT simulation described by `cfg`. When `resume_from` names a
// checkpoint file, the run continues from it (the checkpoint's config digest
// and walker count must match) and completes exactly as the uninterrupted
// run would have, bit for bit. Periodic checkpoints are written to
// out_dir/checkpoint.cpck when cfg.checkpoint_every_blocks > 0, plus a final
// one at the end of the run.
RunResult run_nvt(const RunConfig& cfg, const std::string& resume_from = {},
                  ProgressFn progress = {});

// Writes blocks.csv, run.json, gofr.csv and fine.csv into `dir`.
// blocks.csv is a pure function of (config, seed): identical inputs produce
// byte-identical files.
void write_run_outputs(const RunConfig& cfg, const RunResult& res, const std::string& dir);

// ---------------------------------------------------------------------------
// Temperature sweep at fixed tau: one run per requested temperature, each
// with the Trotter number that realizes it. A failed point is recorded and
// skipped; the sweep continues.
// ---------------------------------------------------------------------------
struct SweepPoint {
    double requested_temperature = 0.0; // Kelvin
    int trotter_m = 0;
    double achieved_temperature = 0.0;
    bool ok = false;
    std::string error;
    RunResult result;
};

std::vector<SweepPoint> temperature_sweep(const RunConfig& base,
                                          const std::vector<double>& temperatures,
                                          ProgressFn progress = {});

// Writes sweep.csv plus per-point subdirectories (T<kelvin>/...) under `dir`.
void write_sweep_outputs(const RunConfig& base, const std::vector<SweepPoint>& points,
                         const std::string& dir);

// ---------------------------------------------------------------------------
// Checkpoints (binary, CRC-protected).
// ---------------------------------------------------------------------------
struct WalkerCheckpoint {
    PathConfiguration path;
    uint64_t rng_block = 0;
    uint32_t rng_pos = 0;
    std::vector<double> displace_steps;
    uint8_t tuning_active = 0;
};

struct AccumCheckpoint {
    uint64_t n = 0;
    double e_th_sum = 0.0, e_vir_sum = 0.0;
    std::array<Histogram, 4> main{}, fine{};
    std::array<uint8_t, 4> present{};
    std::array<uint64_t, kFragmentKinds> fragments{};
    uint8_t tracks_fragments = 0;
};

struct CheckpointState {
    uint64_t config_digest = 0;
    uint8_t equilibrated = 0;
    uint32_t blocks_done = 0;
    std::vector<WalkerCheckpoint> walkers;
    std::vector<BlockRow> rows;          // completed blocks, sorted
    std::vector<AccumCheckpoint> accums; // aligned with rows
};

void save_checkpoint(const std::string& file, const CheckpointState& state);
CheckpointState load_checkpoint(const std::string& file);

// ---------------------------------------------------------------------------
// Human-readable snapshot of a path configuration.
// ---------------------------------------------------------------------------
void write_snapshot(std::ostream& os, const PathConfiguration& path, const SystemSpec& spec);
void write_snapshot_file(const std::string& file, const PathConfiguration& path,
                         const SystemSpec& spec);

} // namespace coulpimc

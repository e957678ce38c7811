#include "coulpimc/driver.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "coulpimc/constants.hpp"
#include "coulpimc/errors.hpp"
#include "coulpimc/hash.hpp"

namespace coulpimc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config parsing.
// ---------------------------------------------------------------------------

void reject_unknown(const json& obj, const char* section,
                    std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw ConfigError(std::string("unknown key \"") + it.key() + "\" in the " +
                              section + " section");
    }
}

double num_in(const json& obj, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(std::string("\"") + key + "\" must be a number");
    return v.get<double>();
}

int64_t int_in(const json& obj, const char* key, int64_t fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer())
        throw ConfigError(std::string("\"") + key + "\" must be an integer");
    return v.get<int64_t>();
}

bool bool_in(const json& obj, const char* key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_boolean()) throw ConfigError(std::string("\"") + key + "\" must be a boolean");
    return v.get<bool>();
}

std::string str_in(const json& obj, const char* key, const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_string()) throw ConfigError(std::string("\"") + key + "\" must be a string");
    return v.get<std::string>();
}

void parse_run_section(const json& run, RunConfig& cfg) {
    reject_unknown(run, "run",
                   {"seed", "walkers", "equilibration_sweeps", "measurement_sweeps",
                    "block_sweeps", "measure_every", "action", "allow_attractive_primitive",
                    "bisection_level", "displace_step", "tune_displace", "init", "threads"});
    cfg.seed = static_cast<uint64_t>(int_in(run, "seed", static_cast<int64_t>(cfg.seed)));
    cfg.walkers = static_cast<int>(int_in(run, "walkers", cfg.walkers));
    cfg.equilibration_sweeps = static_cast<uint64_t>(
        int_in(run, "equilibration_sweeps", static_cast<int64_t>(cfg.equilibration_sweeps)));
    cfg.measurement_sweeps = static_cast<uint64_t>(
        int_in(run, "measurement_sweeps", static_cast<int64_t>(cfg.measurement_sweeps)));
    cfg.block_sweeps = static_cast<uint64_t>(
        int_in(run, "block_sweeps", static_cast<int64_t>(cfg.block_sweeps)));
    cfg.measure_every = static_cast<int>(int_in(run, "measure_every", cfg.measure_every));
    const std::string action = str_in(run, "action", "pair");
    if (action == "pair")
        cfg.action_mode = ActionMode::Pair;
    else if (action == "primitive")
        cfg.action_mode = ActionMode::Primitive;
    else
        throw ConfigError("\"action\" must be \"pair\" or \"primitive\", got \"" + action +
                          "\"");
    cfg.allow_attractive_primitive =
        bool_in(run, "allow_attractive_primitive", cfg.allow_attractive_primitive);
    cfg.schedule.bisection_level =
        static_cast<int>(int_in(run, "bisection_level", cfg.schedule.bisection_level));
    cfg.schedule.displace_step = num_in(run, "displace_step", cfg.schedule.displace_step);
    cfg.schedule.tune_displace = bool_in(run, "tune_displace", cfg.schedule.tune_displace);
    const std::string init = str_in(run, "init", "thermal-gaussian");
    if (init == "thermal-gaussian")
        cfg.init = InitStrategy::ThermalGaussian;
    else if (init == "point")
        cfg.init = InitStrategy::Point;
    else
        throw ConfigError("\"init\" must be \"thermal-gaussian\" or \"point\", got \"" + init +
                          "\"");
    cfg.threads = static_cast<int>(int_in(run, "threads", cfg.threads));
}

void parse_tables_section(const json& tb, RunConfig& cfg) {
    reject_unknown(tb, "tables",
                   {"grid_n", "r_min", "r_max", "squarings", "l_max_cap", "tail_target",
                    "level_diagonals", "dudtau_delta", "fit_points", "threads", "cache_dir"});
    auto& d = cfg.table_defaults;
    d.grid_n = static_cast<int>(int_in(tb, "grid_n", d.grid_n));
    d.r_min = num_in(tb, "r_min", d.r_min);
    d.r_max = num_in(tb, "r_max", d.r_max);
    d.squarings = static_cast<int>(int_in(tb, "squarings", d.squarings));
    d.l_max_cap = static_cast<int>(int_in(tb, "l_max_cap", d.l_max_cap));
    d.tail_target = num_in(tb, "tail_target", d.tail_target);
    d.level_diagonals = static_cast<int>(int_in(tb, "level_diagonals", d.level_diagonals));
    d.dudtau_delta = num_in(tb, "dudtau_delta", d.dudtau_delta);
    d.fit_points = static_cast<int>(int_in(tb, "fit_points", d.fit_points));
    d.threads = static_cast<int>(int_in(tb, "threads", d.threads));
    cfg.table_cache_dir = str_in(tb, "cache_dir", cfg.table_cache_dir);
}

void parse_analysis_section(const json& an, RunConfig& cfg) {
    reject_unknown(an, "analysis", {"fragment_cutoff", "contact_r_fit"});
    cfg.fragment_cutoff = num_in(an, "fragment_cutoff", cfg.fragment_cutoff);
    cfg.contact_r_fit = num_in(an, "contact_r_fit", cfg.contact_r_fit);
}

void parse_output_section(const json& out, RunConfig& cfg) {
    reject_unknown(out, "output", {"dir", "label", "checkpoint_every_blocks"});
    cfg.out_dir = str_in(out, "dir", cfg.out_dir);
    cfg.label = str_in(out, "label", cfg.label);
    cfg.checkpoint_every_blocks = static_cast<uint64_t>(
        int_in(out, "checkpoint_every_blocks", static_cast<int64_t>(cfg.checkpoint_every_blocks)));
}

void validate_run_config(const RunConfig& cfg) {
    if (cfg.walkers < 1 || cfg.walkers > 4096)
        throw ConfigError("walkers must be in [1, 4096]");
    if (cfg.block_sweeps < 1) throw ConfigError("block_sweeps must be at least 1");
    if (cfg.measurement_sweeps < 2 * cfg.block_sweeps)
        throw ConfigError("measurement_sweeps must cover at least two blocks");
    if (cfg.measurement_sweeps % cfg.block_sweeps != 0)
        throw ConfigError("block_sweeps must divide measurement_sweeps");
    if (cfg.measure_every < 1 ||
        static_cast<uint64_t>(cfg.measure_every) > cfg.block_sweeps)
        throw ConfigError("measure_every must be in [1, block_sweeps]");
    if (cfg.threads < 0 || cfg.threads > 4096)
        throw ConfigError("threads must be in [0, 4096]");
    if (cfg.schedule.bisection_level < 0 || cfg.schedule.bisection_level > 12)
        throw ConfigError("bisection_level must be in [0, 12]");
    if (!(cfg.schedule.displace_step > 0))
        throw ConfigError("displace_step must be positive");
    if (!(cfg.fragment_cutoff > 0)) throw ConfigError("fragment_cutoff must be positive");
    if (!(cfg.contact_r_fit > 0) ||
        cfg.contact_r_fit > BlockAccumulator::kFineRange)
        throw ConfigError("contact_r_fit must lie inside the fine histogram range");
    if (cfg.checkpoint_every_blocks > 0 && cfg.out_dir.empty())
        throw ConfigError("periodic checkpoints need a non-empty output dir");
}

// Derived seed so each walker's initial configuration differs while staying
// a pure function of (seed, walker).
uint64_t walker_init_seed(uint64_t seed, uint32_t walker) {
    Fnv1a64 h;
    h.update("walker-init");
    h.update_u64(seed);
    h.update_u64(walker);
    return h.digest();
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex_digest(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(doc, "top-level", {"system", "run", "tables", "analysis", "output"});
    if (!doc.contains("system"))
        throw ConfigError("config needs a \"system\" section");

    RunConfig cfg;
    cfg.system = build_system_spec(doc.at("system").dump());
    if (doc.contains("run")) parse_run_section(doc.at("run"), cfg);
    if (doc.contains("tables")) parse_tables_section(doc.at("tables"), cfg);
    if (doc.contains("analysis")) parse_analysis_section(doc.at("analysis"), cfg);
    if (doc.contains("output")) parse_output_section(doc.at("output"), cfg);
    validate_run_config(cfg);
    return cfg;
}

uint64_t config_hash(const RunConfig& cfg) {
    Fnv1a64 h;
    h.update("coulpimc-run-v1");
    const auto& sys = cfg.system;
    h.update_u64(static_cast<uint64_t>(sys.particles.size()));
    for (const auto& p : sys.particles) {
        h.update(p.label);
        h.update_double(p.mass);
        h.update_double(p.charge);
        h.update_u64(static_cast<uint64_t>(p.model));
        h.update_double(p.lambda);
        h.update_u64(p.initial.has_value() ? 1 : 0);
        if (p.initial) {
            h.update_double(p.initial->x);
            h.update_double(p.initial->y);
            h.update_double(p.initial->z);
        }
    }
    h.update_double(sys.box.edge);
    h.update_u64(sys.box.periodic ? 1 : 0);
    h.update_double(sys.discretization.tau);
    h.update_u64(static_cast<uint64_t>(sys.discretization.trotter_m));
    h.update_double(sys.harmonic_k);

    h.update_u64(cfg.seed);
    h.update_u64(static_cast<uint64_t>(cfg.walkers));
    h.update_u64(cfg.equilibration_sweeps);
    h.update_u64(cfg.measurement_sweeps);
    h.update_u64(cfg.block_sweeps);
    h.update_u64(static_cast<uint64_t>(cfg.measure_every));
    h.update_u64(static_cast<uint64_t>(cfg.action_mode));
    h.update_u64(cfg.allow_attractive_primitive ? 1 : 0);
    h.update_u64(static_cast<uint64_t>(cfg.schedule.bisection_level));
    h.update_double(cfg.schedule.displace_step);
    h.update_u64(cfg.schedule.tune_displace ? 1 : 0);
    h.update_u64(static_cast<uint64_t>(cfg.init));

    const auto& d = cfg.table_defaults;
    h.update_u64(static_cast<uint64_t>(d.grid_n));
    h.update_double(d.r_min);
    h.update_double(d.r_max);
    h.update_u64(static_cast<uint64_t>(d.squarings));
    h.update_u64(static_cast<uint64_t>(d.l_max_cap));
    h.update_double(d.tail_target);
    h.update_u64(static_cast<uint64_t>(d.level_diagonals));
    h.update_double(d.dudtau_delta);
    h.update_u64(static_cast<uint64_t>(d.fit_points));
    h.update_u64(d.force_build_null ? 1 : 0);

    h.update_double(cfg.fragment_cutoff);
    h.update_double(cfg.contact_r_fit);
    return h.digest();
}

// ---------------------------------------------------------------------------
// Table acquisition.
// ---------------------------------------------------------------------------

std::string resolve_table_cache_dir(const RunConfig& cfg) {
    if (!cfg.table_cache_dir.empty()) return cfg.table_cache_dir;
    if (const char* env = std::getenv("COULPIMC_TABLE_CACHE"); env && *env) return env;
    return (fs::path(cfg.out_dir.empty() ? "." : cfg.out_dir) / "tables").string();
}

TableAcquisition acquire_tables(const RunConfig& cfg, ProgressFn progress) {
    TableAcquisition out;
    out.tables.resize(cfg.system.pairs.size());
    if (cfg.action_mode != ActionMode::Pair) return out;

    const std::string dir = resolve_table_cache_dir(cfg);
    std::map<std::string, size_t> note_by_stem;
    bool dir_ready = false;

    for (size_t i = 0; i < cfg.system.pairs.size(); ++i) {
        const auto& pc = cfg.system.pairs[i];
        if (pc.q1q2 == 0.0 || pc.lambda_pair == 0.0) continue; // no table needed

        PairTableSpec ts = cfg.table_defaults;
        ts.q1q2 = pc.q1q2;
        ts.mu = pc.mu();
        ts.tau = cfg.system.discretization.tau;
        ts.force_build_null = false;
        const std::string stem = PairActionTable::cache_stem(ts);

        if (auto it = note_by_stem.find(stem); it != note_by_stem.end()) {
            // Another channel with identical physics: share the table.
            out.tables[i] = out.tables[out.notes[it->second].pair_index];
            continue;
        }

        TableNote note;
        note.pair_index = static_cast<int>(i);
        note.q1q2 = ts.q1q2;
        note.mu = ts.mu;
        note.needed = true;
        note.file = (fs::path(dir) / (stem + ".cpt")).string();

        std::shared_ptr<const PairActionTable> table;
        if (fs::exists(note.file)) {
            try {
                auto loaded = PairActionTable::load(note.file);
                const auto close = [](double a, double b) {
                    return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b));
                };
                if (!loaded->is_null() && close(loaded->q1q2(), ts.q1q2) &&
                    close(loaded->mu(), ts.mu) && close(loaded->tau(), ts.tau)) {
                    table = loaded;
                    note.from_cache = true;
                } else if (progress) {
                    progress("table cache entry " + note.file +
                             " does not match the requested channel; rebuilding");
                }
            } catch (const IoError& e) {
                if (progress)
                    progress(std::string("table cache read failed (") + e.what() +
                             "); rebuilding");
            }
        }
        if (!table) {
            if (progress) {
                char buf[160];
                std::snprintf(buf, sizeof buf,
                              "building pair table q1q2=%+.6g mu=%.10g tau=%.6g ...", ts.q1q2,
                              ts.mu, ts.tau);
                progress(buf);
            }
            const auto t0 = std::chrono::steady_clock::now();
            PairActionTable built = build_pair_table(ts);
            note.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (!dir_ready) {
                std::error_code ec;
                fs::create_directories(dir, ec);
                dir_ready = true;
            }
            built.save(note.file);
            table = std::make_shared<const PairActionTable>(std::move(built));
            if (progress) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "  built in %.1f s, %d partial waves",
                              note.seconds, table->l_used());
                progress(buf);
            }
        }
        note.l_used = table->l_used();
        note.tail_metric = table->tail_metric();
        out.tables[i] = table;
        note_by_stem.emplace(stem, out.notes.size());
        out.notes.push_back(std::move(note));
    }
    return out;
}

// ---------------------------------------------------------------------------
// The NVT driver.
// ---------------------------------------------------------------------------

namespace {

struct WalkerRt {
    PathConfiguration path;
    std::unique_ptr<Sampler> sampler;
};

AccumCheckpoint snapshot_accumulator(const BlockAccumulator& acc) {
    AccumCheckpoint s;
    s.n = acc.count();
    s.e_th_sum = acc.e_th_sum();
    s.e_vir_sum = acc.e_vir_sum();
    s.tracks_fragments = acc.tracks_fragments() ? 1 : 0;
    s.fragments = acc.fragments();
    for (PairKind k : {PairKind::PP, PairKind::EP, PairKind::EE}) {
        const auto ki = static_cast<size_t>(k);
        if (!acc.has_kind(k)) continue;
        s.present[ki] = 1;
        s.main[ki] = acc.main_hist(k);
        if (k == PairKind::EP || k == PairKind::EE) s.fine[ki] = acc.fine_hist(k);
    }
    return s;
}

// Runs fn(w) for every walker, possibly thread-parallel. Each walker only
// touches its own slot, so the result is independent of the thread count.
void for_walkers(int n_walkers, int threads, const std::function<void(int)>& fn) {
    const int t = std::min(std::max(1, threads), n_walkers);
    if (t <= 1) {
        for (int w = 0; w < n_walkers; ++w) fn(w);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (int k = 0; k < t; ++k)
        pool.emplace_back([&, k] {
            for (int w = k; w < n_walkers; w += t) fn(w);
        });
    for (auto& th : pool) th.join();
}

void combine_walker_blocking(const std::vector<BlockingResult>& per_walker,
                             EnergyEstimate& out) {
    const size_t w = per_walker.size();
    double mean = 0.0, var = 0.0;
    bool conv = true;
    int levels = 0;
    for (const auto& b : per_walker) {
        mean += b.mean;
        var += b.sem * b.sem;
        conv = conv && b.converged;
        levels = std::max(levels, b.levels);
    }
    out.mean = mean / static_cast<double>(w);
    out.sem = std::sqrt(var) / static_cast<double>(w);
    out.converged = conv;
    out.blocking_levels = levels;
}

void analyze_run(const RunConfig& cfg, const std::vector<BlockRow>& rows,
                 const std::vector<AccumCheckpoint>& accums, RunResult& res) {
    const int W = cfg.walkers;

    // Energy estimates: blocking per walker, then combine the independent
    // chains.
    std::vector<BlockingResult> th(W), vir(W);
    for (int w = 0; w < W; ++w) {
        std::vector<double> s_th, s_vir;
        for (const auto& r : rows)
            if (r.walker == static_cast<uint32_t>(w)) {
                s_th.push_back(r.e_th);
                s_vir.push_back(r.e_vir);
            }
        th[w] = blocking_sem(s_th);
        vir[w] = blocking_sem(s_vir);
    }
    combine_walker_blocking(th, res.e_th);
    combine_walker_blocking(vir, res.e_vir);
    res.virial_gap = std::abs(res.e_th.mean - res.e_vir.mean);
    res.virial_gap_tol =
        2.0 * std::sqrt(res.e_th.sem * res.e_th.sem + res.e_vir.sem * res.e_vir.sem);
    res.virial_consistent = res.virial_gap < res.virial_gap_tol;

    // Histogram totals and per-block collections.
    std::array<std::vector<Histogram>, 4> mains, fines;
    std::vector<std::array<uint64_t, kFragmentKinds>> frag_blocks;
    bool any_fragments = false;
    for (const auto& a : accums) {
        for (size_t k = 0; k < 4; ++k) {
            if (!a.present[k]) continue;
            res.kind_present[k] = true;
            mains[k].push_back(a.main[k]);
            if (res.total_main[k].counts.empty())
                res.total_main[k] = a.main[k];
            else
                res.total_main[k].merge(a.main[k]);
            if (!a.fine[k].counts.empty()) {
                fines[k].push_back(a.fine[k]);
                if (res.total_fine[k].counts.empty())
                    res.total_fine[k] = a.fine[k];
                else
                    res.total_fine[k].merge(a.fine[k]);
            }
        }
        if (a.tracks_fragments) {
            any_fragments = true;
            frag_blocks.push_back(a.fragments);
        }
    }

    const auto ep = static_cast<size_t>(PairKind::EP);
    const auto ee = static_cast<size_t>(PairKind::EE);
    const auto pp = static_cast<size_t>(PairKind::PP);
    if (!fines[ep].empty()) {
        res.has_contact_ep = true;
        res.contact_ep = contact_density(fines[ep], cfg.contact_r_fit);
    }
    if (!fines[ee].empty()) {
        res.has_contact_ee = true;
        res.contact_ee = contact_density(fines[ee], cfg.contact_r_fit);
    }
    if (!mains[pp].empty()) {
        res.has_bond = true;
        res.bond = bond_stats(mains[pp]);
    }
    if (any_fragments) {
        res.has_fragments = true;
        res.fragments = fragment_fractions(frag_blocks);
    }
}

} // namespace

RunResult run_nvt(const RunConfig& cfg, const std::string& resume_from, ProgressFn progress) {
    const auto t_start = std::chrono::steady_clock::now();
    const uint64_t digest = config_hash(cfg);
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };

    TableAcquisition acq = acquire_tables(cfg, progress);
    LinkAction action(cfg.system, cfg.action_mode, acq.tables,
                      cfg.allow_attractive_primitive);

    const int W = cfg.walkers;
    const uint64_t total_blocks = cfg.measurement_sweeps / cfg.block_sweeps;

    std::vector<WalkerRt> wk(W);
    std::vector<BlockRow> rows;
    std::vector<AccumCheckpoint> accums;
    uint64_t blocks_done = 0;
    bool equilibrated = false;
    bool resumed = false;

    if (!resume_from.empty()) {
        CheckpointState st = load_checkpoint(resume_from);
        if (st.config_digest != digest)
            throw ConfigError(
                "checkpoint was written under a different configuration (digest " +
                hex_digest(st.config_digest) + ", expected " + hex_digest(digest) + ")");
        if (static_cast<int>(st.walkers.size()) != W)
            throw ConfigError("checkpoint has " + std::to_string(st.walkers.size()) +
                              " walkers, configuration wants " + std::to_string(W));
        if (st.blocks_done > total_blocks)
            throw ConfigError("checkpoint is further along than this configuration's "
                              "measurement plan");
        for (int w = 0; w < W; ++w) {
            auto& ws = st.walkers[static_cast<size_t>(w)];
            wk[w].path = std::move(ws.path);
            wk[w].sampler = std::make_unique<Sampler>(action, cfg.schedule, cfg.seed,
                                                      static_cast<uint32_t>(w));
            wk[w].sampler->rng().restore(ws.rng_block, ws.rng_pos);
            const int np = cfg.system.n_particles();
            if (static_cast<int>(ws.displace_steps.size()) != np)
                throw ConfigError("checkpoint displace-step count does not match the system");
            for (int p = 0; p < np; ++p)
                wk[w].sampler->set_displace_step(p, ws.displace_steps[static_cast<size_t>(p)]);
            if (!ws.tuning_active) wk[w].sampler->freeze_tuning();
        }
        rows = std::move(st.rows);
        accums = std::move(st.accums);
        blocks_done = st.blocks_done;
        equilibrated = st.equilibrated != 0;
        resumed = true;
        say("resumed from checkpoint: " + std::to_string(blocks_done) + "/" +
            std::to_string(total_blocks) + " blocks done");
    } else {
        for (int w = 0; w < W; ++w) {
            wk[w].path =
                init_paths(cfg.system, walker_init_seed(cfg.seed, static_cast<uint32_t>(w)),
                           cfg.init);
            wk[w].sampler = std::make_unique<Sampler>(action, cfg.schedule, cfg.seed,
                                                      static_cast<uint32_t>(w));
        }
    }

    const std::string ckpt_file =
        (fs::path(cfg.out_dir.empty() ? "." : cfg.out_dir) / "checkpoint.cpck").string();
    auto write_ckpt = [&]() {
        if (cfg.checkpoint_every_blocks == 0) return;
        std::error_code ec;
        fs::create_directories(cfg.out_dir.empty() ? "." : cfg.out_dir, ec);
        CheckpointState st;
        st.config_digest = digest;
        st.equilibrated = equilibrated ? 1 : 0;
        st.blocks_done = static_cast<uint32_t>(blocks_done);
        st.walkers.resize(W);
        for (int w = 0; w < W; ++w) {
            auto& ws = st.walkers[static_cast<size_t>(w)];
            ws.path = wk[w].path;
            ws.rng_block = wk[w].sampler->rng().block_counter();
            ws.rng_pos = wk[w].sampler->rng().block_pos();
            ws.tuning_active = wk[w].sampler->tuning() ? 1 : 0;
            const int np = cfg.system.n_particles();
            ws.displace_steps.resize(np);
            for (int p = 0; p < np; ++p)
                ws.displace_steps[static_cast<size_t>(p)] = wk[w].sampler->displace_step(p);
        }
        st.rows = rows;
        st.accums = accums;
        save_checkpoint(ckpt_file, st);
    };

    if (!equilibrated) {
        say("equilibrating " + std::to_string(W) + " walker(s), " +
            std::to_string(cfg.equilibration_sweeps) + " sweeps each");
        for_walkers(W, cfg.threads, [&](int w) {
            for (uint64_t s = 0; s < cfg.equilibration_sweeps; ++s)
                wk[w].sampler->sweep(wk[w].path);
            wk[w].sampler->freeze_tuning();
            wk[w].sampler->reset_stats();
        });
        equilibrated = true;
        write_ckpt();
    }

    std::vector<BlockRow> block_rows(W);
    std::vector<AccumCheckpoint> block_accums(W);
    for (uint64_t b = blocks_done; b < total_blocks; ++b) {
        for_walkers(W, cfg.threads, [&](int w) {
            const MoveStats before = wk[w].sampler->stats();
            BlockAccumulator acc(cfg.system, cfg.fragment_cutoff);
            for (uint64_t s = 1; s <= cfg.block_sweeps; ++s) {
                wk[w].sampler->sweep(wk[w].path);
                if (s % static_cast<uint64_t>(cfg.measure_every) == 0)
                    acc.measure(wk[w].path, action);
            }
            const MoveStats after = wk[w].sampler->stats();
            BlockRow row;
            row.block = static_cast<uint32_t>(b);
            row.walker = static_cast<uint32_t>(w);
            row.n_meas = acc.count();
            row.e_th = acc.e_th_mean();
            row.e_vir = acc.e_vir_mean();
            row.bis_att = after.bisection_attempts - before.bisection_attempts;
            row.bis_acc = after.bisection_accepts - before.bisection_accepts;
            row.disp_att = after.displace_attempts - before.displace_attempts;
            row.disp_acc = after.displace_accepts - before.displace_accepts;
            block_rows[w] = row;
            block_accums[w] = snapshot_accumulator(acc);
        });
        for (int w = 0; w < W; ++w) {
            rows.push_back(block_rows[w]);
            accums.push_back(std::move(block_accums[w]));
            block_accums[w] = AccumCheckpoint{};
        }
        blocks_done = b + 1;
        if (progress) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "block %llu/%llu  e_th=%.6f  e_vir=%.6f",
                          static_cast<unsigned long long>(blocks_done),
                          static_cast<unsigned long long>(total_blocks),
                          block_rows[0].e_th, block_rows[0].e_vir);
            say(buf);
        }
        if (cfg.checkpoint_every_blocks > 0 && blocks_done % cfg.checkpoint_every_blocks == 0 &&
            blocks_done < total_blocks)
            write_ckpt();
    }
    write_ckpt(); // final state (when checkpointing is enabled)

    RunResult res;
    res.rows = std::move(rows);
    res.config_digest = digest;
    res.resumed = resumed;
    res.tables = acq.notes;
    res.table_clamp_total = action.table_clamp_total();
    for (const auto& r : res.rows) {
        res.move_totals.bisection_attempts += r.bis_att;
        res.move_totals.bisection_accepts += r.bis_acc;
        res.move_totals.displace_attempts += r.disp_att;
        res.move_totals.displace_accepts += r.disp_acc;
    }
    analyze_run(cfg, res.rows, accums, res);
    res.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

// ---------------------------------------------------------------------------
// Output files.
// ---------------------------------------------------------------------------

namespace {

json contact_json(const ContactResult& c) {
    return json{{"value", c.value},
                {"stat_sem", c.stat_sem},
                {"sys_halfspread", c.sys_halfspread},
                {"counts_used", c.counts_used},
                {"enough_counts", c.enough_counts},
                {"r_fit", c.r_fit}};
}

json energy_json(const EnergyEstimate& e) {
    return json{{"mean", e.mean},
                {"sem", e.sem},
                {"converged", e.converged},
                {"blocking_levels", e.blocking_levels}};
}

void write_text_file(const std::string& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file);
    out << text;
    if (!out) throw IoError("short write on " + file);
}

void append_hist_csv(std::string& csv, const Histogram& h, const char* name) {
    csv += "# ";
    csv += name;
    csv += ": total=";
    csv += std::to_string(h.total);
    csv += " overflow=";
    csv += std::to_string(h.overflow);
    csv += "\n";
}

} // namespace

void write_run_outputs(const RunConfig& cfg, const RunResult& res, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir.empty() ? "." : dir, ec);
    const fs::path base(dir.empty() ? "." : dir);

    // blocks.csv — byte-deterministic for a given (config, seed).
    {
        std::string csv = "block,walker,n_meas,e_th,e_vir,bisection_attempts,"
                          "bisection_accepts,displace_attempts,displace_accepts\n";
        for (const auto& r : res.rows) {
            csv += std::to_string(r.block);
            csv += ',';
            csv += std::to_string(r.walker);
            csv += ',';
            csv += std::to_string(r.n_meas);
            csv += ',';
            csv += format_g17(r.e_th);
            csv += ',';
            csv += format_g17(r.e_vir);
            csv += ',';
            csv += std::to_string(r.bis_att);
            csv += ',';
            csv += std::to_string(r.bis_acc);
            csv += ',';
            csv += std::to_string(r.disp_att);
            csv += ',';
            csv += std::to_string(r.disp_acc);
            csv += '\n';
        }
        write_text_file((base / "blocks.csv").string(), csv);
    }

    // Pair-correlation histograms (run totals, shell-normalized).
    auto hist_csv = [&](const std::array<Histogram, 4>& hists, const char* what) {
        std::string csv = "# ";
        csv += what;
        csv += " histograms; density = counts / (total * 4 pi r^2 dr)\n";
        std::vector<size_t> kinds;
        for (size_t k = 0; k < 4; ++k)
            if (res.kind_present[k] && !hists[k].counts.empty()) kinds.push_back(k);
        if (kinds.empty()) return std::string();
        for (size_t k : kinds)
            append_hist_csv(csv, hists[k], to_string(static_cast<PairKind>(k)));
        csv += "r";
        for (size_t k : kinds) {
            csv += ",";
            csv += to_string(static_cast<PairKind>(k));
            csv += "_counts,";
            csv += to_string(static_cast<PairKind>(k));
            csv += "_density";
        }
        csv += "\n";
        const size_t bins = hists[kinds[0]].counts.size();
        for (size_t b = 0; b < bins; ++b) {
            csv += format_g17(hists[kinds[0]].bin_center(b));
            for (size_t k : kinds) {
                const auto& h = hists[k];
                const double r = h.bin_center(b);
                const double dr = h.bin_width();
                const double shell = 4.0 * M_PI * r * r * dr *
                                     static_cast<double>(std::max<uint64_t>(h.total, 1));
                csv += ",";
                csv += std::to_string(h.counts[b]);
                csv += ",";
                csv += format_g17(static_cast<double>(h.counts[b]) / shell);
            }
            csv += "\n";
        }
        return csv;
    };
    if (auto csv = hist_csv(res.total_main, "pair-distance"); !csv.empty())
        write_text_file((base / "gofr.csv").string(), csv);
    if (auto csv = hist_csv(res.total_fine, "short-range pair-distance"); !csv.empty())
        write_text_file((base / "fine.csv").string(), csv);

    // run.json — everything the analysis produced.
    json j;
    j["label"] = cfg.label;
    j["config_digest"] = hex_digest(res.config_digest);
    j["resumed"] = res.resumed;
    j["seconds"] = res.seconds;

    json sys;
    sys["n_particles"] = cfg.system.n_particles();
    sys["quantum"] = cfg.system.quantum_count();
    sys["classical"] = cfg.system.classical_count();
    sys["tau"] = cfg.system.discretization.tau;
    sys["trotter_m"] = cfg.system.discretization.trotter_m;
    sys["beta"] = cfg.system.discretization.beta();
    sys["temperature_K"] = cfg.system.discretization.temperature();
    sys["periodic"] = cfg.system.box.periodic;
    if (cfg.system.box.periodic) {
        sys["box_edge"] = cfg.system.box.edge;
        sys["mass_density_g_cm3"] = mass_density(cfg.system);
    }
    json parts = json::array();
    for (const auto& p : cfg.system.particles)
        parts.push_back(json{{"label", p.label},
                             {"mass", p.mass},
                             {"charge", p.charge},
                             {"model", to_string(p.model)}});
    sys["particles"] = parts;
    j["system"] = sys;

    json run;
    run["seed"] = cfg.seed;
    run["walkers"] = cfg.walkers;
    run["equilibration_sweeps"] = cfg.equilibration_sweeps;
    run["measurement_sweeps"] = cfg.measurement_sweeps;
    run["block_sweeps"] = cfg.block_sweeps;
    run["measure_every"] = cfg.measure_every;
    run["action"] = cfg.action_mode == ActionMode::Pair ? "pair" : "primitive";
    j["run"] = run;

    json energies;
    energies["thermodynamic"] = energy_json(res.e_th);
    energies["virial"] = energy_json(res.e_vir);
    energies["virial_gap"] = res.virial_gap;
    energies["virial_gap_tol"] = res.virial_gap_tol;
    energies["virial_consistent"] = res.virial_consistent;
    j["energy"] = energies;

    json analysis;
    if (res.has_contact_ep) analysis["contact_ep"] = contact_json(res.contact_ep);
    if (res.has_contact_ee) analysis["contact_ee"] = contact_json(res.contact_ee);
    if (res.has_bond)
        analysis["bond"] = json{{"mean", res.bond.mean},
                                {"mean_sem", res.bond.mean_sem},
                                {"fwhm", res.bond.fwhm},
                                {"fwhm_sem", res.bond.fwhm_sem},
                                {"multimodal", res.bond.multimodal}};
    if (res.has_fragments) {
        json fr;
        for (int k = 0; k < kFragmentKinds; ++k)
            fr[fragment_label(static_cast<Fragment>(k))] =
                json{{"fraction", res.fragments.fraction[static_cast<size_t>(k)]},
                     {"sem", res.fragments.sem[static_cast<size_t>(k)]}};
        fr["total_measurements"] = res.fragments.total;
        analysis["fragments"] = fr;
    }
    j["analysis"] = analysis;

    json tables = json::array();
    for (const auto& t : res.tables)
        tables.push_back(json{{"pair_index", t.pair_index},
                              {"q1q2", t.q1q2},
                              {"mu", t.mu},
                              {"file", t.file},
                              {"from_cache", t.from_cache},
                              {"l_used", t.l_used},
                              {"tail_metric", t.tail_metric},
                              {"build_seconds", t.seconds}});
    j["tables"] = tables;
    j["table_clamp_total"] = res.table_clamp_total;

    json moves;
    moves["bisection_attempts"] = res.move_totals.bisection_attempts;
    moves["bisection_rate"] = res.move_totals.bisection_rate();
    moves["displace_attempts"] = res.move_totals.displace_attempts;
    moves["displace_rate"] = res.move_totals.displace_rate();
    j["moves"] = moves;

    write_text_file((base / "run.json").string(), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Temperature sweep.
// ---------------------------------------------------------------------------

namespace {

std::string sweep_dir_name(double temperature) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "T%g", temperature);
    return buf;
}

RunConfig sweep_point_config(const RunConfig& base, double temperature, int trotter_m) {
    RunConfig cfg = base;
    cfg.system.discretization.trotter_m = trotter_m;
    cfg.system.validate();
    cfg.out_dir = (fs::path(base.out_dir.empty() ? "." : base.out_dir) /
                   sweep_dir_name(temperature))
                      .string();
    return cfg;
}

} // namespace

std::vector<SweepPoint> temperature_sweep(const RunConfig& base,
                                          const std::vector<double>& temperatures,
                                          ProgressFn progress) {
    if (temperatures.empty()) throw ConfigError("temperature sweep needs at least one point");
    std::vector<SweepPoint> points;
    points.reserve(temperatures.size());
    for (double T : temperatures) {
        SweepPoint p;
        p.requested_temperature = T;
        try {
            const TrotterResult tr =
                trotter_from_temperature(T, base.system.discretization.tau);
            p.trotter_m = tr.trotter_m;
            p.achieved_temperature = tr.achieved_temperature;
            if (progress) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "sweep point T=%g K -> M=%d (T=%.2f K)", T,
                              tr.trotter_m, tr.achieved_temperature);
                progress(buf);
            }
            const RunConfig cfg = sweep_point_config(base, T, tr.trotter_m);
            p.result = run_nvt(cfg, std::string(), progress);
            p.ok = true;
        } catch (const std::exception& e) {
            p.ok = false;
            p.error = e.what();
            if (progress)
                progress(std::string("sweep point failed (") + e.what() + "); continuing");
        }
        points.push_back(std::move(p));
    }
    return points;
}

void write_sweep_outputs(const RunConfig& base, const std::vector<SweepPoint>& points,
                         const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir.empty() ? "." : dir, ec);
    const fs::path basep(dir.empty() ? "." : dir);

    std::string csv = "requested_T,achieved_T,trotter_m,ok,e_th,e_th_sem,e_vir,e_vir_sem,"
                      "frac_h3p,frac_h3p_sem,error\n";
    json jpoints = json::array();
    for (const auto& p : points) {
        csv += format_g17(p.requested_temperature);
        csv += ',';
        csv += format_g17(p.achieved_temperature);
        csv += ',';
        csv += std::to_string(p.trotter_m);
        csv += ',';
        csv += p.ok ? "1" : "0";
        if (p.ok) {
            csv += ',';
            csv += format_g17(p.result.e_th.mean);
            csv += ',';
            csv += format_g17(p.result.e_th.sem);
            csv += ',';
            csv += format_g17(p.result.e_vir.mean);
            csv += ',';
            csv += format_g17(p.result.e_vir.sem);
            if (p.result.has_fragments) {
                csv += ',';
                csv += format_g17(p.result.fragments.fraction[0]);
                csv += ',';
                csv += format_g17(p.result.fragments.sem[0]);
            } else {
                csv += ",,";
            }
            csv += ",";
        } else {
            csv += ",,,,,,,";
            std::string msg = p.error;
            for (char& c : msg)
                if (c == ',' || c == '\n') c = ';';
            csv += msg;
        }
        csv += '\n';

        json jp;
        jp["requested_T"] = p.requested_temperature;
        jp["achieved_T"] = p.achieved_temperature;
        jp["trotter_m"] = p.trotter_m;
        jp["ok"] = p.ok;
        if (p.ok) {
            jp["e_th"] = energy_json(p.result.e_th);
            jp["e_vir"] = energy_json(p.result.e_vir);
            jp["virial_consistent"] = p.result.virial_consistent;
            if (p.result.has_fragments) {
                json fr;
                for (int k = 0; k < kFragmentKinds; ++k)
                    fr[fragment_label(static_cast<Fragment>(k))] =
                        p.result.fragments.fraction[static_cast<size_t>(k)];
                jp["fragments"] = fr;
            }
            jp["dir"] = sweep_dir_name(p.requested_temperature);
        } else {
            jp["error"] = p.error;
        }
        jpoints.push_back(jp);

        if (p.ok) {
            const RunConfig cfg = sweep_point_config(base, p.requested_temperature, p.trotter_m);
            write_run_outputs(cfg, p.result, cfg.out_dir);
        }
    }
    write_text_file((basep / "sweep.csv").string(), csv);
    json j;
    j["tau"] = base.system.discretization.tau;
    j["points"] = jpoints;
    write_text_file((basep / "sweep.json").string(), j.dump(2) + "\n");
}

} // namespace coulpimc

// pimc — command-line front end for the path-integral Monte Carlo engine.
//
// Subcommands:
//   run       simulate one system and write blocks.csv / run.json / histograms
//   sweep     run a temperature series at fixed imaginary-time step
//   tables    build or verify the pair-action tables a config needs
//   analyze   recompute the error analysis from an existing blocks.csv
//   snapshot  dump a checkpoint's path configuration as text
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 numerical error, 4 I/O error.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "coulpimc/driver.hpp"
#include "coulpimc/errors.hpp"

namespace {

using namespace coulpimc;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig load_config(const std::string& file, const std::string& out_override,
                      int64_t seed_override) {
    RunConfig cfg = parse_run_config(read_file(file));
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    return cfg;
}

ProgressFn stderr_progress(bool quiet) {
    if (quiet) return {};
    return [](const std::string& s) {
        std::fprintf(stderr, "%s\n", s.c_str());
        std::fflush(stderr);
    };
}

int cmd_run(const std::string& config_file, const std::string& out_override,
            int64_t seed_override, const std::string& resume, int64_t checkpoint_every,
            bool quiet) {
    RunConfig cfg = load_config(config_file, out_override, seed_override);
    if (checkpoint_every >= 0)
        cfg.checkpoint_every_blocks = static_cast<uint64_t>(checkpoint_every);
    const RunResult res = run_nvt(cfg, resume, stderr_progress(quiet));
    write_run_outputs(cfg, res, cfg.out_dir);
    std::printf("E_th  = %+.6f +/- %.6f E_H%s\n", res.e_th.mean, res.e_th.sem,
                res.e_th.converged ? "" : "  (blocking not converged)");
    std::printf("E_vir = %+.6f +/- %.6f E_H%s\n", res.e_vir.mean, res.e_vir.sem,
                res.e_vir.converged ? "" : "  (blocking not converged)");
    std::printf("outputs in %s\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_sweep(const std::string& config_file, const std::string& out_override,
              int64_t seed_override, const std::vector<double>& temperatures, bool quiet) {
    const RunConfig base = load_config(config_file, out_override, seed_override);
    const auto points = temperature_sweep(base, temperatures, stderr_progress(quiet));
    write_sweep_outputs(base, points, base.out_dir);
    int failed = 0;
    for (const auto& p : points) {
        if (p.ok)
            std::printf("T=%8.1f K  M=%6d  E_th=%+.6f(%.6f)  E_vir=%+.6f(%.6f)\n",
                        p.achieved_temperature, p.trotter_m, p.result.e_th.mean,
                        p.result.e_th.sem, p.result.e_vir.mean, p.result.e_vir.sem);
        else {
            std::printf("T=%8.1f K  FAILED: %s\n", p.requested_temperature, p.error.c_str());
            ++failed;
        }
    }
    std::printf("sweep outputs in %s (%d/%zu points failed)\n", base.out_dir.c_str(), failed,
                points.size());
    return 0;
}

int cmd_tables(const std::string& config_file, const std::string& out_override,
               bool quiet) {
    const RunConfig cfg = load_config(config_file, out_override, -1);
    if (cfg.action_mode != ActionMode::Pair) {
        std::printf("action mode is primitive; no tables needed\n");
        return 0;
    }
    const TableAcquisition acq = acquire_tables(cfg, stderr_progress(quiet));
    for (const auto& n : acq.notes)
        std::printf("%-10s q1q2=%+.4g mu=%-12.6f l_used=%-3d tail=%.2e  %s\n",
                    n.from_cache ? "cached" : "built", n.q1q2, n.mu, n.l_used, n.tail_metric,
                    n.file.c_str());
    std::printf("%zu unique table(s) for %zu interacting pair(s)\n", acq.notes.size(),
                cfg.system.pairs.size());
    return 0;
}

int cmd_analyze(const std::string& blocks_file) {
    std::ifstream in(blocks_file);
    if (!in) throw IoError("cannot open blocks file: " + blocks_file);
    std::string line;
    if (!std::getline(in, line)) throw IoError("blocks file is empty: " + blocks_file);
    // Expect the header written by `pimc run`.
    if (line.rfind("block,walker,n_meas,e_th,e_vir", 0) != 0)
        throw ConfigError("unrecognized blocks.csv header: " + line);
    struct Row {
        uint32_t walker;
        double e_th, e_vir;
    };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Row r{};
        unsigned block = 0, walker = 0;
        unsigned long long n = 0;
        if (std::sscanf(line.c_str(), "%u,%u,%llu,%lf,%lf", &block, &walker, &n, &r.e_th,
                        &r.e_vir) != 5)
            throw ConfigError("malformed blocks.csv line: " + line);
        r.walker = walker;
        rows.push_back(r);
    }
    if (rows.empty()) throw ConfigError("blocks file has no data rows: " + blocks_file);
    uint32_t walkers = 0;
    for (const auto& r : rows) walkers = std::max(walkers, r.walker + 1);

    double m_th = 0, v_th = 0, m_vir = 0, v_vir = 0;
    bool conv = true;
    for (uint32_t w = 0; w < walkers; ++w) {
        std::vector<double> th, vir;
        for (const auto& r : rows)
            if (r.walker == w) {
                th.push_back(r.e_th);
                vir.push_back(r.e_vir);
            }
        const BlockingResult bt = blocking_sem(th);
        const BlockingResult bv = blocking_sem(vir);
        m_th += bt.mean;
        v_th += bt.sem * bt.sem;
        m_vir += bv.mean;
        v_vir += bv.sem * bv.sem;
        conv = conv && bt.converged && bv.converged;
    }
    m_th /= walkers;
    m_vir /= walkers;
    const double s_th = std::sqrt(v_th) / walkers;
    const double s_vir = std::sqrt(v_vir) / walkers;
    const double gap = std::abs(m_th - m_vir);
    const double tol = 2.0 * std::sqrt(s_th * s_th + s_vir * s_vir);
    std::printf("{\n");
    std::printf("  \"walkers\": %u,\n", walkers);
    std::printf("  \"blocks_per_walker\": %zu,\n", rows.size() / walkers);
    std::printf("  \"e_th\": {\"mean\": %.10g, \"sem\": %.10g},\n", m_th, s_th);
    std::printf("  \"e_vir\": {\"mean\": %.10g, \"sem\": %.10g},\n", m_vir, s_vir);
    std::printf("  \"blocking_converged\": %s,\n", conv ? "true" : "false");
    std::printf("  \"virial_gap\": %.10g,\n", gap);
    std::printf("  \"virial_gap_tol\": %.10g,\n", tol);
    std::printf("  \"virial_consistent\": %s\n", gap < tol ? "true" : "false");
    std::printf("}\n");
    return 0;
}

int cmd_snapshot(const std::string& checkpoint_file, const std::string& config_file,
                 int walker, const std::string& out_file) {
    const RunConfig cfg = load_config(config_file, "", -1);
    const CheckpointState st = load_checkpoint(checkpoint_file);
    if (walker < 0 || walker >= static_cast<int>(st.walkers.size()))
        throw ConfigError("walker index " + std::to_string(walker) +
                          " out of range; checkpoint has " +
                          std::to_string(st.walkers.size()) + " walkers");
    const auto& path = st.walkers[static_cast<size_t>(walker)].path;
    if (out_file.empty() || out_file == "-")
        write_snapshot(std::cout, path, cfg.system);
    else {
        write_snapshot_file(out_file, path, cfg.system);
        std::printf("snapshot of walker %d written to %s\n", walker, out_file.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"path-integral Monte Carlo for small Coulomb systems"};
    app.require_subcommand(1);

    std::string config_file, out_override, resume, blocks_file, checkpoint_file, out_file;
    int64_t seed_override = -1, checkpoint_every = -1;
    bool quiet = false;
    std::vector<double> temperatures;
    int walker = 0;

    auto* run = app.add_subcommand("run", "simulate one system");
    run->add_option("--config", config_file, "run configuration (JSON)")->required();
    run->add_option("--out", out_override, "output directory (overrides config)");
    run->add_option("--seed", seed_override, "master seed (overrides config)");
    run->add_option("--resume", resume, "checkpoint file to continue from");
    run->add_option("--checkpoint-every", checkpoint_every,
                    "write a checkpoint every N blocks (overrides config)");
    run->add_flag("--quiet", quiet, "suppress progress output");

    auto* sweep = app.add_subcommand("sweep", "temperature series at fixed tau");
    sweep->add_option("--config", config_file, "base run configuration (JSON)")->required();
    sweep->add_option("--temperatures", temperatures, "temperatures in Kelvin")
        ->required()
        ->delimiter(',');
    sweep->add_option("--out", out_override, "output directory (overrides config)");
    sweep->add_option("--seed", seed_override, "master seed (overrides config)");
    sweep->add_flag("--quiet", quiet, "suppress progress output");

    auto* tables = app.add_subcommand("tables", "build or verify pair-action tables");
    tables->add_option("--config", config_file, "run configuration (JSON)")->required();
    tables->add_option("--out", out_override,
                       "output directory (sets the default table cache location)");
    tables->add_flag("--quiet", quiet, "suppress progress output");

    auto* analyze = app.add_subcommand("analyze", "re-run the error analysis on a blocks.csv");
    analyze->add_option("--blocks", blocks_file, "blocks.csv from a previous run")->required();

    auto* snapshot = app.add_subcommand("snapshot", "dump a checkpointed path as text");
    snapshot->add_option("--checkpoint", checkpoint_file, "checkpoint file")->required();
    snapshot->add_option("--config", config_file, "run configuration (JSON)")->required();
    snapshot->add_option("--walker", walker, "walker index (default 0)");
    snapshot->add_option("--out", out_file, "output file (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run)
            return cmd_run(config_file, out_override, seed_override, resume, checkpoint_every,
                           quiet);
        if (*sweep)
            return cmd_sweep(config_file, out_override, seed_override, temperatures, quiet);
        if (*tables) return cmd_tables(config_file, out_override, quiet);
        if (*analyze) return cmd_analyze(blocks_file);
        if (*snapshot) return cmd_snapshot(checkpoint_file, config_file, walker, out_file);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}

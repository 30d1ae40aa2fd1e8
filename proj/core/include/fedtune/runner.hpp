#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedtune/config.hpp"
#include "fedtune/engine.hpp"

namespace fedtune {

struct RunnerOptions {
    std::vector<std::uint64_t> seeds;  // overrides config/sweep seeds when non-empty
    unsigned threads = 0;              // 0: FEDTUNE_THREADS env var, else 1
};

/// One planned run of a config or sweep entry.
struct PlannedRun {
    RunSpec spec;        // resolved except for the seed
    std::uint64_t seed = 0;
    std::string group;   // sweep cell label; equals the run name for single runs
    std::string run_id;  // unique per (group, seed); used for file names
};

std::vector<PlannedRun> plan_runs(const ParsedConfig& config,
                                  const std::vector<std::uint64_t>& seed_override);

struct RunArtifacts {
    std::string csv_path;
    std::string manifest_path;
    std::string run_id;
    std::string group;
    std::uint64_t seed = 0;
    RunResult result;
};

/// Executes one planned run and writes `<run_id>.csv` plus
/// `<run_id>.manifest.json` into out_dir. Outputs are written via a temp file
/// and renamed, so failures leave no partial CSV behind.
RunArtifacts execute_run(const PlannedRun& run, const std::string& out_dir,
                         const ExecutionPolicy& exec = {});

/// Runs everything a config file describes. Sweeps additionally get a
/// `sweep_summary.csv` table of final accuracies.
std::vector<RunArtifacts> execute_config(const ParsedConfig& config,
                                         const std::string& out_dir,
                                         const RunnerOptions& options = {});

struct GroupSummary {
    std::string group;
    std::string method;
    std::size_t num_seeds = 0;
    double final_accuracy_mean = 0.0;
    double final_accuracy_std = 0.0;  // population standard deviation
    double mean_final_bytes = 0.0;    // up + down, excluding the initial broadcast
    double mean_final_flops = 0.0;
};

/// Aggregates every manifest in a directory: writes summary.csv (per-group
/// mean +- std of final accuracy over seeds) and budget_curves.csv (per-run
/// running-max accuracy versus cumulative bytes and flops). Throws StateError
/// if the directory holds no runs.
std::vector<GroupSummary> summarize_directory(const std::string& out_dir);

/// Reads back a metrics CSV written by execute_run.
std::vector<RoundRecord> read_metrics_csv(const std::string& path);

unsigned resolve_threads(unsigned requested);

}  // namespace fedtune

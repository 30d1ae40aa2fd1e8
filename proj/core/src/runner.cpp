#include "fedtune/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedtune/errors.hpp"
#include "fedtune/version.hpp"

namespace fedtune {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Decimal floats with 9 significant digits, as emitted into every CSV.
std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string value_token(double v) {
    std::string s = fmt9(v);
    for (char& c : s)
        if (c == '+') c = 'p';
    return s;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StateError("cannot open " + tmp.string() + " for writing");
        out << contents;
        if (!out) throw StateError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string metrics_csv_text(const std::vector<RoundRecord>& records) {
    std::ostringstream out;
    out << "round,test_accuracy,cum_bytes_up,cum_bytes_down,cum_flops,l2_from_start\n";
    for (const RoundRecord& r : records) {
        out << r.round << ',' << fmt9(r.test_accuracy) << ',' << r.cum_bytes_up << ','
            << r.cum_bytes_down << ',' << r.cum_flops << ',' << fmt9(r.l2_from_start)
            << '\n';
    }
    return out.str();
}

}  // namespace

unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("FEDTUNE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    return 1;
}

std::vector<PlannedRun> plan_runs(const ParsedConfig& config,
                                  const std::vector<std::uint64_t>& seed_override) {
    std::vector<PlannedRun> plan;

    if (const auto* run = std::get_if<RunSpec>(&config)) {
        std::vector<std::uint64_t> seeds =
            seed_override.empty() ? std::vector<std::uint64_t>{run->experiment.seed}
                                  : seed_override;
        for (std::uint64_t seed : seeds) {
            PlannedRun p;
            p.spec = *run;
            p.seed = seed;
            p.group = run->name;
            p.run_id = run->name + "-seed" + std::to_string(seed);
            plan.push_back(std::move(p));
        }
        return plan;
    }

    const auto& sweep = std::get<SweepSpec>(config);
    const std::vector<std::uint64_t>& seeds =
        seed_override.empty() ? sweep.seeds : seed_override;

    struct Cell {
        RunSpec spec;
        std::string label;
    };
    std::vector<Cell> cells;
    switch (sweep.axis) {
        case SweepAxis::alpha:
            for (double v : sweep.values) {
                Cell cell{sweep.base, "alpha" + value_token(v)};
                cell.spec.experiment.partition.alpha = v;
                cells.push_back(std::move(cell));
            }
            break;
        case SweepAxis::local_epochs:
            for (double v : sweep.values) {
                Cell cell{sweep.base, "epochs" + value_token(v)};
                cell.spec.experiment.local_epochs = static_cast<std::uint32_t>(v);
                cells.push_back(std::move(cell));
            }
            break;
        case SweepAxis::num_clients:
            for (double v : sweep.values) {
                Cell cell{sweep.base, "clients" + value_token(v)};
                cell.spec.experiment.partition.num_clients = static_cast<std::uint32_t>(v);
                cells.push_back(std::move(cell));
            }
            break;
        case SweepAxis::lr_grid:
            for (double clr : sweep.client_lrs) {
                for (double slr : sweep.server_lrs) {
                    Cell cell{sweep.base,
                              "clr" + value_token(clr) + "-slr" + value_token(slr)};
                    cell.spec.experiment.client_lr = clr;
                    cell.spec.experiment.server_lr = slr;
                    cells.push_back(std::move(cell));
                }
            }
            break;
    }

    for (const Cell& cell : cells) {
        for (std::uint64_t seed : seeds) {
            PlannedRun p;
            p.spec = cell.spec;
            p.seed = seed;
            p.group = cell.spec.name + "-" + cell.label;
            p.run_id = p.group + "-seed" + std::to_string(seed);
            plan.push_back(std::move(p));
        }
    }
    return plan;
}

RunArtifacts execute_run(const PlannedRun& run, const std::string& out_dir,
                         const ExecutionPolicy& exec) {
    fs::create_directories(out_dir);

    RunSpec resolved = run.spec;
    resolved.experiment.seed = run.seed;
    if (!resolved.partition_seed_pinned)
        resolved.experiment.partition.seed = run.seed;

    const auto [train, test] = build_datasets(resolved.dataset);

    RunArtifacts artifacts;
    artifacts.run_id = run.run_id;
    artifacts.group = run.group;
    artifacts.seed = run.seed;
    artifacts.result = run_experiment(resolved.experiment, train, test, exec);

    const fs::path csv_path = fs::path(out_dir) / (run.run_id + ".csv");
    write_file_atomic(csv_path, metrics_csv_text(artifacts.result.records));
    artifacts.csv_path = csv_path.string();

    // The manifest pins everything that affects results: the fully resolved
    // config (defaults included) plus derived dataset and model facts.
    json manifest;
    manifest["artifact_version"] = std::string(kArtifactVersion);
    manifest["run_id"] = run.run_id;
    manifest["group"] = run.group;
    manifest["method"] = std::string(to_string(resolved.experiment.method));
    manifest["seed"] = run.seed;
    {
        RunSpec pinned = resolved;
        pinned.partition_seed_pinned = true;  // record the seed actually used
        manifest["config"] = json::parse(serialize_config(pinned));
    }
    manifest["dataset_summary"] = {{"train_samples", train.size()},
                                   {"test_samples", test.size()},
                                   {"dim", train.dim},
                                   {"classes", train.num_classes}};
    manifest["model"] = {
        {"param_count", artifacts.result.final_params.param_count()},
        {"head_param_count", artifacts.result.final_params.head_param_count()},
        {"forward_flops_per_sample",
         CostModel::for_model(artifacts.result.final_params).forward_flops()}};
    manifest["initial_model_bytes_down"] = artifacts.result.ledger.initial_model_bytes_down;
    manifest["csv"] = csv_path.filename().string();

    const fs::path manifest_path = fs::path(out_dir) / (run.run_id + ".manifest.json");
    write_file_atomic(manifest_path, manifest.dump(2) + "\n");
    artifacts.manifest_path = manifest_path.string();
    return artifacts;
}

std::vector<RunArtifacts> execute_config(const ParsedConfig& config,
                                         const std::string& out_dir,
                                         const RunnerOptions& options) {
    const std::vector<PlannedRun> plan = plan_runs(config, options.seeds);
    ExecutionPolicy exec{resolve_threads(options.threads)};

    std::vector<RunArtifacts> results;
    results.reserve(plan.size());
    for (const PlannedRun& run : plan) results.push_back(execute_run(run, out_dir, exec));

    if (std::holds_alternative<SweepSpec>(config)) {
        std::ostringstream table;
        table << "run_id,group,seed,final_accuracy\n";
        for (const RunArtifacts& r : results)
            table << r.run_id << ',' << r.group << ',' << r.seed << ','
                  << fmt9(r.result.records.back().test_accuracy) << '\n';
        write_file_atomic(fs::path(out_dir) / "sweep_summary.csv", table.str());
    }
    return results;
}

std::vector<RoundRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError(path + ": cannot open metrics file");
    std::string line;
    if (!std::getline(in, line)) throw LoadError(path + ": empty metrics file");

    std::vector<RoundRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        RoundRecord r;
        unsigned long long round = 0, up = 0, down = 0, flops = 0;
        double acc = 0.0, l2 = 0.0;
        if (std::sscanf(line.c_str(), "%llu,%lf,%llu,%llu,%llu,%lf", &round, &acc, &up,
                        &down, &flops, &l2) != 6)
            throw LoadError(path + ": malformed metrics row '" + line + "'");
        r.round = static_cast<std::uint32_t>(round);
        r.test_accuracy = acc;
        r.cum_bytes_up = up;
        r.cum_bytes_down = down;
        r.cum_flops = flops;
        r.l2_from_start = l2;
        records.push_back(r);
    }
    if (records.empty()) throw LoadError(path + ": no metric rows");
    return records;
}

std::vector<GroupSummary> summarize_directory(const std::string& out_dir) {
    struct RunInfo {
        std::string run_id;
        std::string group;
        std::string method;
        std::vector<RoundRecord> records;
    };

    std::vector<RunInfo> runs;
    if (fs::is_directory(out_dir)) {
        std::vector<fs::path> manifest_paths;
        for (const auto& entry : fs::directory_iterator(out_dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string name = entry.path().filename().string();
            if (name.size() > 14 && name.ends_with(".manifest.json"))
                manifest_paths.push_back(entry.path());
        }
        std::sort(manifest_paths.begin(), manifest_paths.end());
        for (const fs::path& mp : manifest_paths) {
            std::ifstream in(mp);
            json manifest = json::parse(in, nullptr, true);
            RunInfo info;
            info.run_id = manifest.at("run_id").get<std::string>();
            info.group = manifest.at("group").get<std::string>();
            info.method = manifest.at("method").get<std::string>();
            info.records =
                read_metrics_csv((fs::path(out_dir) / manifest.at("csv").get<std::string>())
                                     .string());
            runs.push_back(std::move(info));
        }
    }
    if (runs.empty())
        throw StateError(out_dir + ": no run manifests found, nothing to summarize");

    std::map<std::string, std::vector<const RunInfo*>> groups;
    for (const RunInfo& run : runs) groups[run.group].push_back(&run);

    std::vector<GroupSummary> summaries;
    for (const auto& [group, members] : groups) {
        GroupSummary s;
        s.group = group;
        s.method = members.front()->method;
        s.num_seeds = members.size();
        double sum = 0.0, sum_bytes = 0.0, sum_flops = 0.0;
        for (const RunInfo* run : members) {
            const RoundRecord& last = run->records.back();
            sum += last.test_accuracy;
            sum_bytes += static_cast<double>(last.cum_bytes_up + last.cum_bytes_down);
            sum_flops += static_cast<double>(last.cum_flops);
        }
        const double n = static_cast<double>(members.size());
        s.final_accuracy_mean = sum / n;
        double var = 0.0;
        for (const RunInfo* run : members) {
            const double d = run->records.back().test_accuracy - s.final_accuracy_mean;
            var += d * d;
        }
        s.final_accuracy_std = std::sqrt(var / n);  // population convention
        s.mean_final_bytes = sum_bytes / n;
        s.mean_final_flops = sum_flops / n;
        summaries.push_back(std::move(s));
    }

    std::ostringstream table;
    table << "group,method,num_seeds,final_accuracy_mean,final_accuracy_std,"
             "mean_final_bytes,mean_final_flops\n";
    for (const GroupSummary& s : summaries)
        table << s.group << ',' << s.method << ',' << s.num_seeds << ','
              << fmt9(s.final_accuracy_mean) << ',' << fmt9(s.final_accuracy_std) << ','
              << fmt9(s.mean_final_bytes) << ',' << fmt9(s.mean_final_flops) << '\n';
    write_file_atomic(fs::path(out_dir) / "summary.csv", table.str());

    std::ostringstream curves;
    curves << "run_id,axis,budget,best_accuracy\n";
    for (const RunInfo& run : runs) {
        for (const auto axis : {CostAxis::bytes, CostAxis::flops}) {
            const char* axis_name = axis == CostAxis::bytes ? "bytes" : "flops";
            for (const BudgetPoint& p : budget_curve(run.records, axis))
                curves << run.run_id << ',' << axis_name << ',' << fmt9(p.budget) << ','
                       << fmt9(p.best_accuracy) << '\n';
        }
    }
    write_file_atomic(fs::path(out_dir) / "budget_curves.csv", curves.str());

    return summaries;
}

}  // namespace fedtune

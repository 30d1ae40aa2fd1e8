#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedtune/config.hpp"
#include "fedtune/errors.hpp"
#include "fedtune/runner.hpp"
#include "fedtune/version.hpp"

int main(int argc, char** argv) {
    CLI::App app{"fedtune: federated transfer-learning experiments with exact "
                 "class-mean head construction"};
    app.set_version_flag("--version", std::string(fedtune::kArtifactVersion));

    bool print_defaults = false;
    app.add_flag("--print-defaults", print_defaults,
                 "Print the default-filled run config and exit");

    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::uint64_t> seeds;
    CLI::App* run_cmd = app.add_subcommand("run", "Execute a run or sweep config");
    run_cmd->add_option("config", config_path, "JSON config file")->required();
    run_cmd->add_option("--out", out_dir, "Output directory (default: out)");
    run_cmd->add_option("--seeds", seeds, "Override seeds, e.g. --seeds 1,2,3")
        ->delimiter(',');

    std::string summarize_dir_path;
    CLI::App* summarize_cmd =
        app.add_subcommand("summarize", "Aggregate the runs in a directory");
    summarize_cmd->add_option("dir", summarize_dir_path, "Directory holding run outputs")
        ->required();

    CLI11_PARSE(app, argc, argv);

    if (print_defaults) {
        std::cout << fedtune::default_config_listing();
        return 0;
    }

    try {
        if (run_cmd->parsed()) {
            const fedtune::ParsedConfig config = fedtune::parse_config(config_path);
            fedtune::RunnerOptions options;
            options.seeds = seeds;
            const auto results = fedtune::execute_config(config, out_dir, options);
            for (const auto& r : results)
                std::cout << r.run_id << ": final_accuracy="
                          << r.result.records.back().test_accuracy << " -> " << r.csv_path
                          << "\n";
            return 0;
        }
        if (summarize_cmd->parsed()) {
            const auto summaries = fedtune::summarize_directory(summarize_dir_path);
            for (const auto& s : summaries)
                std::cout << s.group << " (" << s.method << ", " << s.num_seeds
                          << " seeds): " << s.final_accuracy_mean << " +- "
                          << s.final_accuracy_std << "\n";
            std::cout << "wrote summary.csv and budget_curves.csv in "
                      << summarize_dir_path << "\n";
            return 0;
        }
    } catch (const fedtune::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    std::cerr << app.help();
    return 1;
}

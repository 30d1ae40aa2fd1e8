#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fedtune/engine.hpp"

namespace fedtune {

/// Synthetic data source: one Gaussian mixture is generated and split
/// per class into per_class train and test_per_class test samples, so both
/// splits share class means. The dataset seed is independent of the run seed
/// (real datasets do not change between repetitions).
struct SyntheticDataSpec {
    std::uint32_t classes = 10;
    std::size_t dim = 16;
    std::size_t per_class = 100;
    std::size_t test_per_class = 50;
    double class_sep = 4.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 1234;
};

struct CsvDataSpec {
    std::string train_path;
    std::string test_path;
};

struct DatasetSpec {
    std::variant<SyntheticDataSpec, CsvDataSpec> source = SyntheticDataSpec{};
};

/// One declarative run: experiment settings plus the data source. When the
/// partition seed is not pinned in the config it follows the run seed.
struct RunSpec {
    std::string name = "run";
    ExperimentConfig experiment;
    DatasetSpec dataset;
    bool partition_seed_pinned = false;
};

enum class SweepAxis { alpha, local_epochs, num_clients, lr_grid };

struct SweepSpec {
    RunSpec base;
    SweepAxis axis = SweepAxis::alpha;
    std::vector<double> values;      // alpha / local_epochs / num_clients
    std::vector<double> client_lrs;  // lr_grid only
    std::vector<double> server_lrs;  // lr_grid only
    std::vector<std::uint64_t> seeds;
};

using ParsedConfig = std::variant<RunSpec, SweepSpec>;

/// Parses and validates a config file. Unknown keys are rejected; range
/// violations throw ConfigError naming the key.
ParsedConfig parse_config(const std::string& path);
ParsedConfig parse_config_text(const std::string& text);

/// Canonical JSON serialization with every default made explicit;
/// parse(serialize(x)) reproduces x.
std::string serialize_config(const RunSpec& spec);
std::string serialize_config(const SweepSpec& spec);

/// The default-filled config printed by --print-defaults.
std::string default_config_listing();

/// Materializes the train/test datasets described by the spec.
std::pair<Dataset, Dataset> build_datasets(const DatasetSpec& spec);

}  // namespace fedtune

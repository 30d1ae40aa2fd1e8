#include "fedtune/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedtune/errors.hpp"

namespace fedtune {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& message) {
    throw ConfigError(key, "config error at '" + key + "': " + message);
}

void check_keys(const json& obj, const std::string& scope,
                std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known) fail(scope.empty() ? key : scope + "." + key, "unknown key");
    }
}

std::string join_key(const std::string& scope, const char* key) {
    return scope.empty() ? key : scope + "." + key;
}

double get_number(const json& obj, const std::string& scope, const char* key,
                  double fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) fail(join_key(scope, key), "expected a number");
    return v.get<double>();
}

std::uint64_t get_count(const json& obj, const std::string& scope, const char* key,
                        std::uint64_t fallback, std::uint64_t min_value = 0) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    std::uint64_t value = 0;
    if (v.is_number_unsigned())
        value = v.get<std::uint64_t>();
    else if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        value = static_cast<std::uint64_t>(v.get<std::int64_t>());
    else
        fail(join_key(scope, key), "expected a non-negative integer");
    if (value < min_value)
        fail(join_key(scope, key), "must be at least " + std::to_string(min_value));
    return value;
}

std::string get_string(const json& obj, const std::string& scope, const char* key,
                       const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_string()) fail(join_key(scope, key), "expected a string");
    return v.get<std::string>();
}

Method parse_method(const std::string& s) {
    if (s == "random") return Method::random_init;
    if (s == "ft") return Method::finetune;
    if (s == "lp") return Method::linear_probe;
    if (s == "fedncm") return Method::fedncm;
    if (s == "fedncm_ft") return Method::fedncm_finetune;
    fail("method", "must be one of random, ft, lp, fedncm, fedncm_ft (got '" + s + "')");
}

ServerOpt parse_server_opt(const std::string& s) {
    if (s == "fedavg") return ServerOpt::fedavg;
    if (s == "fedadam") return ServerOpt::fedadam;
    fail("server_opt", "must be fedavg or fedadam (got '" + s + "')");
}

Activation parse_activation(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    fail("backbone.activation", "must be identity, relu, or tanh (got '" + s + "')");
}

std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

PartitionSpec parse_partition(const json& obj, bool& seed_pinned) {
    check_keys(obj, "partition", {"num_clients", "alpha", "seed"});
    PartitionSpec spec;
    spec.num_clients = static_cast<std::uint32_t>(
        get_count(obj, "partition", "num_clients", 10, 1));
    spec.alpha = get_number(obj, "partition", "alpha", 0.1);
    if (!(spec.alpha > 0.0) || !std::isfinite(spec.alpha))
        fail("partition.alpha", "must be a positive finite number");
    seed_pinned = obj.contains("seed");
    spec.seed = get_count(obj, "partition", "seed", 0);
    return spec;
}

BackboneSpec parse_backbone(const json& obj) {
    check_keys(obj, "backbone", {"widths", "activation", "init", "init_seed", "init_file"});
    BackboneSpec spec;
    if (obj.contains("widths")) {
        const json& widths = obj.at("widths");
        if (!widths.is_array()) fail("backbone.widths", "expected an array of widths");
        spec.widths.clear();
        for (const json& w : widths) {
            if (!w.is_number_integer() || w.get<std::int64_t>() < 1)
                fail("backbone.widths", "widths must be positive integers");
            spec.widths.push_back(w.get<std::size_t>());
        }
    }
    spec.activation = parse_activation(get_string(obj, "backbone", "activation", "tanh"));
    const std::string init = get_string(obj, "backbone", "init", "random");
    if (init == "random") {
        spec.init.kind = BackboneInit::Kind::random;
        spec.init.seed = get_count(obj, "backbone", "init_seed", 12345);
    } else if (init == "file") {
        spec.init.kind = BackboneInit::Kind::file;
        spec.init.path = get_string(obj, "backbone", "init_file", "");
        if (spec.init.path.empty()) fail("backbone.init_file", "required when init is 'file'");
    } else {
        fail("backbone.init", "must be 'random' or 'file' (got '" + init + "')");
    }
    return spec;
}

DatasetSpec parse_dataset(const json& obj) {
    const std::string type = get_string(obj, "dataset", "type", "synthetic");
    DatasetSpec spec;
    if (type == "synthetic") {
        check_keys(obj, "dataset",
                   {"type", "classes", "dim", "per_class", "test_per_class", "class_sep",
                    "noise_sigma", "seed"});
        SyntheticDataSpec s;
        s.classes = static_cast<std::uint32_t>(get_count(obj, "dataset", "classes", 10, 2));
        s.dim = get_count(obj, "dataset", "dim", 16, 2);
        s.per_class = get_count(obj, "dataset", "per_class", 100, 1);
        s.test_per_class = get_count(obj, "dataset", "test_per_class", 50, 1);
        s.class_sep = get_number(obj, "dataset", "class_sep", 4.0);
        if (!(s.class_sep > 0.0)) fail("dataset.class_sep", "must be positive");
        s.noise_sigma = get_number(obj, "dataset", "noise_sigma", 1.0);
        if (s.noise_sigma < 0.0) fail("dataset.noise_sigma", "must be non-negative");
        s.seed = get_count(obj, "dataset", "seed", 1234);
        spec.source = s;
    } else if (type == "csv") {
        check_keys(obj, "dataset", {"type", "train", "test"});
        CsvDataSpec s;
        s.train_path = get_string(obj, "dataset", "train", "");
        s.test_path = get_string(obj, "dataset", "test", "");
        if (s.train_path.empty()) fail("dataset.train", "required for csv datasets");
        if (s.test_path.empty()) fail("dataset.test", "required for csv datasets");
        spec.source = s;
    } else {
        fail("dataset.type", "must be 'synthetic' or 'csv' (got '" + type + "')");
    }
    return spec;
}

RunSpec parse_run(const json& obj) {
    check_keys(obj, "",
               {"name", "method", "server_opt", "rounds", "local_epochs", "batch_size",
                "participation", "client_lr", "server_lr", "adam_beta1", "adam_beta2",
                "adam_eps", "seed", "partition", "backbone", "dataset"});
    if (!obj.contains("method")) fail("method", "required key is missing");
    if (!obj.contains("dataset")) fail("dataset", "required key is missing");

    RunSpec spec;
    spec.name = get_string(obj, "", "name", "run");
    ExperimentConfig& e = spec.experiment;
    e.method = parse_method(get_string(obj, "", "method", ""));
    e.server_opt = parse_server_opt(get_string(obj, "", "server_opt", "fedavg"));
    e.rounds = static_cast<std::uint32_t>(get_count(obj, "", "rounds", 20));
    e.local_epochs = static_cast<std::uint32_t>(get_count(obj, "", "local_epochs", 1, 1));
    e.batch_size = static_cast<std::uint32_t>(get_count(obj, "", "batch_size", 32, 1));
    e.participation = get_number(obj, "", "participation", 1.0);
    if (!(e.participation > 0.0) || e.participation > 1.0)
        fail("participation", "must be in (0, 1]");
    e.client_lr = get_number(obj, "", "client_lr", 0.01);
    if (e.client_lr < 0.0 || !std::isfinite(e.client_lr))
        fail("client_lr", "must be finite and non-negative");
    e.server_lr = get_number(obj, "", "server_lr", 1.0);
    if (!(e.server_lr > 0.0) || !std::isfinite(e.server_lr))
        fail("server_lr", "must be finite and positive");
    e.adam_beta1 = get_number(obj, "", "adam_beta1", 0.9);
    if (e.adam_beta1 < 0.0 || e.adam_beta1 >= 1.0) fail("adam_beta1", "must be in [0, 1)");
    e.adam_beta2 = get_number(obj, "", "adam_beta2", 0.999);
    if (e.adam_beta2 < 0.0 || e.adam_beta2 >= 1.0) fail("adam_beta2", "must be in [0, 1)");
    e.adam_eps = get_number(obj, "", "adam_eps", 1e-8);
    if (!(e.adam_eps > 0.0)) fail("adam_eps", "must be positive");
    e.seed = get_count(obj, "", "seed", 1);
    if (obj.contains("partition"))
        e.partition = parse_partition(obj.at("partition"), spec.partition_seed_pinned);
    else {
        bool pinned = false;
        e.partition = parse_partition(json::object(), pinned);
    }
    if (obj.contains("backbone"))
        e.backbone = parse_backbone(obj.at("backbone"));
    spec.dataset = parse_dataset(obj.at("dataset"));
    return spec;
}

SweepAxis parse_axis(const std::string& s) {
    if (s == "alpha") return SweepAxis::alpha;
    if (s == "local_epochs") return SweepAxis::local_epochs;
    if (s == "num_clients") return SweepAxis::num_clients;
    if (s == "lr_grid") return SweepAxis::lr_grid;
    fail("sweep.axis", "must be alpha, local_epochs, num_clients, or lr_grid (got '" + s + "')");
}

std::vector<double> parse_value_list(const json& obj, const std::string& scope,
                                     const char* key) {
    if (!obj.contains(key)) fail(join_key(scope, key), "required key is missing");
    const json& arr = obj.at(key);
    if (!arr.is_array() || arr.empty())
        fail(join_key(scope, key), "expected a non-empty array");
    std::vector<double> values;
    for (const json& v : arr) {
        if (!v.is_number()) fail(join_key(scope, key), "expected numbers");
        values.push_back(v.get<double>());
    }
    return values;
}

SweepSpec parse_sweep(const json& obj) {
    check_keys(obj, "", {"base", "sweep"});
    if (!obj.contains("base")) fail("base", "required key is missing");
    SweepSpec spec;
    spec.base = parse_run(obj.at("base"));

    const json& sweep = obj.at("sweep");
    spec.axis = parse_axis(get_string(sweep, "sweep", "axis", ""));
    if (spec.axis == SweepAxis::lr_grid) {
        check_keys(sweep, "sweep", {"axis", "client_lrs", "server_lrs", "seeds"});
        spec.client_lrs = parse_value_list(sweep, "sweep", "client_lrs");
        spec.server_lrs = parse_value_list(sweep, "sweep", "server_lrs");
    } else {
        check_keys(sweep, "sweep", {"axis", "values", "seeds"});
        spec.values = parse_value_list(sweep, "sweep", "values");
        const bool integral_axis = spec.axis != SweepAxis::alpha;
        for (double v : spec.values) {
            if (spec.axis == SweepAxis::alpha && !(v > 0.0))
                fail("sweep.values", "alpha values must be positive");
            if (integral_axis && (v < 1.0 || v != std::floor(v)))
                fail("sweep.values", "values for this axis must be positive integers");
        }
    }
    if (sweep.contains("seeds")) {
        const json& seeds = sweep.at("seeds");
        if (!seeds.is_array() || seeds.empty())
            fail("sweep.seeds", "expected a non-empty array");
        for (const json& s : seeds) {
            if (!s.is_number_integer() || s.get<std::int64_t>() < 0)
                fail("sweep.seeds", "seeds must be non-negative integers");
            spec.seeds.push_back(s.get<std::uint64_t>());
        }
    } else {
        spec.seeds = {spec.base.experiment.seed};
    }
    return spec;
}

json to_json(const RunSpec& spec) {
    const ExperimentConfig& e = spec.experiment;
    json obj;
    obj["name"] = spec.name;
    obj["method"] = std::string(to_string(e.method));
    obj["server_opt"] = std::string(to_string(e.server_opt));
    obj["rounds"] = e.rounds;
    obj["local_epochs"] = e.local_epochs;
    obj["batch_size"] = e.batch_size;
    obj["participation"] = e.participation;
    obj["client_lr"] = e.client_lr;
    obj["server_lr"] = e.server_lr;
    obj["adam_beta1"] = e.adam_beta1;
    obj["adam_beta2"] = e.adam_beta2;
    obj["adam_eps"] = e.adam_eps;
    obj["seed"] = e.seed;

    json partition;
    partition["num_clients"] = e.partition.num_clients;
    partition["alpha"] = e.partition.alpha;
    if (spec.partition_seed_pinned) partition["seed"] = e.partition.seed;
    obj["partition"] = partition;

    json backbone;
    backbone["widths"] = e.backbone.widths;
    backbone["activation"] = std::string(activation_name(e.backbone.activation));
    if (e.backbone.init.kind == BackboneInit::Kind::random) {
        backbone["init"] = "random";
        backbone["init_seed"] = e.backbone.init.seed;
    } else {
        backbone["init"] = "file";
        backbone["init_file"] = e.backbone.init.path;
    }
    obj["backbone"] = backbone;

    json dataset;
    if (const auto* synth = std::get_if<SyntheticDataSpec>(&spec.dataset.source)) {
        dataset["type"] = "synthetic";
        dataset["classes"] = synth->classes;
        dataset["dim"] = synth->dim;
        dataset["per_class"] = synth->per_class;
        dataset["test_per_class"] = synth->test_per_class;
        dataset["class_sep"] = synth->class_sep;
        dataset["noise_sigma"] = synth->noise_sigma;
        dataset["seed"] = synth->seed;
    } else {
        const auto& csv = std::get<CsvDataSpec>(spec.dataset.source);
        dataset["type"] = "csv";
        dataset["train"] = csv.train_path;
        dataset["test"] = csv.test_path;
    }
    obj["dataset"] = dataset;
    return obj;
}

json to_json(const SweepSpec& spec) {
    json obj;
    obj["base"] = to_json(spec.base);
    json sweep;
    switch (spec.axis) {
        case SweepAxis::alpha: sweep["axis"] = "alpha"; break;
        case SweepAxis::local_epochs: sweep["axis"] = "local_epochs"; break;
        case SweepAxis::num_clients: sweep["axis"] = "num_clients"; break;
        case SweepAxis::lr_grid: sweep["axis"] = "lr_grid"; break;
    }
    if (spec.axis == SweepAxis::lr_grid) {
        sweep["client_lrs"] = spec.client_lrs;
        sweep["server_lrs"] = spec.server_lrs;
    } else {
        sweep["values"] = spec.values;
    }
    sweep["seeds"] = spec.seeds;
    obj["sweep"] = sweep;
    return obj;
}

}  // namespace

ParsedConfig parse_config_text(const std::string& text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ConfigError("", "config must be a JSON object");
    if (obj.contains("sweep")) return parse_sweep(obj);
    return parse_run(obj);
}

ParsedConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError(path + ": cannot open config file");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

std::string serialize_config(const RunSpec& spec) { return to_json(spec).dump(2) + "\n"; }

std::string serialize_config(const SweepSpec& spec) { return to_json(spec).dump(2) + "\n"; }

std::string default_config_listing() {
    // Route through the parser so the listing is exactly what a minimal
    // config gets filled with.
    const ParsedConfig defaults =
        parse_config_text(R"({"method":"fedncm","dataset":{"type":"synthetic"}})");
    return serialize_config(std::get<RunSpec>(defaults));
}

std::pair<Dataset, Dataset> build_datasets(const DatasetSpec& spec) {
    if (const auto* synth = std::get_if<SyntheticDataSpec>(&spec.source)) {
        const Dataset all = generate_gaussian_mixture(
            synth->classes, synth->dim, synth->per_class + synth->test_per_class,
            synth->class_sep, synth->noise_sigma, synth->seed);
        return split_per_class(all, synth->per_class);
    }
    const auto& csv = std::get<CsvDataSpec>(spec.source);
    Dataset train = load_embeddings(csv.train_path);
    Dataset test = load_embeddings(csv.test_path);
    if (train.dim != test.dim || train.num_classes != test.num_classes)
        throw LoadError("train/test embedding files disagree on dim or classes");
    return {std::move(train), std::move(test)};
}

}  // namespace fedtune

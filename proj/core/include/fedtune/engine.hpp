#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "fedtune/costs.hpp"
#include "fedtune/data.hpp"
#include "fedtune/model.hpp"
#include "fedtune/rng.hpp"

namespace fedtune {

/// Training pipelines:
///  - random_init:      train everything from a random model
///  - finetune:         train everything from the pretrained/seeded backbone
///  - linear_probe:     train only the head on the frozen backbone
///  - fedncm:           one-shot exact class-mean head, no training rounds
///  - fedncm_finetune:  fedncm head initialization, then full fine-tuning
enum class Method { random_init, finetune, linear_probe, fedncm, fedncm_finetune };

enum class ServerOpt { fedavg, fedadam };

std::string_view to_string(Method method);
std::string_view to_string(ServerOpt opt);

/// Which parameters the method trains.
TrainMode train_mode(Method method);

struct ExperimentConfig {
    Method method = Method::fedncm;
    ServerOpt server_opt = ServerOpt::fedavg;
    std::uint32_t rounds = 20;
    std::uint32_t local_epochs = 1;
    std::uint32_t batch_size = 32;
    double participation = 1.0;
    double client_lr = 0.01;
    double server_lr = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    PartitionSpec partition;
    BackboneSpec backbone;
    std::uint64_t seed = 1;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

struct ServerState {
    ModelParams global_params;
    std::vector<double> adam_m;  // fedadam first moments (trainable length)
    std::vector<double> adam_v;  // fedadam second moments
    std::uint32_t round_index = 0;
};

struct ClientDelta {
    std::uint32_t client_id = 0;
    std::uint64_t num_samples = 0;
    std::vector<double> delta;
};

/// How client work within a round is scheduled. Results are byte-identical
/// for any thread count: per-client RNG streams are keyed (seed, round,
/// client_id) and the server reduces in ascending client_id order.
struct ExecutionPolicy {
    unsigned threads = 1;
};

/// Uniform sample without replacement of max(1, round(participation * K_nonempty))
/// non-empty clients, drawn from the stream keyed (seed, "client-sampling",
/// round). Returns ascending ids.
std::vector<std::uint32_t> sample_clients(std::span<const std::size_t> client_sizes,
                                          double participation, std::uint32_t round,
                                          std::uint64_t seed);

/// Local SGD: local_epochs shuffled passes over the shard (short final batch
/// kept), steps at client_lr. Returns trained - start over the trainable
/// coordinates.
std::vector<double> local_train(const ClientShard& shard, const Dataset& ds,
                                const ModelParams& start, TrainMode mode,
                                std::uint32_t local_epochs, std::uint32_t batch_size,
                                double client_lr, RngStream& stream);

/// Sample-count-weighted average of participant deltas, reduced in ascending
/// client_id order. Weights are n_k over the participants' total.
std::vector<double> fedavg_aggregate(std::span<const ClientDelta> deltas);

/// Applies the aggregated pseudo-gradient to the global model. fedavg adds
/// server_lr * pseudo_gradient; fedadam treats the negated pseudo-gradient as
/// a gradient and applies a bias-corrected Adam step. Increments round_index.
void server_step(ServerState& state, std::span<const double> pseudo_gradient,
                 const ExperimentConfig& config);

struct RunResult {
    std::vector<RoundRecord> records;
    CostLedger ledger;
    ModelParams final_params;
};

/// Executes the configured pipeline on a fixed train/test split and returns
/// one record per round, including the round-0 record taken right after
/// initialization. Deterministic given the config.
RunResult run_experiment(const ExperimentConfig& config, const Dataset& train,
                         const Dataset& test, const ExecutionPolicy& exec = {});

struct DriftProbeResult {
    double headtuned_l2 = 0.0;
    double random_head_l2 = 0.0;
};

/// Runs round 1 twice from the same backbone, once with the class-mean head
/// and once with a random head, and reports the L2 parameter distance moved
/// by each. The config must specify a full fine-tuning method.
DriftProbeResult drift_probe(const ExperimentConfig& config, const Dataset& train,
                             const ExecutionPolicy& exec = {});

}  // namespace fedtune

#include "fedtune/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

#include "fedtune/errors.hpp"
#include "fedtune/headtune.hpp"

namespace fedtune {

std::string_view to_string(Method method) {
    switch (method) {
        case Method::random_init: return "random";
        case Method::finetune: return "ft";
        case Method::linear_probe: return "lp";
        case Method::fedncm: return "fedncm";
        case Method::fedncm_finetune: return "fedncm_ft";
    }
    return "?";
}

std::string_view to_string(ServerOpt opt) {
    return opt == ServerOpt::fedavg ? "fedavg" : "fedadam";
}

TrainMode train_mode(Method method) {
    return method == Method::linear_probe ? TrainMode::head_only : TrainMode::full;
}

void ExperimentConfig::validate() const {
    if (local_epochs < 1) throw ConfigError("local_epochs", "local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size", "batch_size must be >= 1");
    if (!(participation > 0.0) || participation > 1.0)
        throw ConfigError("participation", "participation must be in (0, 1]");
    if (!(client_lr >= 0.0) || !std::isfinite(client_lr))
        throw ConfigError("client_lr", "client_lr must be finite and >= 0");
    if (!(server_lr > 0.0) || !std::isfinite(server_lr))
        throw ConfigError("server_lr", "server_lr must be finite and positive");
    if (!(adam_beta1 >= 0.0) || adam_beta1 >= 1.0)
        throw ConfigError("adam_beta1", "adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0) || adam_beta2 >= 1.0)
        throw ConfigError("adam_beta2", "adam_beta2 must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps", "adam_eps must be positive");
    if (partition.num_clients < 1)
        throw ConfigError("partition.num_clients", "need at least one client");
    if (!(partition.alpha > 0.0))
        throw ConfigError("partition.alpha", "alpha must be positive");
    for (std::size_t w : backbone.widths)
        if (w == 0) throw ConfigError("backbone.widths", "layer widths must be positive");
}

namespace {

std::size_t trainable_count(const ModelParams& params, TrainMode mode) {
    return mode == TrainMode::full ? params.param_count() : params.head_param_count();
}

// Runs fn(0..n-1) on up to `threads` workers. Any scheduling is valid: the
// callee must not depend on execution order.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = static_cast<unsigned>(
        std::min<std::size_t>(threads, n));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<std::uint32_t> sample_clients(std::span<const std::size_t> client_sizes,
                                          double participation, std::uint32_t round,
                                          std::uint64_t seed) {
    if (!(participation > 0.0) || participation > 1.0)
        throw std::invalid_argument("sample_clients: participation must be in (0, 1]");

    std::vector<std::uint32_t> candidates;
    for (std::size_t k = 0; k < client_sizes.size(); ++k)
        if (client_sizes[k] > 0) candidates.push_back(static_cast<std::uint32_t>(k));
    if (candidates.empty()) throw StateError("sample_clients: no non-empty clients");

    const std::size_t want = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(participation * static_cast<double>(candidates.size()))));
    const std::size_t take = std::min(want, candidates.size());

    RngStream stream(stream_key(seed, "client-sampling", round));
    // Partial Fisher-Yates: the first `take` entries are the sample.
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(stream.uniform_below(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(take);
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

std::vector<double> local_train(const ClientShard& shard, const Dataset& ds,
                                const ModelParams& start, TrainMode mode,
                                std::uint32_t local_epochs, std::uint32_t batch_size,
                                double client_lr, RngStream& stream) {
    if (shard.sample_indices.empty())
        throw std::invalid_argument("local_train: empty shard");
    if (local_epochs < 1) throw std::invalid_argument("local_train: local_epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("local_train: batch_size must be >= 1");

    std::vector<Sample> local;
    local.reserve(shard.size());
    for (std::size_t idx : shard.sample_indices) {
        if (idx >= ds.samples.size())
            throw std::invalid_argument("local_train: shard index out of range");
        local.push_back(ds.samples[idx]);
    }

    ModelParams params = start;
    for (std::uint32_t epoch = 0; epoch < local_epochs; ++epoch) {
        stream.shuffle(local);
        for (std::size_t pos = 0; pos < local.size(); pos += batch_size) {
            const std::size_t len = std::min<std::size_t>(batch_size, local.size() - pos);
            const auto [loss, grads] =
                loss_and_grad(params, {local.data() + pos, len}, mode);
            (void)loss;
            params = apply_update(params, grads, client_lr);
        }
    }

    const std::vector<double> before = flatten_trainable(start, mode);
    std::vector<double> after = flatten_trainable(params, mode);
    for (std::size_t i = 0; i < after.size(); ++i) after[i] -= before[i];
    return after;
}

std::vector<double> fedavg_aggregate(std::span<const ClientDelta> deltas) {
    if (deltas.empty()) throw std::invalid_argument("fedavg_aggregate: no deltas");

    std::vector<const ClientDelta*> sorted;
    sorted.reserve(deltas.size());
    for (const ClientDelta& d : deltas) sorted.push_back(&d);
    std::sort(sorted.begin(), sorted.end(), [](const ClientDelta* a, const ClientDelta* b) {
        return a->client_id < b->client_id;
    });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i]->client_id == sorted[i - 1]->client_id)
            throw std::invalid_argument("fedavg_aggregate: duplicate client_id");

    const std::size_t len = sorted.front()->delta.size();
    std::uint64_t total = 0;
    for (const ClientDelta* d : sorted) {
        if (d->delta.size() != len)
            throw ShapeError("fedavg_aggregate: delta length mismatch");
        total += d->num_samples;
    }
    if (total == 0) throw std::invalid_argument("fedavg_aggregate: zero total samples");

    std::vector<double> out(len, 0.0);
    for (const ClientDelta* d : sorted) {
        const double w = static_cast<double>(d->num_samples) / static_cast<double>(total);
        for (std::size_t i = 0; i < len; ++i) out[i] += w * d->delta[i];
    }
    return out;
}

void server_step(ServerState& state, std::span<const double> pseudo_gradient,
                 const ExperimentConfig& config) {
    const TrainMode mode = train_mode(config.method);
    const std::size_t count = trainable_count(state.global_params, mode);
    if (pseudo_gradient.size() != count)
        throw ShapeError("server_step: pseudo-gradient length " +
                         std::to_string(pseudo_gradient.size()) + ", expected " +
                         std::to_string(count));

    state.round_index += 1;

    if (config.server_opt == ServerOpt::fedavg) {
        std::vector<double> step(pseudo_gradient.begin(), pseudo_gradient.end());
        for (double& v : step) v *= config.server_lr;
        state.global_params = apply_trainable_delta(state.global_params, step, mode);
        return;
    }

    if (state.adam_m.empty()) state.adam_m.assign(count, 0.0);
    if (state.adam_v.empty()) state.adam_v.assign(count, 0.0);
    if (state.adam_m.size() != count || state.adam_v.size() != count)
        throw ShapeError("server_step: adam moment length mismatch");

    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double t = static_cast<double>(state.round_index);
    const double bias1 = 1.0 - std::pow(b1, t);
    const double bias2 = 1.0 - std::pow(b2, t);
    std::vector<double> step(count, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        const double g = -pseudo_gradient[i];
        state.adam_m[i] = b1 * state.adam_m[i] + (1.0 - b1) * g;
        state.adam_v[i] = b2 * state.adam_v[i] + (1.0 - b2) * g * g;
        const double m_hat = state.adam_m[i] / bias1;
        const double v_hat = state.adam_v[i] / bias2;
        step[i] = -config.server_lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
    state.global_params = apply_trainable_delta(state.global_params, step, mode);
}

namespace {

struct NcmInitResult {
    Matrix head_v;
    std::vector<double> head_b;
    std::uint64_t stats_bytes = 0;
    std::uint64_t forward_samples = 0;
};

// Algorithm: every client reports per-class feature sums and counts once; the
// server reduces them into exact global class means and builds the head.
NcmInitResult ncm_head_init(const ModelParams& params,
                            const std::vector<ClientShard>& shards,
                            const Dataset& train, const ExecutionPolicy& exec) {
    std::vector<ClassStats> stats(shards.size());
    parallel_for(shards.size(), exec.threads, [&](std::size_t k) {
        stats[k] = local_class_stats(shards[k], train, params);
    });

    NcmInitResult result;
    for (const ClassStats& cs : stats) {
        result.stats_bytes += class_stats_message_bytes(cs, params.feature_dim());
        for (const auto& [cls, count] : cs.counts) result.forward_samples += count;
    }
    const Centroids centroids = aggregate_centroids(stats, train.num_classes);
    auto [head_v, head_b] = init_head_from_centroids(centroids);
    result.head_v = std::move(head_v);
    result.head_b = std::move(head_b);
    return result;
}

void run_round(ServerState& state, const ExperimentConfig& config, TrainMode mode,
               const std::vector<ClientShard>& shards, const Dataset& train,
               const CostModel& cost_model, CostLedger& ledger, std::uint32_t round,
               const ExecutionPolicy& exec) {
    std::vector<std::size_t> sizes(shards.size());
    for (std::size_t k = 0; k < shards.size(); ++k) sizes[k] = shards[k].size();
    const std::vector<std::uint32_t> ids =
        sample_clients(sizes, config.participation, round, config.seed);

    const std::uint64_t transfer_params =
        trainable_count(state.global_params, mode);
    charge_model_transfer(ledger, transfer_params, Direction::down, ids.size());

    std::vector<ClientDelta> deltas(ids.size());
    const ModelParams& start = state.global_params;
    parallel_for(ids.size(), exec.threads, [&](std::size_t i) {
        const std::uint32_t id = ids[i];
        RngStream stream(stream_key(config.seed, "local-train", round, id));
        deltas[i].client_id = id;
        deltas[i].num_samples = shards[id].size();
        deltas[i].delta =
            local_train(shards[id], train, start, mode, config.local_epochs,
                        config.batch_size, config.client_lr, stream);
    });

    for (const ClientDelta& d : deltas)
        charge_local_pass(ledger, cost_model, d.num_samples * config.local_epochs,
                          mode == TrainMode::full ? PassMode::full
                                                  : PassMode::forward_backward_head_only);
    charge_model_transfer(ledger, transfer_params, Direction::up, ids.size());

    const std::vector<double> pseudo_gradient = fedavg_aggregate(deltas);
    server_step(state, pseudo_gradient, config);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const Dataset& train,
                         const Dataset& test, const ExecutionPolicy& exec) {
    config.validate();
    if (train.samples.empty()) throw std::invalid_argument("run_experiment: empty train set");
    if (test.samples.empty()) throw std::invalid_argument("run_experiment: empty test set");
    if (test.dim != train.dim || test.num_classes != train.num_classes)
        throw ShapeError("run_experiment: train/test schema mismatch");

    ModelParams params = build_model(config.backbone, train.dim, train.num_classes);
    if (config.method == Method::random_init)
        randomize_backbone(params, stream_key(config.seed, "random-backbone"));

    const std::vector<ClientShard> shards = dirichlet_partition(train, config.partition);
    const CostModel cost_model = CostModel::for_model(params);

    CostLedger ledger;
    charge_initial_distribution(ledger, params.param_count(), config.partition.num_clients);

    if (config.method == Method::fedncm || config.method == Method::fedncm_finetune) {
        NcmInitResult ncm = ncm_head_init(params, shards, train, exec);
        params.head_v = std::move(ncm.head_v);
        params.head_b = std::move(ncm.head_b);
        charge_message(ledger, ncm.stats_bytes, Direction::up);
        if (ncm.forward_samples > 0)
            charge_local_pass(ledger, cost_model, ncm.forward_samples,
                              PassMode::forward_only);
    } else {
        RngStream head_stream(stream_key(config.seed, "head-init"));
        init_random_head(params, head_stream);
    }

    const std::vector<double> start_flat = flatten(params);

    RunResult result;
    result.records.push_back({0, evaluate(params, test), ledger.bytes_up,
                              ledger.bytes_down, ledger.flops, 0.0});

    const TrainMode mode = train_mode(config.method);
    const std::uint32_t rounds = config.method == Method::fedncm ? 0 : config.rounds;

    ServerState state;
    state.global_params = std::move(params);
    if (config.server_opt == ServerOpt::fedadam && rounds > 0) {
        const std::size_t count = trainable_count(state.global_params, mode);
        state.adam_m.assign(count, 0.0);
        state.adam_v.assign(count, 0.0);
    }

    for (std::uint32_t round = 1; round <= rounds; ++round) {
        run_round(state, config, mode, shards, train, cost_model, ledger, round, exec);
        result.records.push_back(
            {round, evaluate(state.global_params, test), ledger.bytes_up,
             ledger.bytes_down, ledger.flops,
             l2_distance(flatten(state.global_params), start_flat)});
    }

    result.ledger = ledger;
    result.final_params = std::move(state.global_params);
    return result;
}

DriftProbeResult drift_probe(const ExperimentConfig& config, const Dataset& train,
                             const ExecutionPolicy& exec) {
    config.validate();
    if (train_mode(config.method) != TrainMode::full || config.method == Method::fedncm)
        throw std::invalid_argument("drift_probe: config must use a full fine-tuning method");
    if (train.samples.empty()) throw std::invalid_argument("drift_probe: empty train set");

    ModelParams base = build_model(config.backbone, train.dim, train.num_classes);
    if (config.method == Method::random_init)
        randomize_backbone(base, stream_key(config.seed, "random-backbone"));

    const std::vector<ClientShard> shards = dirichlet_partition(train, config.partition);
    const CostModel cost_model = CostModel::for_model(base);

    const auto one_round_l2 = [&](ModelParams params) {
        const std::vector<double> before = flatten(params);
        ServerState state;
        state.global_params = std::move(params);
        if (config.server_opt == ServerOpt::fedadam) {
            const std::size_t count = trainable_count(state.global_params, TrainMode::full);
            state.adam_m.assign(count, 0.0);
            state.adam_v.assign(count, 0.0);
        }
        CostLedger scratch;
        run_round(state, config, TrainMode::full, shards, train, cost_model, scratch, 1,
                  exec);
        return l2_distance(flatten(state.global_params), before);
    };

    DriftProbeResult result;
    {
        ModelParams headtuned = base;
        NcmInitResult ncm = ncm_head_init(headtuned, shards, train, exec);
        headtuned.head_v = std::move(ncm.head_v);
        headtuned.head_b = std::move(ncm.head_b);
        result.headtuned_l2 = one_round_l2(std::move(headtuned));
    }
    {
        ModelParams random_head = base;
        RngStream head_stream(stream_key(config.seed, "head-init"));
        init_random_head(random_head, head_stream);
        result.random_head_l2 = one_round_l2(std::move(random_head));
    }
    return result;
}

}  // namespace fedtune

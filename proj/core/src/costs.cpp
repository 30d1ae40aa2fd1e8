#include "fedtune/costs.hpp"

#include <algorithm>
#include <stdexcept>

namespace fedtune {

CostModel CostModel::for_model(const ModelParams& params) {
    CostModel model;
    for (const DenseLayer& layer : params.backbone)
        model.backbone_flops +=
            2 * static_cast<std::uint64_t>(layer.in_dim()) * layer.out_dim();
    model.head_flops =
        2 * static_cast<std::uint64_t>(params.feature_dim()) * params.num_classes();
    return model;
}

void charge_model_transfer(CostLedger& ledger, std::uint64_t param_count,
                           Direction direction, std::uint64_t num_clients) {
    if (param_count == 0 || num_clients == 0)
        throw std::invalid_argument("charge_model_transfer: counts must be positive");
    const std::uint64_t bytes = param_count * CostModel::kBytesPerParam * num_clients;
    if (direction == Direction::up)
        ledger.bytes_up += bytes;
    else
        ledger.bytes_down += bytes;
}

void charge_initial_distribution(CostLedger& ledger, std::uint64_t param_count,
                                 std::uint64_t num_clients) {
    if (param_count == 0 || num_clients == 0)
        throw std::invalid_argument("charge_initial_distribution: counts must be positive");
    ledger.initial_model_bytes_down +=
        param_count * CostModel::kBytesPerParam * num_clients;
}

void charge_message(CostLedger& ledger, std::uint64_t bytes, Direction direction) {
    if (direction == Direction::up)
        ledger.bytes_up += bytes;
    else
        ledger.bytes_down += bytes;
}

void charge_local_pass(CostLedger& ledger, const CostModel& model,
                       std::uint64_t num_samples, PassMode mode) {
    if (num_samples == 0)
        throw std::invalid_argument("charge_local_pass: num_samples must be positive");
    const std::uint64_t fwd = model.forward_flops();
    const double n = static_cast<double>(num_samples);
    switch (mode) {
        case PassMode::forward_only:
            ledger.forward_passes += n;
            ledger.flops += num_samples * fwd;
            return;
        case PassMode::forward_backward_head_only:
            ledger.forward_passes += n;
            // Head backward, expressed as its share of a full-model backward.
            ledger.backward_passes +=
                n * static_cast<double>(model.head_flops) / static_cast<double>(fwd);
            ledger.flops += num_samples *
                            (fwd + CostModel::kBackwardToForwardRatio * model.head_flops);
            return;
        case PassMode::full:
            ledger.forward_passes += n;
            ledger.backward_passes += n;
            ledger.flops +=
                num_samples * (fwd + CostModel::kBackwardToForwardRatio * fwd);
            return;
    }
    throw std::invalid_argument("charge_local_pass: unknown pass mode");
}

std::vector<BudgetPoint> budget_curve(std::span<const RoundRecord> records,
                                      CostAxis axis) {
    if (records.empty()) throw std::invalid_argument("budget_curve: no records");
    std::vector<BudgetPoint> curve;
    curve.reserve(records.size());
    double best = 0.0;
    for (const RoundRecord& r : records) {
        best = std::max(best, r.test_accuracy);
        const double budget =
            axis == CostAxis::bytes
                ? static_cast<double>(r.cum_bytes_up + r.cum_bytes_down)
                : static_cast<double>(r.cum_flops);
        curve.push_back({budget, best});
    }
    return curve;
}

}  // namespace fedtune

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedtune/model.hpp"

namespace fedtune {

/// Cost conventions: every transmitted parameter is a 32-bit float, a dense
/// layer forward is 2*in*out FLOPs per sample (activations free), and a
/// backward pass costs twice the corresponding forward.
struct CostModel {
    static constexpr std::uint64_t kBytesPerParam = 4;
    static constexpr std::uint64_t kBackwardToForwardRatio = 2;

    std::uint64_t backbone_flops = 0;  // per-sample backbone forward
    std::uint64_t head_flops = 0;      // per-sample head forward

    std::uint64_t forward_flops() const { return backbone_flops + head_flops; }

    static CostModel for_model(const ModelParams& params);
};

enum class Direction { up, down };

/// What one local data pass costs:
///  - forward_only: full-model forward per sample (the FedNCM pass)
///  - forward_backward_head_only: full forward plus head-only backward (LP)
///  - full: full forward plus full backward (fine-tuning)
enum class PassMode { forward_only, forward_backward_head_only, full };

/// Running counters for one run. forward/backward passes are in units of
/// whole-model passes; a head-only backward contributes its FLOP share, so
/// flops == forward_passes*F + backward_passes*2F always holds.
/// The one-time pretrained-model distribution is kept in its own counter: it
/// is charged identically to every method and excluded from the per-round
/// traffic that budget curves compare.
struct CostLedger {
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
    std::uint64_t initial_model_bytes_down = 0;
    double forward_passes = 0.0;
    double backward_passes = 0.0;
    std::uint64_t flops = 0;
};

/// Adds param_count * 4 * num_clients bytes in the given direction.
void charge_model_transfer(CostLedger& ledger, std::uint64_t param_count,
                           Direction direction, std::uint64_t num_clients);

/// The one-time model broadcast that starts every method.
void charge_initial_distribution(CostLedger& ledger, std::uint64_t param_count,
                                 std::uint64_t num_clients);

/// Raw message bytes (class-stats uploads).
void charge_message(CostLedger& ledger, std::uint64_t bytes, Direction direction);

void charge_local_pass(CostLedger& ledger, const CostModel& model,
                       std::uint64_t num_samples, PassMode mode);

/// One row of a run's metrics: accuracy plus cumulative costs after a round.
/// Round 0 is the state right after initialization.
struct RoundRecord {
    std::uint32_t round = 0;
    double test_accuracy = 0.0;
    std::uint64_t cum_bytes_up = 0;
    std::uint64_t cum_bytes_down = 0;
    std::uint64_t cum_flops = 0;
    double l2_from_start = 0.0;
};

enum class CostAxis { bytes, flops };

struct BudgetPoint {
    double budget = 0.0;
    double best_accuracy = 0.0;
};

/// Running-max accuracy indexed by cumulative cost: the value of the best
/// model obtainable within each budget.
std::vector<BudgetPoint> budget_curve(std::span<const RoundRecord> records,
                                      CostAxis axis);

}  // namespace fedtune

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "fedtune/data.hpp"
#include "fedtune/matrix.hpp"
#include "fedtune/model.hpp"

namespace fedtune {

/// One client's per-class feature sums. Clients report (sum, count) pairs
/// rather than means so the server can aggregate exactly under unequal
/// client sizes. Classes absent on the client are omitted.
struct ClassStats {
    std::uint32_t client_id = 0;
    std::map<std::uint32_t, std::vector<double>> sums;
    std::map<std::uint32_t, std::uint64_t> counts;
};

/// Server-side class means. Row c is the global mean of f(x) over all
/// samples of class c; classes with no samples anywhere are flagged invalid.
struct Centroids {
    Matrix means;  // C x d_out
    std::vector<std::uint64_t> global_counts;
    std::vector<bool> valid;

    std::size_t num_classes() const { return means.rows; }
};

/// Per-class sums of f(x; w) over the client's samples, accumulated in
/// ascending sample-index order.
ClassStats local_class_stats(const ClientShard& shard, const Dataset& ds,
                             const ModelParams& params);

/// Exact server reduction: centroid c = (sum over clients of sums[c]) / D_c.
/// Clients are summed in ascending client_id regardless of input order.
Centroids aggregate_centroids(std::span<const ClassStats> stats,
                              std::uint32_t num_classes);

/// Nearest-centroid classification (Euclidean); ties resolve to the lowest
/// class index. Invalid classes are excluded.
std::uint32_t ncm_classify(std::span<const double> features,
                           const Centroids& centroids);

/// Head initialization from centroids: row c of V is l_c / ||l_c|| (zero for
/// degenerate or invalid classes), bias is zero.
std::pair<Matrix, std::vector<double>> init_head_from_centroids(
    const Centroids& centroids);

/// Wire layout of a stats upload: client_id (u32), then per present class:
/// class index (u32), count (u32), d_out float32 features. Little-endian.
/// The byte size feeds the communication ledger; aggregation itself uses the
/// exact double-precision sums.
std::vector<std::uint8_t> encode_class_stats(const ClassStats& stats,
                                             std::size_t feature_dim);
std::size_t class_stats_message_bytes(const ClassStats& stats,
                                      std::size_t feature_dim);

}  // namespace fedtune

#include "fedtune/headtune.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "fedtune/errors.hpp"

namespace fedtune {

ClassStats local_class_stats(const ClientShard& shard, const Dataset& ds,
                             const ModelParams& params) {
    ClassStats stats;
    stats.client_id = shard.client_id;
    const std::size_t d_out = params.feature_dim();

    std::vector<std::size_t> order = shard.sample_indices;
    std::sort(order.begin(), order.end());
    for (std::size_t idx : order) {
        if (idx >= ds.samples.size())
            throw std::invalid_argument("local_class_stats: shard index out of range");
        const Sample& s = ds.samples[idx];
        const ForwardResult r = forward(params, s.features);
        auto [it, inserted] = stats.sums.try_emplace(s.label, std::vector<double>(d_out, 0.0));
        for (std::size_t j = 0; j < d_out; ++j) it->second[j] += r.features[j];
        ++stats.counts[s.label];
    }
    return stats;
}

Centroids aggregate_centroids(std::span<const ClassStats> stats,
                              std::uint32_t num_classes) {
    Centroids out;
    out.means = Matrix(num_classes, 0);
    out.global_counts.assign(num_classes, 0);
    out.valid.assign(num_classes, false);

    // Feature dimension from the first non-empty contribution.
    std::size_t d_out = 0;
    for (const ClassStats& cs : stats) {
        if (!cs.sums.empty()) {
            d_out = cs.sums.begin()->second.size();
            break;
        }
    }
    out.means = Matrix(num_classes, d_out);

    // Deterministic reduction order: ascending client_id.
    std::vector<const ClassStats*> sorted;
    sorted.reserve(stats.size());
    for (const ClassStats& cs : stats) sorted.push_back(&cs);
    std::sort(sorted.begin(), sorted.end(),
              [](const ClassStats* a, const ClassStats* b) { return a->client_id < b->client_id; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i]->client_id == sorted[i - 1]->client_id)
            throw std::invalid_argument("aggregate_centroids: duplicate client_id");

    for (const ClassStats* cs : sorted) {
        for (const auto& [cls, sum] : cs->sums) {
            if (cls >= num_classes)
                throw std::invalid_argument("aggregate_centroids: class index out of range");
            if (sum.size() != d_out)
                throw ShapeError("aggregate_centroids: feature dimension mismatch");
            const auto count_it = cs->counts.find(cls);
            if (count_it == cs->counts.end() || count_it->second == 0)
                throw std::invalid_argument("aggregate_centroids: sum present without count");
            double* row = out.means.data.data() + cls * d_out;
            for (std::size_t j = 0; j < d_out; ++j) row[j] += sum[j];
            out.global_counts[cls] += count_it->second;
        }
    }

    for (std::uint32_t c = 0; c < num_classes; ++c) {
        if (out.global_counts[c] == 0) continue;
        out.valid[c] = true;
        double* row = out.means.data.data() + c * d_out;
        const double inv = 1.0 / static_cast<double>(out.global_counts[c]);
        for (std::size_t j = 0; j < d_out; ++j) row[j] *= inv;
    }
    return out;
}

std::uint32_t ncm_classify(std::span<const double> features,
                           const Centroids& centroids) {
    if (features.size() != centroids.means.cols)
        throw ShapeError("ncm_classify: feature dimension mismatch");
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_class = 0;
    bool found = false;
    for (std::uint32_t c = 0; c < centroids.num_classes(); ++c) {
        if (!centroids.valid[c]) continue;
        const double* row = centroids.means.data.data() + c * centroids.means.cols;
        double dist2 = 0.0;
        for (std::size_t j = 0; j < features.size(); ++j) {
            const double d = features[j] - row[j];
            dist2 += d * d;
        }
        if (!found || dist2 < best) {
            best = dist2;
            best_class = c;
            found = true;
        }
    }
    if (!found) throw StateError("ncm_classify: no valid class");
    return best_class;
}

std::pair<Matrix, std::vector<double>> init_head_from_centroids(
    const Centroids& centroids) {
    const std::size_t num_classes = centroids.num_classes();
    const std::size_t d_out = centroids.means.cols;
    Matrix head_v(num_classes, d_out);
    std::vector<double> head_b(num_classes, 0.0);
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (!centroids.valid[c]) continue;
        const double* row = centroids.means.data.data() + c * d_out;
        const double norm = l2_norm({row, d_out});
        if (norm == 0.0) continue;  // degenerate class keeps a zero row
        for (std::size_t j = 0; j < d_out; ++j) head_v(c, j) = row[j] / norm;
    }
    return {std::move(head_v), std::move(head_b)};
}

namespace {

template <typename T>
void append_pod(std::vector<std::uint8_t>& buf, T value) {
    const std::size_t pos = buf.size();
    buf.resize(pos + sizeof(T));
    std::memcpy(buf.data() + pos, &value, sizeof(T));
}

}  // namespace

std::vector<std::uint8_t> encode_class_stats(const ClassStats& stats,
                                             std::size_t feature_dim) {
    std::vector<std::uint8_t> buf;
    buf.reserve(class_stats_message_bytes(stats, feature_dim));
    append_pod(buf, stats.client_id);
    for (const auto& [cls, sum] : stats.sums) {
        if (sum.size() != feature_dim)
            throw ShapeError("encode_class_stats: feature dimension mismatch");
        append_pod(buf, cls);
        append_pod(buf, static_cast<std::uint32_t>(stats.counts.at(cls)));
        for (double v : sum) append_pod(buf, static_cast<float>(v));
    }
    return buf;
}

std::size_t class_stats_message_bytes(const ClassStats& stats,
                                      std::size_t feature_dim) {
    return sizeof(std::uint32_t) +
           stats.sums.size() * (2 * sizeof(std::uint32_t) + feature_dim * sizeof(float));
}

}  // namespace fedtune

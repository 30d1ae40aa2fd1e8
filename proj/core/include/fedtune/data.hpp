#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fedtune {

/// One labeled feature vector (a pre-extracted embedding at full scale, a
/// synthetic point at desk scale).
struct Sample {
    std::vector<double> features;
    std::uint32_t label = 0;
};

/// A labeled feature dataset. Every sample has dimension `dim` and a label
/// in [0, num_classes).
struct Dataset {
    std::vector<Sample> samples;
    std::uint32_t num_classes = 0;
    std::size_t dim = 0;

    std::size_t size() const { return samples.size(); }
};

/// The indices one client holds. Shards of a partition are disjoint and
/// together cover the dataset.
struct ClientShard {
    std::uint32_t client_id = 0;
    std::vector<std::size_t> sample_indices;

    std::size_t size() const { return sample_indices.size(); }
};

/// Label-skew partition parameters: per class, client proportions are drawn
/// from Dirichlet(alpha * 1_K). Smaller alpha means more heterogeneity.
struct PartitionSpec {
    std::uint32_t num_clients = 1;
    double alpha = 0.1;
    std::uint64_t seed = 0;
};

/// Synthetic mixture: class c is an isotropic Gaussian around mean mu_c with
/// std noise_sigma. Means are drawn once from the seed and rescaled so the
/// closest pair is exactly class_sep apart. Samples are ordered class-major.
Dataset generate_gaussian_mixture(std::uint32_t num_classes, std::size_t dim,
                                  std::size_t per_class, double class_sep,
                                  double noise_sigma, std::uint64_t seed);

/// Reads the embedding CSV format: header `dim=<d>,classes=<C>`, then one
/// sample per line as d floats followed by an integer label. Throws LoadError
/// naming the offending line on malformed rows, non-finite values, labels out
/// of range, or classes with no samples.
Dataset load_embeddings(const std::string& path);

/// Splits by class occurrence order: the first `train_per_class` samples of
/// each class go to the first dataset, the remainder to the second. Used to
/// carve a test set out of one generated mixture so both share class means.
std::pair<Dataset, Dataset> split_per_class(const Dataset& ds,
                                            std::size_t train_per_class);

/// Dirichlet label-skew partition. For each class, proportions are drawn from
/// the stream keyed (spec.seed, "dirichlet", class) and converted to counts by
/// largest-remainder rounding, so per-class totals are conserved exactly.
/// Deterministic given the spec; shards may be empty.
std::vector<ClientShard> dirichlet_partition(const Dataset& ds,
                                             const PartitionSpec& spec);

/// Per-class sample counts of a shard; entries sum to the shard size.
std::vector<std::uint64_t> label_histogram(const ClientShard& shard,
                                           const Dataset& ds);

}  // namespace fedtune

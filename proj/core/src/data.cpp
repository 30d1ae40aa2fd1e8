#include "fedtune/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "fedtune/errors.hpp"
#include "fedtune/matrix.hpp"
#include "fedtune/rng.hpp"

namespace fedtune {

Dataset generate_gaussian_mixture(std::uint32_t num_classes, std::size_t dim,
                                  std::size_t per_class, double class_sep,
                                  double noise_sigma, std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("generate_gaussian_mixture: need at least 2 classes");
    if (dim < 2) throw std::invalid_argument("generate_gaussian_mixture: need dim >= 2");
    if (per_class < 1) throw std::invalid_argument("generate_gaussian_mixture: need per_class >= 1");
    if (class_sep <= 0.0) throw std::invalid_argument("generate_gaussian_mixture: class_sep must be positive");
    if (noise_sigma < 0.0) throw std::invalid_argument("generate_gaussian_mixture: noise_sigma must be non-negative");

    RngStream mean_stream(stream_key(seed, "mixture-means"));
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim));
    for (auto& mu : means)
        for (double& x : mu) x = mean_stream.normal();

    // Rescale all means so the closest pair sits exactly class_sep apart.
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::uint32_t a = 0; a < num_classes; ++a)
        for (std::uint32_t b = a + 1; b < num_classes; ++b)
            min_dist = std::min(min_dist, l2_distance(means[a], means[b]));
    if (!(min_dist > 0.0))
        throw StateError("generate_gaussian_mixture: degenerate coincident class means");
    const double scale = class_sep / min_dist;
    for (auto& mu : means)
        for (double& x : mu) x *= scale;

    RngStream noise_stream(stream_key(seed, "mixture-noise"));
    Dataset ds;
    ds.num_classes = num_classes;
    ds.dim = dim;
    ds.samples.reserve(static_cast<std::size_t>(num_classes) * per_class);
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        for (std::size_t j = 0; j < per_class; ++j) {
            Sample s;
            s.label = c;
            s.features.resize(dim);
            for (std::size_t k = 0; k < dim; ++k)
                s.features[k] = means[c][k] + noise_sigma * noise_stream.normal();
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

namespace {

[[noreturn]] void load_fail(const std::string& path, std::size_t line_no,
                            const std::string& why) {
    std::ostringstream os;
    os << path << ":" << line_no << ": " << why;
    throw LoadError(os.str());
}

}  // namespace

Dataset load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError(path + ": cannot open file");

    std::string line;
    if (!std::getline(in, line)) throw LoadError(path + ": empty file");

    std::size_t dim = 0;
    std::uint32_t num_classes = 0;
    {
        unsigned long long d = 0, c = 0;
        if (std::sscanf(line.c_str(), "dim=%llu,classes=%llu", &d, &c) != 2)
            load_fail(path, 1, "header must be dim=<d>,classes=<C>");
        if (d == 0 || c < 2) load_fail(path, 1, "header requires dim >= 1 and classes >= 2");
        dim = static_cast<std::size_t>(d);
        num_classes = static_cast<std::uint32_t>(c);
    }

    Dataset ds;
    ds.dim = dim;
    ds.num_classes = num_classes;

    std::size_t line_no = 1;
    std::vector<std::string> fields;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;

        fields.clear();
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != dim + 1)
            load_fail(path, line_no, "expected " + std::to_string(dim + 1) +
                                         " comma-separated fields, got " +
                                         std::to_string(fields.size()));

        Sample s;
        s.features.resize(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            std::size_t pos = 0;
            double v = 0.0;
            try {
                v = std::stod(fields[k], &pos);
            } catch (const std::exception&) {
                load_fail(path, line_no, "not a number: '" + fields[k] + "'");
            }
            if (pos != fields[k].size())
                load_fail(path, line_no, "trailing junk in field: '" + fields[k] + "'");
            if (!std::isfinite(v)) load_fail(path, line_no, "non-finite feature value");
            s.features[k] = v;
        }
        {
            const std::string& field = fields[dim];
            long long lbl = 0;
            std::size_t pos = 0;
            try {
                lbl = std::stoll(field, &pos);
            } catch (const std::exception&) {
                load_fail(path, line_no, "label is not an integer: '" + field + "'");
            }
            if (pos != field.size())
                load_fail(path, line_no, "label is not an integer: '" + field + "'");
            if (lbl < 0 || lbl >= static_cast<long long>(num_classes))
                load_fail(path, line_no, "label out of range [0, " + std::to_string(num_classes) + ")");
            s.label = static_cast<std::uint32_t>(lbl);
        }
        ds.samples.push_back(std::move(s));
    }

    if (ds.samples.empty()) throw LoadError(path + ": no samples");

    std::vector<std::uint64_t> counts(num_classes, 0);
    for (const Sample& s : ds.samples) ++counts[s.label];
    for (std::uint32_t c = 0; c < num_classes; ++c)
        if (counts[c] == 0)
            throw LoadError(path + ": class " + std::to_string(c) + " has no samples");

    return ds;
}

std::pair<Dataset, Dataset> split_per_class(const Dataset& ds,
                                            std::size_t train_per_class) {
    Dataset train, test;
    train.dim = test.dim = ds.dim;
    train.num_classes = test.num_classes = ds.num_classes;
    std::vector<std::size_t> seen(ds.num_classes, 0);
    for (const Sample& s : ds.samples) {
        if (seen[s.label]++ < train_per_class)
            train.samples.push_back(s);
        else
            test.samples.push_back(s);
    }
    return {std::move(train), std::move(test)};
}

std::vector<ClientShard> dirichlet_partition(const Dataset& ds,
                                             const PartitionSpec& spec) {
    if (ds.samples.empty()) throw std::invalid_argument("dirichlet_partition: empty dataset");
    if (spec.num_clients < 1) throw std::invalid_argument("dirichlet_partition: need at least 1 client");
    if (!(spec.alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");

    const std::uint32_t K = spec.num_clients;
    std::vector<ClientShard> shards(K);
    for (std::uint32_t k = 0; k < K; ++k) shards[k].client_id = k;

    // Collect per-class sample indices in dataset order.
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        by_class[ds.samples[i].label].push_back(i);

    for (std::uint32_t c = 0; c < ds.num_classes; ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;

        RngStream stream(stream_key(spec.seed, "dirichlet", c));

        // p ~ Dirichlet(alpha * 1_K) via normalized gamma draws.
        std::vector<double> p(K);
        double total = 0.0;
        for (std::uint32_t k = 0; k < K; ++k) {
            p[k] = stream.gamma(spec.alpha);
            total += p[k];
        }
        if (total <= 0.0) {
            // All gamma draws underflowed (tiny alpha); the limit distribution
            // is a one-hot at a uniformly chosen client.
            std::fill(p.begin(), p.end(), 0.0);
            p[stream.uniform_below(K)] = 1.0;
            total = 1.0;
        }
        for (double& x : p) x /= total;

        // Largest-remainder rounding of p * |class| to integer counts.
        const std::size_t n_c = members.size();
        std::vector<std::size_t> counts(K);
        std::vector<std::pair<double, std::uint32_t>> remainders(K);
        std::size_t assigned = 0;
        for (std::uint32_t k = 0; k < K; ++k) {
            const double target = p[k] * static_cast<double>(n_c);
            counts[k] = static_cast<std::size_t>(std::floor(target));
            remainders[k] = {target - std::floor(target), k};
            assigned += counts[k];
        }
        std::sort(remainders.begin(), remainders.end(),
                  [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;  // ties to the lower client id
                  });
        for (std::size_t i = 0; assigned < n_c; ++i, ++assigned)
            ++counts[remainders[i % K].second];

        // Deal this class's samples out in shuffled order.
        stream.shuffle(members);
        std::size_t next = 0;
        for (std::uint32_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < counts[k]; ++j)
                shards[k].sample_indices.push_back(members[next++]);
    }

    for (auto& shard : shards)
        std::sort(shard.sample_indices.begin(), shard.sample_indices.end());
    return shards;
}

std::vector<std::uint64_t> label_histogram(const ClientShard& shard,
                                           const Dataset& ds) {
    std::vector<std::uint64_t> counts(ds.num_classes, 0);
    for (std::size_t idx : shard.sample_indices) {
        if (idx >= ds.samples.size())
            throw std::invalid_argument("label_histogram: shard index out of range");
        ++counts[ds.samples[idx].label];
    }
    return counts;
}

}  // namespace fedtune

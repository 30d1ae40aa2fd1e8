#include "fedtune/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "fedtune/errors.hpp"

namespace fedtune {

namespace {

double activate(double z, Activation act) {
    switch (act) {
        case Activation::identity: return z;
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
    }
    throw std::invalid_argument("unknown activation");
}

// Derivative expressed through the activation output; valid for all three
// supported activations.
double activate_grad_from_output(double a, Activation act) {
    switch (act) {
        case Activation::identity: return 1.0;
        case Activation::relu: return a > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - a * a;
    }
    throw std::invalid_argument("unknown activation");
}

}  // namespace

std::size_t ModelParams::backbone_param_count() const {
    std::size_t n = 0;
    for (const DenseLayer& layer : backbone)
        n += layer.weight.data.size() + layer.bias.size();
    return n;
}

ModelParams build_model(const BackboneSpec& spec, std::size_t input_dim,
                        std::size_t num_classes) {
    if (input_dim == 0) throw std::invalid_argument("build_model: input_dim must be positive");
    if (num_classes < 2) throw std::invalid_argument("build_model: need at least 2 classes");

    if (spec.init.kind == BackboneInit::Kind::file) {
        ModelParams loaded = load_checkpoint(spec.init.path);
        if (loaded.input_dim != input_dim)
            throw ShapeError("build_model: checkpoint input dim " +
                             std::to_string(loaded.input_dim) + " does not match data dim " +
                             std::to_string(input_dim));
        // The checkpoint's backbone is authoritative; the head is resized for
        // the downstream task and left zero until initialized.
        loaded.head_v = Matrix(num_classes, loaded.feature_dim());
        loaded.head_b.assign(num_classes, 0.0);
        return loaded;
    }

    ModelParams params;
    params.input_dim = input_dim;
    std::size_t in = input_dim;
    for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        const std::size_t out = spec.widths[i];
        if (out == 0) throw std::invalid_argument("build_model: zero layer width");
        DenseLayer layer;
        layer.weight = Matrix(out, in);
        layer.bias.assign(out, 0.0);
        layer.activation = spec.activation;
        RngStream stream(stream_key(spec.init.seed, "backbone-init", i));
        const double limit = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& w : layer.weight.data)
            w = (2.0 * stream.next_double() - 1.0) * limit;
        params.backbone.push_back(std::move(layer));
        in = out;
    }
    params.head_v = Matrix(num_classes, params.feature_dim());
    params.head_b.assign(num_classes, 0.0);
    return params;
}

void init_random_head(ModelParams& params, RngStream& stream) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(params.feature_dim()));
    for (double& w : params.head_v.data)
        w = (2.0 * stream.next_double() - 1.0) * limit;
    std::fill(params.head_b.begin(), params.head_b.end(), 0.0);
}

void randomize_backbone(ModelParams& params, std::uint64_t seed) {
    for (std::size_t i = 0; i < params.backbone.size(); ++i) {
        DenseLayer& layer = params.backbone[i];
        RngStream stream(stream_key(seed, "backbone-init", i));
        const double limit = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
        for (double& w : layer.weight.data)
            w = (2.0 * stream.next_double() - 1.0) * limit;
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
}

ForwardResult forward(const ModelParams& params, std::span<const double> x) {
    if (x.size() != params.input_dim)
        throw ShapeError("forward: input has dimension " + std::to_string(x.size()) +
                         ", model expects " + std::to_string(params.input_dim));
    ForwardResult result;
    std::vector<double> current(x.begin(), x.end());
    std::vector<double> next;
    for (const DenseLayer& layer : params.backbone) {
        affine(layer.weight, current, layer.bias, next);
        for (double& v : next) v = activate(v, layer.activation);
        current = next;
    }
    result.features = std::move(current);
    affine(params.head_v, result.features, params.head_b, result.logits);
    return result;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - max_logit);
        total += p[i];
    }
    for (double& v : p) v /= total;
    return p;
}

std::pair<double, GradientSet> loss_and_grad(const ModelParams& params,
                                             std::span<const Sample> batch,
                                             TrainMode mode) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");

    const std::size_t num_classes = params.num_classes();
    const std::size_t d_out = params.feature_dim();
    const std::size_t num_layers = params.backbone.size();
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    GradientSet grads;
    grads.mode = mode;
    grads.head_v = Matrix(num_classes, d_out);
    grads.head_b.assign(num_classes, 0.0);
    if (mode == TrainMode::full) {
        grads.backbone.reserve(num_layers);
        for (const DenseLayer& layer : params.backbone)
            grads.backbone.push_back(
                {Matrix(layer.out_dim(), layer.in_dim()), std::vector<double>(layer.out_dim(), 0.0)});
    }

    // acts[0] is the input, acts[l+1] the output of backbone layer l.
    std::vector<std::vector<double>> acts(num_layers + 1);
    std::vector<double> logits, dlogits, delta, delta_prev;
    double loss = 0.0;

    for (const Sample& sample : batch) {
        if (sample.features.size() != params.input_dim)
            throw ShapeError("loss_and_grad: sample dimension mismatch");
        if (sample.label >= num_classes)
            throw std::invalid_argument("loss_and_grad: label out of range");

        acts[0].assign(sample.features.begin(), sample.features.end());
        for (std::size_t l = 0; l < num_layers; ++l) {
            const DenseLayer& layer = params.backbone[l];
            affine(layer.weight, acts[l], layer.bias, acts[l + 1]);
            for (double& v : acts[l + 1]) v = activate(v, layer.activation);
        }
        const std::vector<double>& features = acts[num_layers];
        affine(params.head_v, features, params.head_b, logits);

        // Cross-entropy in log-sum-exp form to stay finite for any logits.
        const double max_logit = *std::max_element(logits.begin(), logits.end());
        double sum_exp = 0.0;
        for (double z : logits) sum_exp += std::exp(z - max_logit);
        loss += (std::log(sum_exp) + max_logit - logits[sample.label]) * inv_batch;

        dlogits.assign(num_classes, 0.0);
        for (std::size_t c = 0; c < num_classes; ++c)
            dlogits[c] = std::exp(logits[c] - max_logit) / sum_exp * inv_batch;
        dlogits[sample.label] -= inv_batch;

        for (std::size_t c = 0; c < num_classes; ++c) {
            grads.head_b[c] += dlogits[c];
            double* row = grads.head_v.data.data() + c * d_out;
            for (std::size_t j = 0; j < d_out; ++j) row[j] += dlogits[c] * features[j];
        }

        if (mode != TrainMode::full || num_layers == 0) continue;

        // d loss / d features = V^T dlogits
        delta.assign(d_out, 0.0);
        for (std::size_t c = 0; c < num_classes; ++c) {
            const double* row = params.head_v.data.data() + c * d_out;
            for (std::size_t j = 0; j < d_out; ++j) delta[j] += row[j] * dlogits[c];
        }

        for (std::size_t l = num_layers; l-- > 0;) {
            const DenseLayer& layer = params.backbone[l];
            LayerGrad& lg = grads.backbone[l];
            const std::vector<double>& out_act = acts[l + 1];
            const std::vector<double>& in_act = acts[l];
            // delta currently holds d loss / d out_act
            for (std::size_t r = 0; r < layer.out_dim(); ++r)
                delta[r] *= activate_grad_from_output(out_act[r], layer.activation);
            for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                lg.bias[r] += delta[r];
                double* grow = lg.weight.data.data() + r * layer.in_dim();
                for (std::size_t c = 0; c < layer.in_dim(); ++c)
                    grow[c] += delta[r] * in_act[c];
            }
            if (l == 0) break;
            delta_prev.assign(layer.in_dim(), 0.0);
            for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                const double* wrow = layer.weight.data.data() + r * layer.in_dim();
                for (std::size_t c = 0; c < layer.in_dim(); ++c)
                    delta_prev[c] += wrow[c] * delta[r];
            }
            delta = delta_prev;
        }
    }

    return {loss, std::move(grads)};
}

ModelParams apply_update(const ModelParams& params, const GradientSet& grads,
                         double lr) {
    if (!grads.head_v.same_shape(params.head_v) || grads.head_b.size() != params.head_b.size())
        throw ShapeError("apply_update: head gradient shape mismatch");
    if (grads.mode == TrainMode::full && grads.backbone.size() != params.backbone.size())
        throw ShapeError("apply_update: backbone gradient count mismatch");

    ModelParams out = params;
    if (grads.mode == TrainMode::full) {
        for (std::size_t l = 0; l < out.backbone.size(); ++l) {
            DenseLayer& layer = out.backbone[l];
            const LayerGrad& lg = grads.backbone[l];
            if (!lg.weight.same_shape(layer.weight) || lg.bias.size() != layer.bias.size())
                throw ShapeError("apply_update: backbone gradient shape mismatch at layer " +
                                 std::to_string(l));
            for (std::size_t i = 0; i < layer.weight.data.size(); ++i)
                layer.weight.data[i] -= lr * lg.weight.data[i];
            for (std::size_t i = 0; i < layer.bias.size(); ++i)
                layer.bias[i] -= lr * lg.bias[i];
        }
    }
    for (std::size_t i = 0; i < out.head_v.data.size(); ++i)
        out.head_v.data[i] -= lr * grads.head_v.data[i];
    for (std::size_t i = 0; i < out.head_b.size(); ++i)
        out.head_b[i] -= lr * grads.head_b[i];
    return out;
}

std::vector<double> flatten(const ModelParams& params) {
    std::vector<double> flat;
    flat.reserve(params.param_count());
    for (const DenseLayer& layer : params.backbone) {
        flat.insert(flat.end(), layer.weight.data.begin(), layer.weight.data.end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    flat.insert(flat.end(), params.head_v.data.begin(), params.head_v.data.end());
    flat.insert(flat.end(), params.head_b.begin(), params.head_b.end());
    return flat;
}

ModelParams unflatten(const ModelParams& like, std::span<const double> flat) {
    if (flat.size() != like.param_count())
        throw ShapeError("unflatten: expected " + std::to_string(like.param_count()) +
                         " values, got " + std::to_string(flat.size()));
    ModelParams out = like;
    std::size_t pos = 0;
    for (DenseLayer& layer : out.backbone) {
        std::copy_n(flat.begin() + pos, layer.weight.data.size(), layer.weight.data.begin());
        pos += layer.weight.data.size();
        std::copy_n(flat.begin() + pos, layer.bias.size(), layer.bias.begin());
        pos += layer.bias.size();
    }
    std::copy_n(flat.begin() + pos, out.head_v.data.size(), out.head_v.data.begin());
    pos += out.head_v.data.size();
    std::copy_n(flat.begin() + pos, out.head_b.size(), out.head_b.begin());
    return out;
}

std::vector<double> flatten_trainable(const ModelParams& params, TrainMode mode) {
    if (mode == TrainMode::full) return flatten(params);
    std::vector<double> flat;
    flat.reserve(params.head_param_count());
    flat.insert(flat.end(), params.head_v.data.begin(), params.head_v.data.end());
    flat.insert(flat.end(), params.head_b.begin(), params.head_b.end());
    return flat;
}

ModelParams apply_trainable_delta(const ModelParams& params,
                                  std::span<const double> delta, TrainMode mode) {
    const std::size_t expected =
        mode == TrainMode::full ? params.param_count() : params.head_param_count();
    if (delta.size() != expected)
        throw ShapeError("apply_trainable_delta: expected " + std::to_string(expected) +
                         " values, got " + std::to_string(delta.size()));
    ModelParams out = params;
    std::size_t pos = 0;
    if (mode == TrainMode::full) {
        for (DenseLayer& layer : out.backbone) {
            for (double& w : layer.weight.data) w += delta[pos++];
            for (double& b : layer.bias) b += delta[pos++];
        }
    }
    for (double& w : out.head_v.data) w += delta[pos++];
    for (double& b : out.head_b) b += delta[pos++];
    return out;
}

std::uint32_t predict_class(const ModelParams& params, std::span<const double> x) {
    const ForwardResult r = forward(params, x);
    std::size_t best = 0;
    for (std::size_t c = 1; c < r.logits.size(); ++c)
        if (r.logits[c] > r.logits[best]) best = c;
    return static_cast<std::uint32_t>(best);
}

double evaluate(const ModelParams& params, const Dataset& test) {
    if (test.samples.empty()) throw std::invalid_argument("evaluate: empty test set");
    std::size_t correct = 0;
    for (const Sample& s : test.samples)
        if (predict_class(params, s.features) == s.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'T', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw LoadError(path + ": truncated checkpoint");
    return value;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError(path + ": cannot open for writing");
    out.write(kCheckpointMagic, 4);
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint64_t>(params.input_dim));
    write_pod(out, static_cast<std::uint32_t>(params.backbone.size()));
    for (const DenseLayer& layer : params.backbone) {
        write_pod(out, static_cast<std::uint64_t>(layer.out_dim()));
        write_pod(out, static_cast<std::uint64_t>(layer.in_dim()));
        write_pod(out, static_cast<std::uint32_t>(layer.activation));
    }
    write_pod(out, static_cast<std::uint64_t>(params.num_classes()));
    write_pod(out, static_cast<std::uint64_t>(params.feature_dim()));
    const std::vector<double> flat = flatten(params);
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!out) throw LoadError(path + ": write failed");
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(path + ": cannot open checkpoint");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw LoadError(path + ": not a checkpoint file");
    if (read_pod<std::uint32_t>(in, path) != kCheckpointVersion)
        throw LoadError(path + ": unsupported checkpoint version");

    ModelParams params;
    params.input_dim = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
    const std::uint32_t num_layers = read_pod<std::uint32_t>(in, path);
    std::size_t expect_in = params.input_dim;
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        const auto out_dim = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
        const auto in_dim = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
        const auto act = read_pod<std::uint32_t>(in, path);
        if (in_dim != expect_in) throw LoadError(path + ": inconsistent layer shapes");
        if (act > static_cast<std::uint32_t>(Activation::tanh))
            throw LoadError(path + ": unknown activation code");
        DenseLayer layer;
        layer.weight = Matrix(out_dim, in_dim);
        layer.bias.assign(out_dim, 0.0);
        layer.activation = static_cast<Activation>(act);
        params.backbone.push_back(std::move(layer));
        expect_in = out_dim;
    }
    const auto num_classes = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
    const auto d_out = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
    if (d_out != params.feature_dim()) throw LoadError(path + ": head width mismatch");
    params.head_v = Matrix(num_classes, d_out);
    params.head_b.assign(num_classes, 0.0);

    std::vector<double> flat(params.param_count());
    in.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!in) throw LoadError(path + ": truncated checkpoint payload");
    for (double v : flat)
        if (!std::isfinite(v)) throw LoadError(path + ": non-finite parameter");
    return unflatten(params, flat);
}

}  // namespace fedtune

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedtune/data.hpp"
#include "fedtune/matrix.hpp"
#include "fedtune/rng.hpp"

namespace fedtune {

enum class Activation { identity, relu, tanh };

struct DenseLayer {
    Matrix weight;             // out x in
    std::vector<double> bias;  // out
    Activation activation = Activation::identity;

    std::size_t in_dim() const { return weight.cols; }
    std::size_t out_dim() const { return weight.rows; }
};

struct BackboneInit {
    enum class Kind { random, file };
    Kind kind = Kind::random;
    std::uint64_t seed = 12345;  // random init
    std::string path;            // checkpoint file init
};

/// Architecture of the feature extractor f. `widths` lists the output width
/// of each dense layer; an empty list is the identity backbone f(x) = x.
struct BackboneSpec {
    std::vector<std::size_t> widths;
    Activation activation = Activation::tanh;
    BackboneInit init;
};

/// Full model: backbone f(.; w) producing features, linear head
/// logits = V f(x) + b. Immutable value after construction; updates
/// produce new values.
struct ModelParams {
    std::size_t input_dim = 0;
    std::vector<DenseLayer> backbone;
    Matrix head_v;               // C x d_out
    std::vector<double> head_b;  // C

    std::size_t feature_dim() const {
        return backbone.empty() ? input_dim : backbone.back().out_dim();
    }
    std::size_t num_classes() const { return head_v.rows; }
    std::size_t backbone_param_count() const;
    std::size_t head_param_count() const { return head_v.data.size() + head_b.size(); }
    std::size_t param_count() const { return backbone_param_count() + head_param_count(); }
};

/// Which parameters train: the whole model (fine-tuning) or the head only
/// (linear probing; the backbone is frozen).
enum class TrainMode { full, head_only };

struct LayerGrad {
    Matrix weight;
    std::vector<double> bias;
};

/// Gradients for the trainable subset under a mode. In head_only mode the
/// backbone entries are absent.
struct GradientSet {
    TrainMode mode = TrainMode::full;
    std::vector<LayerGrad> backbone;
    Matrix head_v;
    std::vector<double> head_b;
};

struct ForwardResult {
    std::vector<double> features;
    std::vector<double> logits;
};

/// Builds a model for `input_dim`-dimensional data and `num_classes` classes.
/// Random init draws layer weights uniform in +-1/sqrt(fan_in) from streams
/// keyed (init.seed, "backbone-init", layer); file init loads a checkpoint and
/// checks its shape against the spec. The head is zero until initialized.
ModelParams build_model(const BackboneSpec& spec, std::size_t input_dim,
                        std::size_t num_classes);

/// Head init used by trained-from-scratch heads: zero bias, weights uniform
/// in +-1/sqrt(d_out).
void init_random_head(ModelParams& params, RngStream& stream);

/// Re-randomizes backbone weights in place from the given stream factory key.
void randomize_backbone(ModelParams& params, std::uint64_t seed);

ForwardResult forward(const ModelParams& params, std::span<const double> x);

/// Numerically stable softmax (max subtraction).
std::vector<double> softmax(std::span<const double> logits);

/// Mean softmax cross-entropy over the batch plus its exact analytic
/// gradients. head_only mode treats backbone weights as constants and emits
/// no backbone gradients.
std::pair<double, GradientSet> loss_and_grad(const ModelParams& params,
                                             std::span<const Sample> batch,
                                             TrainMode mode);

/// SGD step: trainable entries decremented by lr * grad, frozen entries
/// bit-identical.
ModelParams apply_update(const ModelParams& params, const GradientSet& grads,
                         double lr);

/// Fixed flattening order: backbone layers in order (weight row-major, then
/// bias), head V row-major, head b last.
std::vector<double> flatten(const ModelParams& params);
ModelParams unflatten(const ModelParams& like, std::span<const double> flat);

/// Flattens only the trainable coordinates under `mode` (same order; head
/// coordinates only in head_only mode).
std::vector<double> flatten_trainable(const ModelParams& params, TrainMode mode);

/// Returns params with the trainable coordinates shifted by `delta`.
ModelParams apply_trainable_delta(const ModelParams& params,
                                  std::span<const double> delta, TrainMode mode);

/// Argmax class of x under the model; ties resolve to the lowest class index.
std::uint32_t predict_class(const ModelParams& params, std::span<const double> x);

/// Fraction of test samples whose predicted class equals the label.
double evaluate(const ModelParams& params, const Dataset& test);

/// Checkpoint file: shape header plus float64 payload in flatten order.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace fedtune

#include "fedtune/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fedtune/errors.hpp"
#include "fedtune/matrix.hpp"

using namespace fedtune;

namespace {

ModelParams make_model(std::size_t input_dim, std::vector<std::size_t> widths,
                       Activation act, std::size_t num_classes, std::uint64_t seed) {
    BackboneSpec spec;
    spec.widths = std::move(widths);
    spec.activation = act;
    spec.init.seed = seed;
    ModelParams params = build_model(spec, input_dim, num_classes);
    RngStream head(stream_key(seed, "head"));
    init_random_head(params, head);
    return params;
}

std::vector<Sample> make_batch(std::size_t dim, std::uint32_t num_classes,
                               std::size_t n, RngStream& stream) {
    std::vector<Sample> batch(n);
    for (Sample& s : batch) {
        s.features.resize(dim);
        for (double& x : s.features) x = stream.normal();
        s.label = static_cast<std::uint32_t>(stream.uniform_below(num_classes));
    }
    return batch;
}

// Straight-line scalar recomputation of the affine/activation chain, written
// independently of the library's forward pass.
std::vector<double> oracle_forward_logits(const ModelParams& p,
                                          const std::vector<double>& x) {
    std::vector<double> a = x;
    for (const DenseLayer& layer : p.backbone) {
        std::vector<double> z(layer.out_dim());
        for (std::size_t r = 0; r < layer.out_dim(); ++r) {
            double s = layer.bias[r];
            for (std::size_t c = 0; c < layer.in_dim(); ++c) s += layer.weight(r, c) * a[c];
            if (layer.activation == Activation::relu && s < 0.0) s = 0.0;
            if (layer.activation == Activation::tanh) s = std::tanh(s);
            z[r] = s;
        }
        a = z;
    }
    std::vector<double> logits(p.num_classes());
    for (std::size_t r = 0; r < p.num_classes(); ++r) {
        double s = p.head_b[r];
        for (std::size_t c = 0; c < p.feature_dim(); ++c) s += p.head_v(r, c) * a[c];
        logits[r] = s;
    }
    return logits;
}

}  // namespace

TEST(Forward, IdentityComposition) {
    ModelParams p;
    p.input_dim = 2;
    p.head_v = Matrix(2, 2);
    p.head_v(0, 0) = 1.0;
    p.head_v(1, 1) = 1.0;
    p.head_b = {0.0, 0.0};
    const ForwardResult r = forward(p, std::vector<double>{1.0, 2.0});
    EXPECT_EQ(r.features, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(r.logits, (std::vector<double>{1.0, 2.0}));
}

TEST(Forward, ReluKillsNegatives) {
    ModelParams p;
    p.input_dim = 2;
    DenseLayer layer;
    layer.weight = Matrix(2, 2);
    layer.weight(0, 0) = -1.0;
    layer.weight(1, 1) = -1.0;
    layer.bias = {0.0, 0.0};
    layer.activation = Activation::relu;
    p.backbone.push_back(layer);
    p.head_v = Matrix(2, 2);
    p.head_v(0, 0) = 3.0;
    p.head_v(1, 1) = 3.0;
    p.head_b = {0.25, -0.5};
    const ForwardResult r = forward(p, std::vector<double>{1.0, 1.0});
    EXPECT_EQ(r.features, (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(r.logits, (std::vector<double>{0.25, -0.5}));
}

TEST(Forward, MatchesScalarOracle) {
    const ModelParams p = make_model(5, {7, 4}, Activation::tanh, 3, 99);
    RngStream stream(stream_key(99, "x"));
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(5);
        for (double& v : x) v = stream.normal();
        const ForwardResult r = forward(p, x);
        const std::vector<double> expect = oracle_forward_logits(p, x);
        ASSERT_EQ(r.logits.size(), expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i)
            EXPECT_NEAR(r.logits[i], expect[i], 1e-12);
    }
}

TEST(Forward, DimensionMismatchThrows) {
    const ModelParams p = make_model(4, {}, Activation::identity, 2, 1);
    EXPECT_THROW(forward(p, std::vector<double>{1.0}), ShapeError);
}

TEST(LossAndGrad, UniformSoftmaxAnalyticValue) {
    ModelParams p;
    p.input_dim = 2;
    p.head_v = Matrix(2, 2);  // zero params force logits (0, 0)
    p.head_b = {0.0, 0.0};
    Sample s;
    s.features = {0.7, -0.3};
    s.label = 1;
    const auto [loss, grads] = loss_and_grad(p, std::vector<Sample>{s}, TrainMode::full);
    EXPECT_NEAR(loss, std::log(2.0), 1e-12);
    EXPECT_NEAR(grads.head_b[0], 0.5, 1e-12);
    EXPECT_NEAR(grads.head_b[1], -0.5, 1e-12);
}

// Central finite differences over every coordinate; the analytic gradient
// must match within 1e-4 relative (1e-6 absolute floor).
TEST(LossAndGrad, FiniteDifferenceOracle) {
    RngStream stream(stream_key(7, "fd"));
    for (int trial = 0; trial < 15; ++trial) {
        const bool deep = trial % 2 == 0;
        const ModelParams p = make_model(3, deep ? std::vector<std::size_t>{5, 4}
                                                 : std::vector<std::size_t>{},
                                         deep ? Activation::tanh : Activation::identity, 3,
                                         1000 + trial);
        const std::vector<Sample> batch =
            make_batch(3, 3, 1 + trial % 4, stream);

        const auto [loss, grads] = loss_and_grad(p, batch, TrainMode::full);
        (void)loss;

        std::vector<double> analytic;
        for (const LayerGrad& lg : grads.backbone) {
            analytic.insert(analytic.end(), lg.weight.data.begin(), lg.weight.data.end());
            analytic.insert(analytic.end(), lg.bias.begin(), lg.bias.end());
        }
        analytic.insert(analytic.end(), grads.head_v.data.begin(), grads.head_v.data.end());
        analytic.insert(analytic.end(), grads.head_b.begin(), grads.head_b.end());

        const std::vector<double> flat = flatten(p);
        ASSERT_EQ(analytic.size(), flat.size());
        const double step = 1e-4;
        for (std::size_t i = 0; i < flat.size(); ++i) {
            std::vector<double> plus = flat, minus = flat;
            plus[i] += step;
            minus[i] -= step;
            const double lp =
                loss_and_grad(unflatten(p, plus), batch, TrainMode::full).first;
            const double lm =
                loss_and_grad(unflatten(p, minus), batch, TrainMode::full).first;
            const double numeric = (lp - lm) / (2.0 * step);
            const double tol = std::max(1e-6, 1e-4 * std::abs(numeric));
            EXPECT_NEAR(analytic[i], numeric, tol) << "coordinate " << i;
        }
    }
}

TEST(LossAndGrad, HeadOnlyOmitsBackboneAndFreezesIt) {
    const ModelParams p = make_model(4, {6}, Activation::tanh, 3, 5);
    RngStream stream(stream_key(5, "batch"));
    const std::vector<Sample> batch = make_batch(4, 3, 8, stream);

    const auto [loss, grads] = loss_and_grad(p, batch, TrainMode::head_only);
    (void)loss;
    EXPECT_TRUE(grads.backbone.empty());

    ModelParams updated = p;
    for (int step = 0; step < 50; ++step) {
        const auto [l, g] = loss_and_grad(updated, batch, TrainMode::head_only);
        (void)l;
        updated = apply_update(updated, g, 0.05);
    }
    ASSERT_EQ(updated.backbone.size(), p.backbone.size());
    for (std::size_t l = 0; l < p.backbone.size(); ++l) {
        EXPECT_EQ(updated.backbone[l].weight.data, p.backbone[l].weight.data);
        EXPECT_EQ(updated.backbone[l].bias, p.backbone[l].bias);
    }
}

TEST(LossAndGrad, EmptyBatchThrows) {
    const ModelParams p = make_model(2, {}, Activation::identity, 2, 1);
    EXPECT_THROW(loss_and_grad(p, std::vector<Sample>{}, TrainMode::full),
                 std::invalid_argument);
}

TEST(ApplyUpdate, ZeroLrIsBitwiseNoop) {
    const ModelParams p = make_model(3, {4}, Activation::tanh, 2, 3);
    RngStream stream(stream_key(3, "batch"));
    const std::vector<Sample> batch = make_batch(3, 2, 4, stream);
    const auto [loss, grads] = loss_and_grad(p, batch, TrainMode::full);
    (void)loss;
    const ModelParams q = apply_update(p, grads, 0.0);
    EXPECT_EQ(flatten(q), flatten(p));
}

TEST(ApplyUpdate, ScalarArithmetic) {
    ModelParams p;
    p.input_dim = 2;
    p.head_v = Matrix(2, 2);
    p.head_v(0, 0) = 1.0;
    p.head_b = {0.0, 0.0};
    GradientSet g;
    g.mode = TrainMode::full;
    g.head_v = Matrix(2, 2);
    g.head_v(0, 0) = 2.0;
    g.head_b = {0.0, 0.0};
    const ModelParams q = apply_update(p, g, 0.1);
    EXPECT_DOUBLE_EQ(q.head_v(0, 0), 0.8);
}

// The update op is linear in the gradients: applying g1 then g2 equals one
// step with g1 + g2.
TEST(ApplyUpdate, TwoStepsEqualSummedGradients) {
    const ModelParams p = make_model(3, {}, Activation::identity, 2, 11);
    RngStream stream(stream_key(11, "grads"));
    const std::vector<Sample> b1 = make_batch(3, 2, 4, stream);
    const std::vector<Sample> b2 = make_batch(3, 2, 4, stream);
    const GradientSet g1 = loss_and_grad(p, b1, TrainMode::full).second;
    const GradientSet g2 = loss_and_grad(p, b2, TrainMode::full).second;

    const ModelParams two_steps = apply_update(apply_update(p, g1, 0.3), g2, 0.3);

    GradientSet sum = g1;
    for (std::size_t i = 0; i < sum.head_v.data.size(); ++i)
        sum.head_v.data[i] += g2.head_v.data[i];
    for (std::size_t i = 0; i < sum.head_b.size(); ++i) sum.head_b[i] += g2.head_b[i];
    const ModelParams one_step = apply_update(p, sum, 0.3);

    const std::vector<double> a = flatten(two_steps), b = flatten(one_step);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ApplyUpdate, ShapeMismatchThrows) {
    const ModelParams p = make_model(3, {4}, Activation::tanh, 2, 3);
    GradientSet g;
    g.mode = TrainMode::full;
    g.head_v = Matrix(2, 3);
    g.head_b = {0.0, 0.0};
    EXPECT_THROW(apply_update(p, g, 0.1), ShapeError);
}

TEST(Flatten, RoundTripIsBitExact) {
    const ModelParams p = make_model(4, {5, 3}, Activation::relu, 3, 21);
    const ModelParams q = unflatten(p, flatten(p));
    EXPECT_EQ(flatten(q), flatten(p));
    for (std::size_t l = 0; l < p.backbone.size(); ++l)
        EXPECT_EQ(q.backbone[l].weight.data, p.backbone[l].weight.data);
}

TEST(Flatten, SingleCoordinateDistance) {
    const ModelParams p = make_model(4, {5}, Activation::tanh, 3, 22);
    std::vector<double> flat = flatten(p);
    flat[7] += 0.125;
    const ModelParams q = unflatten(p, flat);
    EXPECT_DOUBLE_EQ(l2_distance(flatten(p), flatten(q)), 0.125);
}

TEST(Flatten, DistanceMatchesScalarOracle) {
    const ModelParams a = make_model(4, {5}, Activation::tanh, 3, 23);
    const ModelParams b = make_model(4, {5}, Activation::tanh, 3, 24);
    const std::vector<double> fa = flatten(a), fb = flatten(b);
    double sum = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) sum += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    EXPECT_NEAR(l2_distance(fa, fb), std::sqrt(sum), 1e-12);
}

TEST(Flatten, UnflattenLengthMismatchThrows) {
    const ModelParams p = make_model(4, {5}, Activation::tanh, 3, 25);
    EXPECT_THROW(unflatten(p, std::vector<double>(3, 0.0)), ShapeError);
}

TEST(Evaluate, PerfectClassifier) {
    const Dataset ds = generate_gaussian_mixture(3, 4, 20, 8.0, 0.1, 31);
    // Linear head equivalent to nearest-class-mean: V row c = mean_c,
    // b_c = -||mean_c||^2 / 2. Separates a well-spread mixture exactly.
    ModelParams p;
    p.input_dim = 4;
    p.head_v = Matrix(3, 4);
    p.head_b.assign(3, 0.0);
    std::vector<std::size_t> counts(3, 0);
    for (const Sample& s : ds.samples) {
        for (std::size_t j = 0; j < 4; ++j) p.head_v(s.label, j) += s.features[j];
        ++counts[s.label];
    }
    for (std::uint32_t c = 0; c < 3; ++c) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            p.head_v(c, j) /= static_cast<double>(counts[c]);
            norm2 += p.head_v(c, j) * p.head_v(c, j);
        }
        p.head_b[c] = -0.5 * norm2;
    }
    EXPECT_DOUBLE_EQ(evaluate(p, ds), 1.0);
}

TEST(Evaluate, TieBreaksToLowestClass) {
    Dataset ds;
    ds.dim = 2;
    ds.num_classes = 2;
    ds.samples = {{{1.0, 0.0}, 0}, {{0.0, 1.0}, 1}, {{0.5, 0.5}, 0}};
    ModelParams p;
    p.input_dim = 2;
    p.head_v = Matrix(2, 2);
    p.head_b = {0.0, 0.0};
    // V = 0, b = 0: every logit ties, prediction is class 0.
    EXPECT_NEAR(evaluate(p, ds), 2.0 / 3.0, 1e-12);
}

TEST(Evaluate, RandomHeadsSitAtChanceLevel) {
    const Dataset ds = generate_gaussian_mixture(4, 6, 50, 4.0, 1.0, 77);
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        ModelParams p = build_model({{}, Activation::identity, {}}, 6, 4);
        RngStream stream(stream_key(seed, "chance-head"));
        init_random_head(p, stream);
        total += evaluate(p, ds);
    }
    EXPECT_NEAR(total / 30.0, 0.25, 0.05);
}

TEST(Softmax, NormalizesForAnyFiniteLogits) {
    RngStream stream(stream_key(41, "softmax"));
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> logits(2 + trial % 6);
        for (double& v : logits) v = stream.normal() * std::pow(10.0, trial % 5);
        const std::vector<double> p = softmax(logits);
        double sum = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(LossAndGrad, SmallFullBatchStepDoesNotIncreaseLoss) {
    RngStream stream(stream_key(55, "descent"));
    for (int trial = 0; trial < 50; ++trial) {
        const ModelParams p = make_model(3, {4}, Activation::tanh, 3, 500 + trial);
        const std::vector<Sample> batch = make_batch(3, 3, 16, stream);
        const auto [before, grads] = loss_and_grad(p, batch, TrainMode::full);
        const ModelParams q = apply_update(p, grads, 1e-3);
        const double after = loss_and_grad(q, batch, TrainMode::full).first;
        EXPECT_LE(after, before + 1e-12);
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const ModelParams p = make_model(4, {6, 3}, Activation::relu, 5, 61);
    const auto path =
        (std::filesystem::temp_directory_path() / "fedtune_ckpt.bin").string();
    save_checkpoint(p, path);
    const ModelParams q = load_checkpoint(path);
    EXPECT_EQ(q.input_dim, p.input_dim);
    EXPECT_EQ(flatten(q), flatten(p));
    EXPECT_EQ(q.backbone[0].activation, Activation::relu);
}

TEST(Checkpoint, BuildModelFromFileKeepsBackboneResizesHead) {
    const ModelParams p = make_model(4, {6}, Activation::tanh, 5, 62);
    const auto path =
        (std::filesystem::temp_directory_path() / "fedtune_ckpt2.bin").string();
    save_checkpoint(p, path);

    BackboneSpec spec;
    spec.init.kind = BackboneInit::Kind::file;
    spec.init.path = path;
    const ModelParams q = build_model(spec, 4, 3);
    EXPECT_EQ(q.num_classes(), 3u);
    EXPECT_EQ(q.backbone[0].weight.data, p.backbone[0].weight.data);
    for (double v : q.head_v.data) EXPECT_EQ(v, 0.0);

    EXPECT_THROW(build_model(spec, 9, 3), ShapeError);
}

TEST(Checkpoint, RejectsGarbage) {
    const auto path =
        (std::filesystem::temp_directory_path() / "fedtune_ckpt_bad.bin").string();
    std::ofstream(path, std::ios::binary) << "not a checkpoint";
    EXPECT_THROW(load_checkpoint(path), LoadError);
    EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), LoadError);
}

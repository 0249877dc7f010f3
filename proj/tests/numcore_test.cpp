#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "progress/numcore/adam.hpp"
#include "progress/numcore/attention.hpp"
#include "progress/numcore/checkpoint.hpp"
#include "progress/numcore/dense_net.hpp"

using namespace progress;
using namespace progress::numcore;
using Mat = Matrix<double>;
using Vec = Vector<double>;

namespace {

double relative_error(double a, double b) { return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6}); }

DenseNet<double> single_layer(const Mat& w, const Vec& b, Activation act) {
    DenseLayer<double> l{w, b, act, 0.0};
    return DenseNet<double>({l});
}

}  // namespace

TEST(Activation, GeluLimits) {
    EXPECT_DOUBLE_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(10.0), 10.0, 1e-6);
    EXPECT_NEAR(gelu(-10.0), 0.0, 1e-6);
}

TEST(DenseNetForward, IdentityLayer) {
    Rng rng(1);
    auto net = single_layer(Mat::Identity(2, 2), Vec::Zero(2), Activation::Identity);
    Vec x(2);
    x << 1, 2;
    const Vec y = forward_one(net, x, false, rng);
    EXPECT_DOUBLE_EQ(y(0), 1.0);
    EXPECT_DOUBLE_EQ(y(1), 2.0);
}

TEST(DenseNetForward, HandComputedTwoLayerChain) {
    Mat w1(2, 3);
    w1 << 1, 2, 3, -1, 0.5, 2;
    Vec b1(2);
    b1 << 0.1, -0.2;
    Mat w2(1, 2);
    w2 << 2, -3;
    Vec b2(1);
    b2 << 0.5;
    DenseNet<double> net({DenseLayer<double>{w1, b1, Activation::Relu, 0.0},
                          DenseLayer<double>{w2, b2, Activation::Identity, 0.0}});
    Rng rng(3);
    Vec x(3);
    x << 1, 0, 0;
    // hidden = relu([1.1, -1.2]) = [1.1, 0]; output = 2 * 1.1 + 0.5
    EXPECT_NEAR(forward_one(net, x, false, rng)(0), 2.7, 1e-15);
}

TEST(DenseNetForward, RejectsWrongInputDimension) {
    DenseNet<double> net({3, 4, 1}, {Activation::Gelu, Activation::Identity}, {0.0, 0.0}, 1);
    Rng rng(1);
    EXPECT_THROW(forward(net, Mat::Zero(2, 5), false, rng), ShapeError);
}

TEST(DenseNetStructure, ParameterCountAndChaining) {
    DenseNet<double> net({10, 128, 64, 32}, {Activation::Gelu, Activation::Gelu, Activation::Gelu}, {0.1, 0.1, 0.1}, 4);
    EXPECT_EQ(net.parameter_count(), 10 * 128 + 128 + 128 * 64 + 64 + 64 * 32 + 32);
    EXPECT_EQ(net.pack().size(), net.parameter_count());
    DenseLayer<double> a{Mat::Zero(3, 2), Vec::Zero(3), Activation::Relu, 0.0};
    DenseLayer<double> b{Mat::Zero(1, 4), Vec::Zero(1), Activation::Relu, 0.0};
    EXPECT_THROW(DenseNet<double>({a, b}), ShapeError);
}

TEST(DenseNetBackward, ZeroUpstreamGivesZeroGradients) {
    DenseNet<double> net({4, 6, 2}, {Activation::Gelu, Activation::Identity}, {0.0, 0.0}, 9);
    Rng rng(2);
    const auto cache = forward(net, Mat::Random(4, 3), false, rng);
    const auto g = backward(net, cache, Mat::Zero(2, 3));
    EXPECT_EQ(pack(g).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DenseNetBackward, LinearScalarCase) {
    Mat w(1, 1);
    w << 0.7;
    auto net = single_layer(w, Vec::Zero(1), Activation::Identity);
    Rng rng(1);
    const auto cache = forward(net, Mat::Constant(1, 1, 3.0), false, rng);
    const auto g = backward(net, cache, Mat::Ones(1, 1));
    EXPECT_DOUBLE_EQ(g.weight[0](0, 0), 3.0);
    EXPECT_DOUBLE_EQ(g.bias[0](0), 1.0);
}

TEST(DenseNetBackward, StaleCacheIsRejected) {
    DenseNet<double> net({2, 3, 1}, {Activation::Relu, Activation::Identity}, {0.0, 0.0}, 5);
    Rng rng(1);
    const auto cache = forward(net, Mat::Ones(2, 1), false, rng);
    net.unpack(net.pack());
    EXPECT_THROW(backward(net, cache, Mat::Ones(1, 1)), UsageError);
    DenseNet<double> other({2, 3, 1}, {Activation::Relu, Activation::Identity}, {0.0, 0.0}, 5);
    const auto fresh = forward(net, Mat::Ones(2, 1), false, rng);
    EXPECT_THROW(backward(other, fresh, Mat::Ones(1, 1)), UsageError);
}

// Central finite differences against analytic gradients for random nets up to
// 4 layers / 64 units, with dropout masks held fixed by reseeding.
TEST(DenseNetBackward, MatchesFiniteDifferences) {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 6; ++trial) {
        std::uniform_int_distribution<int> width(2, 64), depth(1, 4);
        const int n_layers = depth(gen);
        std::vector<Eigen::Index> dims{Eigen::Index(width(gen) % 12 + 2)};
        std::vector<Activation> acts;
        std::vector<double> rates;
        const Activation choices[] = {Activation::Gelu, Activation::Relu, Activation::Identity};
        for (int k = 0; k < n_layers; ++k) {
            dims.push_back(k + 1 == n_layers ? 3 : width(gen));
            acts.push_back(choices[(trial + k) % 3]);
            rates.push_back(k + 1 == n_layers ? 0.0 : 0.2);
        }
        DenseNet<double> net(dims, acts, rates, 100 + trial);
        const Mat x = Mat::Random(dims.front(), 4);
        const Mat weights = Mat::Random(3, 4);
        auto loss = [&](const DenseNet<double>& n) {
            Rng rng(77);
            return forward(n, x, true, rng).result().cwiseProduct(weights).sum();
        };
        Rng rng(77);
        const auto cache = forward(net, x, true, rng);
        const Vec analytic = pack(backward(net, cache, weights));
        Vec params = net.pack();
        double worst = 0;
        for (Eigen::Index i = 0; i < params.size(); ++i) {
            DenseNet<double> probe = net;
            Vec p = params;
            p(i) += 1e-5;
            probe.unpack(p);
            const double up = loss(probe);
            p(i) -= 2e-5;
            probe.unpack(p);
            const double down = loss(probe);
            worst = std::max(worst, relative_error(analytic(i), (up - down) / 2e-5));
        }
        EXPECT_LT(worst, 1e-4) << "trial " << trial;
    }
}

TEST(DenseNetDropout, InvertedDropoutIsUnbiased) {
    DenseNet<double> net({5, 8, 2}, {Activation::Identity, Activation::Identity}, {0.3, 0.0}, 21);
    Vec x(5);
    x << 1.0, -0.5, 2.0, 0.3, 1.5;
    Rng rng(5);
    const Vec reference = forward_one(net, x, false, rng);
    Vec mean = Vec::Zero(2);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) mean += forward_one(net, x, true, rng);
    mean /= draws;
    for (int k = 0; k < 2; ++k) EXPECT_LT(std::fabs(mean(k) - reference(k)), 0.02 * std::fabs(reference(k)));
}

TEST(DenseNetDropout, SameSeedSameOutput) {
    DenseNet<double> net({3, 16, 1}, {Activation::Gelu, Activation::Identity}, {0.5, 0.0}, 8);
    Vec x = Vec::Ones(3);
    Rng a(42), b(42);
    EXPECT_EQ(forward_one(net, x, true, a)(0), forward_one(net, x, true, b)(0));
}

TEST(Attention, SingleDimensionReturnsValueProjection) {
    AttentionBlock<double> block(1, 3);
    Vec x(1);
    x << 2.5;
    EXPECT_DOUBLE_EQ(attention_apply(block, x)(0), block.value(0, 0) * 2.5);
}

TEST(Attention, ZeroScoresGiveUniformWeights) {
    AttentionBlock<double> block(4, 3);
    block.query.setZero();
    block.key.setZero();
    const auto cache = attention_forward(block, Mat::Random(4, 1));
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(cache.weights[0](i, j), 0.25);
}

TEST(Attention, HandComputedTwoDimensionalCase) {
    AttentionBlock<double> block;
    block.query = Mat::Identity(2, 2);
    block.key = Mat::Identity(2, 2);
    block.value.resize(2, 2);
    block.value << 1, 0, 0, 2;
    Vec x(2);
    x << 1, 2;
    // q = k = [1, 2], v = [1, 4]; scores = [[1, 2], [2, 4]] / sqrt(2)
    const double r = std::sqrt(2.0);
    const double w00 = std::exp(1 / r) / (std::exp(1 / r) + std::exp(2 / r));
    const double w10 = std::exp(2 / r) / (std::exp(2 / r) + std::exp(4 / r));
    const Vec out = attention_apply(block, x);
    EXPECT_NEAR(out(0), w00 * 1 + (1 - w00) * 4, 1e-14);
    EXPECT_NEAR(out(1), w10 * 1 + (1 - w10) * 4, 1e-14);
}

TEST(Attention, RowsAreStochastic) {
    AttentionBlock<double> block(10, 17);
    const auto cache = attention_forward(block, Mat::Random(10, 20) * 3.0);
    for (const auto& a : cache.weights) {
        EXPECT_LT((a.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
        EXPECT_GE(a.minCoeff(), 0.0);
    }
}

TEST(Attention, GradientMatchesFiniteDifferences) {
    AttentionBlock<double> block(5, 23);
    const Mat x = Mat::Random(5, 3);
    const Mat weights = Mat::Random(5, 3);
    auto loss = [&](const AttentionBlock<double>& b, const Mat& input) {
        return attention_forward(b, input).output.cwiseProduct(weights).sum();
    };
    const auto g = attention_backward(block, attention_forward(block, x), weights);
    const Vec analytic = g.pack();
    const Vec params = block.pack();
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        AttentionBlock<double> probe = block;
        Vec p = params;
        p(i) += 1e-5;
        probe.unpack(p);
        const double up = loss(probe, x);
        p(i) -= 2e-5;
        probe.unpack(p);
        const double down = loss(probe, x);
        EXPECT_LT(relative_error(analytic(i), (up - down) / 2e-5), 1e-4) << "param " << i;
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Mat xp = x, xm = x;
        xp(i) += 1e-5;
        xm(i) -= 1e-5;
        EXPECT_LT(relative_error(g.input(i), (loss(block, xp) - loss(block, xm)) / 2e-5), 1e-4);
    }
}

TEST(Adam, ZeroGradientLeavesParameters) {
    Vec params = Vec::LinSpaced(4, -1, 1);
    const Vec before = params;
    AdamState<double> state(4);
    optimizer_step<double>(params, Vec::Zero(4), state);
    EXPECT_EQ(params, before);
    EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, ConstantGradientDescends) {
    Vec params = Vec::Zero(2);
    Vec grad(2);
    grad << 0.3, -2.0;
    AdamState<double> state(2);
    for (int i = 0; i < 100; ++i) optimizer_step<double>(params, grad, state);
    EXPECT_LT(params(0), 0.0);
    EXPECT_GT(params(1), 0.0);
}

TEST(Adam, OneStepMatchesHandFormula) {
    Vec params(1);
    params << 1.0;
    Vec grad(1);
    grad << 0.5;
    AdamState<double> state(1);
    state.first_moment << 0.2;
    state.second_moment << 0.04;
    state.step_count = 2;
    optimizer_step<double>(params, grad, state);
    const double m = 0.9 * 0.2 + 0.1 * 0.5;
    const double v = 0.999 * 0.04 + 0.001 * 0.25;
    const double mhat = m / (1 - std::pow(0.9, 3));
    const double vhat = v / (1 - std::pow(0.999, 3));
    EXPECT_NEAR(params(0), 1.0 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8), 1e-15);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
    DenseNet<double> net({4, 7, 3}, {Activation::Gelu, Activation::Relu}, {0.1, 0.0}, 99);
    const auto j = to_json(net);
    EXPECT_EQ(j.at("layer_dims").get<std::vector<int>>(), (std::vector<int>{4, 7, 3}));
    EXPECT_EQ(j.at("seed").get<int>(), 99);
    const auto restored = dense_net_from_json<double>(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(restored.pack(), net.pack());
    // row-major layout: element (0, 1) of the first weight is the second array entry
    EXPECT_EQ(j["weights"][0][1].get<double>(), net.layer(0).weight(0, 1));
}

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "progress/core/errors.hpp"
#include "progress/core/random.hpp"
#include "progress/numcore/activation.hpp"

namespace progress::numcore {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Non-deduced reference aliases so callers can pass plain matrices or expressions.
template <typename Scalar>
using ConstMatrixRef = const std::type_identity_t<Eigen::Ref<const Matrix<Scalar>>>&;
template <typename Scalar>
using ConstVectorRef = const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>&;
template <typename Scalar>
using VectorRef = std::type_identity_t<Eigen::Ref<Vector<Scalar>>>;

namespace detail {
inline std::uint64_t next_object_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

template <typename Scalar>
struct DenseLayer {
    Matrix<Scalar> weight;  // out x in
    Vector<Scalar> bias;    // out
    Activation activation = Activation::Identity;
    Scalar dropout_rate = Scalar(0);

    Eigen::Index in_dim() const { return weight.cols(); }
    Eigen::Index out_dim() const { return weight.rows(); }
};

/// Everything backward needs from one forward call. Samples are columns.
template <typename Scalar>
struct ForwardCache {
    std::uint64_t owner = 0;
    std::uint64_t generation = 0;
    Matrix<Scalar> input;
    std::vector<Matrix<Scalar>> pre_activation;
    std::vector<Matrix<Scalar>> output;  // after activation and dropout
    std::vector<Matrix<Scalar>> mask;    // inverted-dropout scale; empty when dropout was off

    const Matrix<Scalar>& result() const { return output.back(); }
};

template <typename Scalar>
struct DenseGradients {
    std::vector<Matrix<Scalar>> weight;
    std::vector<Vector<Scalar>> bias;
    Matrix<Scalar> input;  // d loss / d input, same layout as the forward input
};

/// Stack of affine layers with per-layer activation and inverted dropout.
template <typename Scalar>
class DenseNet {
public:
    DenseNet() : id_(detail::next_object_id()) {}

    /// `dims` lists layer widths including input, e.g. {10, 128, 64, 1}.
    /// Weights and biases are drawn uniform in +-1/sqrt(fan_in).
    DenseNet(const std::vector<Eigen::Index>& dims, const std::vector<Activation>& activations,
             const std::vector<Scalar>& dropout_rates, std::uint64_t seed)
        : id_(detail::next_object_id()), seed_(seed) {
        if (dims.size() < 2) throw ShapeError("DenseNet needs at least an input and an output dimension");
        const std::size_t n_layers = dims.size() - 1;
        if (activations.size() != n_layers || dropout_rates.size() != n_layers)
            throw ShapeError("DenseNet: activation/dropout lists must have one entry per layer");
        Rng rng(seed);
        for (std::size_t k = 0; k < n_layers; ++k) {
            if (dims[k] <= 0 || dims[k + 1] <= 0) throw ShapeError("DenseNet: layer widths must be positive");
            if (!(dropout_rates[k] >= Scalar(0) && dropout_rates[k] < Scalar(1)))
                throw ConfigError("DenseNet: dropout rate must lie in [0, 1)");
            const Scalar bound = Scalar(1) / std::sqrt(Scalar(dims[k]));
            std::uniform_real_distribution<double> init(-double(bound), double(bound));
            DenseLayer<Scalar> layer;
            layer.weight.resize(dims[k + 1], dims[k]);
            layer.bias.resize(dims[k + 1]);
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
                for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = Scalar(init(rng));
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = Scalar(init(rng));
            layer.activation = activations[k];
            layer.dropout_rate = dropout_rates[k];
            layers_.push_back(std::move(layer));
        }
    }

    explicit DenseNet(std::vector<DenseLayer<Scalar>> layers, std::uint64_t seed = 0)
        : layers_(std::move(layers)), id_(detail::next_object_id()), seed_(seed) {
        validate();
    }

    DenseNet(const DenseNet& other)
        : layers_(other.layers_), id_(detail::next_object_id()), seed_(other.seed_) {}
    DenseNet& operator=(const DenseNet& other) {
        if (this != &other) {
            layers_ = other.layers_;
            seed_ = other.seed_;
            ++generation_;
        }
        return *this;
    }
    DenseNet(DenseNet&&) noexcept = default;
    DenseNet& operator=(DenseNet&&) noexcept = default;

    std::size_t layer_count() const { return layers_.size(); }
    const DenseLayer<Scalar>& layer(std::size_t k) const { return layers_.at(k); }
    const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }

    /// Mutable access invalidates outstanding forward caches.
    DenseLayer<Scalar>& mutable_layer(std::size_t k) {
        ++generation_;
        return layers_.at(k);
    }

    Eigen::Index input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
    Eigen::Index output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t id() const { return id_; }
    std::uint64_t generation() const { return generation_; }

    Eigen::Index parameter_count() const {
        Eigen::Index n = 0;
        for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
        return n;
    }

    /// Flat parameter vector, layer by layer: weight (column-major) then bias.
    Vector<Scalar> pack() const {
        Vector<Scalar> flat(parameter_count());
        Eigen::Index pos = 0;
        for (const auto& l : layers_) {
            flat.segment(pos, l.weight.size()) = l.weight.reshaped();
            pos += l.weight.size();
            flat.segment(pos, l.bias.size()) = l.bias;
            pos += l.bias.size();
        }
        return flat;
    }

    void unpack(ConstVectorRef<Scalar> flat) {
        if (flat.size() != parameter_count()) throw ShapeError("DenseNet::unpack: wrong parameter vector length");
        Eigen::Index pos = 0;
        for (auto& l : layers_) {
            l.weight.reshaped() = flat.segment(pos, l.weight.size());
            pos += l.weight.size();
            l.bias = flat.segment(pos, l.bias.size());
            pos += l.bias.size();
        }
        ++generation_;
    }

private:
    void validate() const {
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const auto& l = layers_[k];
            if (l.bias.size() != l.weight.rows()) throw ShapeError("DenseNet: bias length differs from weight rows");
            if (k > 0 && layers_[k - 1].out_dim() != l.in_dim())
                throw ShapeError("DenseNet: layer " + std::to_string(k) + " input does not chain");
            if (!(l.dropout_rate >= Scalar(0) && l.dropout_rate < Scalar(1)))
                throw ConfigError("DenseNet: dropout rate must lie in [0, 1)");
        }
    }

    std::vector<DenseLayer<Scalar>> layers_;
    std::uint64_t id_;
    std::uint64_t generation_ = 0;
    std::uint64_t seed_ = 0;
};

/// Flat gradient vector in the same order as DenseNet::pack.
template <typename Scalar>
Vector<Scalar> pack(const DenseGradients<Scalar>& g) {
    Eigen::Index n = 0;
    for (std::size_t k = 0; k < g.weight.size(); ++k) n += g.weight[k].size() + g.bias[k].size();
    Vector<Scalar> flat(n);
    Eigen::Index pos = 0;
    for (std::size_t k = 0; k < g.weight.size(); ++k) {
        flat.segment(pos, g.weight[k].size()) = g.weight[k].reshaped();
        pos += g.weight[k].size();
        flat.segment(pos, g.bias[k].size()) = g.bias[k];
        pos += g.bias[k].size();
    }
    return flat;
}

/// Batched forward pass; `x` is input_dim x batch. Retained units are scaled
/// by 1/(1 - rate) when dropout is active.
template <typename Scalar>
ForwardCache<Scalar> forward(const DenseNet<Scalar>& net, ConstMatrixRef<Scalar> x,
                             bool dropout_active, Rng& rng) {
    if (net.layer_count() == 0) throw ShapeError("forward: empty network");
    if (x.rows() != net.input_dim())
        throw ShapeError("forward: input has " + std::to_string(x.rows()) + " rows, network expects " +
                         std::to_string(net.input_dim()));
    ForwardCache<Scalar> cache;
    cache.owner = net.id();
    cache.generation = net.generation();
    cache.input = x;
    const Matrix<Scalar>* current = &cache.input;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t k = 0; k < net.layer_count(); ++k) {
        const auto& l = net.layer(k);
        Matrix<Scalar> z = l.weight * (*current);
        z.colwise() += l.bias;
        Matrix<Scalar> h = activate(z, l.activation);
        if (dropout_active && l.dropout_rate > Scalar(0)) {
            const Scalar keep_scale = Scalar(1) / (Scalar(1) - l.dropout_rate);
            Matrix<Scalar> m(h.rows(), h.cols());
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i)
                    m(i, j) = unit(rng) < double(l.dropout_rate) ? Scalar(0) : keep_scale;
            h.array() *= m.array();
            cache.mask.push_back(std::move(m));
        } else {
            cache.mask.emplace_back();
        }
        cache.pre_activation.push_back(std::move(z));
        cache.output.push_back(std::move(h));
        current = &cache.output.back();
    }
    return cache;
}

/// Single-sample convenience overload.
template <typename Scalar>
Vector<Scalar> forward_one(const DenseNet<Scalar>& net, ConstVectorRef<Scalar> x,
                           bool dropout_active, Rng& rng) {
    Matrix<Scalar> batch = x;
    return forward(net, batch, dropout_active, rng).result().col(0);
}

template <typename Scalar>
DenseGradients<Scalar> backward(const DenseNet<Scalar>& net, const ForwardCache<Scalar>& cache,
                                ConstMatrixRef<Scalar> output_grad) {
    if (cache.owner != net.id() || cache.generation != net.generation() ||
        cache.output.size() != net.layer_count())
        throw UsageError("backward: cache was not produced by the current state of this network");
    if (output_grad.rows() != net.output_dim() || output_grad.cols() != cache.input.cols())
        throw ShapeError("backward: output gradient shape does not match the forward output");
    const std::size_t n_layers = net.layer_count();
    DenseGradients<Scalar> grads;
    grads.weight.resize(n_layers);
    grads.bias.resize(n_layers);
    Matrix<Scalar> upstream = output_grad;
    for (std::size_t k = n_layers; k-- > 0;) {
        const auto& l = net.layer(k);
        if (cache.mask[k].size() != 0) upstream.array() *= cache.mask[k].array();
        Matrix<Scalar> dz = upstream.cwiseProduct(activate_derivative(cache.pre_activation[k], l.activation));
        const Matrix<Scalar>& layer_input = k == 0 ? cache.input : cache.output[k - 1];
        grads.weight[k] = dz * layer_input.transpose();
        grads.bias[k] = dz.rowwise().sum();
        upstream = l.weight.transpose() * dz;
    }
    grads.input = std::move(upstream);
    return grads;
}

}  // namespace progress::numcore

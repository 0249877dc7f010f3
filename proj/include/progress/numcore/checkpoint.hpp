#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "progress/numcore/attention.hpp"
#include "progress/numcore/dense_net.hpp"

namespace progress::numcore {

namespace detail {

template <typename Scalar>
std::vector<double> row_major(const Matrix<Scalar>& m) {
    std::vector<double> flat;
    flat.reserve(std::size_t(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(double(m(i, j)));
    return flat;
}

template <typename Scalar>
Matrix<Scalar> from_row_major(const std::vector<double>& flat, Eigen::Index rows, Eigen::Index cols) {
    if (Eigen::Index(flat.size()) != rows * cols) throw ShapeError("checkpoint: weight array has wrong length");
    Matrix<Scalar> m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = Scalar(flat[std::size_t(i * cols + j)]);
    return m;
}

}  // namespace detail

/// {layer_dims, activations, dropout_rates, weights (row-major), biases, seed}
template <typename Scalar>
nlohmann::json to_json(const DenseNet<Scalar>& net) {
    nlohmann::json j;
    std::vector<Eigen::Index> dims;
    if (net.layer_count() > 0) dims.push_back(net.input_dim());
    std::vector<std::string> acts;
    std::vector<double> rates;
    nlohmann::json weights = nlohmann::json::array();
    nlohmann::json biases = nlohmann::json::array();
    for (const auto& l : net.layers()) {
        dims.push_back(l.out_dim());
        acts.emplace_back(to_string(l.activation));
        rates.push_back(double(l.dropout_rate));
        weights.push_back(detail::row_major(l.weight));
        std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
        biases.push_back(b);
    }
    j["layer_dims"] = dims;
    j["activations"] = acts;
    j["dropout_rates"] = rates;
    j["weights"] = weights;
    j["biases"] = biases;
    j["seed"] = net.seed();
    return j;
}

template <typename Scalar>
DenseNet<Scalar> dense_net_from_json(const nlohmann::json& j) {
    const auto dims = j.at("layer_dims").get<std::vector<Eigen::Index>>();
    const auto acts = j.at("activations").get<std::vector<std::string>>();
    const auto rates = j.at("dropout_rates").get<std::vector<double>>();
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (dims.size() < 2 || acts.size() != dims.size() - 1 || rates.size() != acts.size() ||
        weights.size() != acts.size() || biases.size() != acts.size())
        throw ShapeError("checkpoint: inconsistent layer lists");
    std::vector<DenseLayer<Scalar>> layers;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        DenseLayer<Scalar> l;
        l.weight = detail::from_row_major<Scalar>(weights[k].get<std::vector<double>>(), dims[k + 1], dims[k]);
        const auto b = biases[k].get<std::vector<double>>();
        if (Eigen::Index(b.size()) != dims[k + 1]) throw ShapeError("checkpoint: bias array has wrong length");
        l.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), Eigen::Index(b.size())).template cast<Scalar>();
        l.activation = activation_from_string(acts[k]);
        l.dropout_rate = Scalar(rates[k]);
        layers.push_back(std::move(l));
    }
    return DenseNet<Scalar>(std::move(layers), j.value("seed", std::uint64_t{0}));
}

template <typename Scalar>
nlohmann::json to_json(const AttentionBlock<Scalar>& block) {
    return {{"dim", block.dim()},
            {"query", detail::row_major(block.query)},
            {"key", detail::row_major(block.key)},
            {"value", detail::row_major(block.value)}};
}

template <typename Scalar>
AttentionBlock<Scalar> attention_from_json(const nlohmann::json& j) {
    const Eigen::Index d = j.at("dim").get<Eigen::Index>();
    AttentionBlock<Scalar> block;
    block.query = detail::from_row_major<Scalar>(j.at("query").get<std::vector<double>>(), d, d);
    block.key = detail::from_row_major<Scalar>(j.at("key").get<std::vector<double>>(), d, d);
    block.value = detail::from_row_major<Scalar>(j.at("value").get<std::vector<double>>(), d, d);
    return block;
}

}  // namespace progress::numcore

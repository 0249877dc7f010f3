#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "progress/core/errors.hpp"

namespace progress::numcore {

enum class Activation { Identity, Relu, Gelu };

inline std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Gelu: return "gelu";
    }
    return "identity";
}

inline Activation activation_from_string(std::string_view name) {
    if (name == "identity") return Activation::Identity;
    if (name == "relu") return Activation::Relu;
    if (name == "gelu") return Activation::Gelu;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

/// Exact GELU: x * Phi(x).
template <typename Scalar>
Scalar gelu(Scalar x) {
    using std::erf;
    using std::sqrt;
    return Scalar(0.5) * x * (Scalar(1) + erf(x / sqrt(Scalar(2))));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
    using std::erf;
    using std::exp;
    using std::sqrt;
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + erf(x / sqrt(Scalar(2))));
    const Scalar pdf = exp(Scalar(-0.5) * x * x) / sqrt(Scalar(2 * M_PI));
    return cdf + x * pdf;
}

template <typename Derived>
auto activate(const Eigen::MatrixBase<Derived>& z, Activation a) {
    using Scalar = typename Derived::Scalar;
    using Plain = typename Derived::PlainObject;
    switch (a) {
        case Activation::Relu: return Plain(z.cwiseMax(Scalar(0)));
        case Activation::Gelu: return Plain(z.unaryExpr([](Scalar v) { return gelu(v); }));
        case Activation::Identity: break;
    }
    return Plain(z);
}

/// Elementwise derivative of the activation evaluated at pre-activation `z`.
template <typename Derived>
auto activate_derivative(const Eigen::MatrixBase<Derived>& z, Activation a) {
    using Scalar = typename Derived::Scalar;
    using Plain = typename Derived::PlainObject;
    switch (a) {
        case Activation::Relu:
            return Plain(z.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); }));
        case Activation::Gelu: return Plain(z.unaryExpr([](Scalar v) { return gelu_derivative(v); }));
        case Activation::Identity: break;
    }
    return Plain(Plain::Ones(z.rows(), z.cols()));
}

}  // namespace progress::numcore

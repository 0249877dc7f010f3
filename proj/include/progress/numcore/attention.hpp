#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "progress/numcore/dense_net.hpp"

namespace progress::numcore {

/// Soft self-attention over the entries of a single feature vector:
/// scores = (Wq x)(Wk x)^T / sqrt(d), row-softmaxed, applied to Wv x.
template <typename Scalar>
struct AttentionBlock {
    Matrix<Scalar> query;
    Matrix<Scalar> key;
    Matrix<Scalar> value;

    AttentionBlock() = default;
    AttentionBlock(Eigen::Index d, std::uint64_t seed) : query(d, d), key(d, d), value(d, d) {
        Rng rng(seed);
        const double bound = 1.0 / std::sqrt(double(d));
        std::uniform_real_distribution<double> init(-bound, bound);
        for (Matrix<Scalar>* m : {&query, &key, &value})
            for (Eigen::Index j = 0; j < d; ++j)
                for (Eigen::Index i = 0; i < d; ++i) (*m)(i, j) = Scalar(init(rng));
    }

    Eigen::Index dim() const { return query.rows(); }
    Eigen::Index parameter_count() const { return query.size() + key.size() + value.size(); }
    Scalar scale() const { return Scalar(1) / std::sqrt(Scalar(dim())); }

    Vector<Scalar> pack() const {
        Vector<Scalar> flat(parameter_count());
        const Eigen::Index n = query.size();
        flat.segment(0, n) = query.reshaped();
        flat.segment(n, n) = key.reshaped();
        flat.segment(2 * n, n) = value.reshaped();
        return flat;
    }
    void unpack(ConstVectorRef<Scalar> flat) {
        const Eigen::Index n = query.size();
        if (flat.size() != 3 * n) throw ShapeError("AttentionBlock::unpack: wrong parameter vector length");
        query.reshaped() = flat.segment(0, n);
        key.reshaped() = flat.segment(n, n);
        value.reshaped() = flat.segment(2 * n, n);
    }
};

template <typename Scalar>
struct AttentionCache {
    Matrix<Scalar> input;
    Matrix<Scalar> q, k, v;                // d x batch
    std::vector<Matrix<Scalar>> weights;  // per sample, d x d row-stochastic
    Matrix<Scalar> output;
};

template <typename Scalar>
struct AttentionGradients {
    Matrix<Scalar> query, key, value;
    Matrix<Scalar> input;

    Vector<Scalar> pack() const {
        Vector<Scalar> flat(query.size() * 3);
        const Eigen::Index n = query.size();
        flat.segment(0, n) = query.reshaped();
        flat.segment(n, n) = key.reshaped();
        flat.segment(2 * n, n) = value.reshaped();
        return flat;
    }
};

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Matrix<Scalar> row_softmax(const Matrix<Scalar>& scores) {
    Matrix<Scalar> out(scores.rows(), scores.cols());
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const Scalar m = scores.row(r).maxCoeff();
        out.row(r) = (scores.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

template <typename Scalar>
AttentionCache<Scalar> attention_forward(const AttentionBlock<Scalar>& block,
                                         ConstMatrixRef<Scalar> x) {
    const Eigen::Index d = block.dim();
    if (x.rows() != d || block.key.rows() != d || block.value.rows() != d || block.query.cols() != d)
        throw ShapeError("attention: input dimension does not match projections");
    AttentionCache<Scalar> cache;
    cache.input = x;
    cache.q = block.query * x;
    cache.k = block.key * x;
    cache.v = block.value * x;
    cache.output.resize(d, x.cols());
    cache.weights.reserve(std::size_t(x.cols()));
    const Scalar s = block.scale();
    for (Eigen::Index n = 0; n < x.cols(); ++n) {
        Matrix<Scalar> scores = s * cache.q.col(n) * cache.k.col(n).transpose();
        Matrix<Scalar> a = row_softmax(scores);
        cache.output.col(n) = a * cache.v.col(n);
        cache.weights.push_back(std::move(a));
    }
    return cache;
}

template <typename Scalar>
Vector<Scalar> attention_apply(const AttentionBlock<Scalar>& block, ConstVectorRef<Scalar> x) {
    Matrix<Scalar> batch = x;
    return attention_forward(block, batch).output.col(0);
}

template <typename Scalar>
AttentionGradients<Scalar> attention_backward(const AttentionBlock<Scalar>& block, const AttentionCache<Scalar>& cache,
                                              ConstMatrixRef<Scalar> output_grad) {
    const Eigen::Index d = block.dim();
    if (output_grad.rows() != d || output_grad.cols() != cache.input.cols())
        throw ShapeError("attention_backward: gradient shape mismatch");
    const Scalar s = block.scale();
    Matrix<Scalar> dq(d, cache.input.cols()), dk(d, cache.input.cols()), dv(d, cache.input.cols());
    for (Eigen::Index n = 0; n < cache.input.cols(); ++n) {
        const Matrix<Scalar>& a = cache.weights[std::size_t(n)];
        const Vector<Scalar> g = output_grad.col(n);
        const Matrix<Scalar> da = g * cache.v.col(n).transpose();
        dv.col(n) = a.transpose() * g;
        // softmax Jacobian, row by row
        const Vector<Scalar> row_dot = (da.array() * a.array()).rowwise().sum();
        Matrix<Scalar> dscores = a.array() * (da.colwise() - row_dot).array();
        dscores *= s;
        dq.col(n) = dscores * cache.k.col(n);
        dk.col(n) = dscores.transpose() * cache.q.col(n);
    }
    AttentionGradients<Scalar> grads;
    grads.query = dq * cache.input.transpose();
    grads.key = dk * cache.input.transpose();
    grads.value = dv * cache.input.transpose();
    grads.input = block.query.transpose() * dq + block.key.transpose() * dk + block.value.transpose() * dv;
    return grads;
}

}  // namespace progress::numcore

#pragma once

#include <cmath>

#include "progress/numcore/dense_net.hpp"

namespace progress::numcore {

/// Per-row affine map (v - mean) / sd applied to column samples.
template <typename Scalar>
struct Standardizer {
    Vector<Scalar> mean;
    Vector<Scalar> sd;

    static Standardizer identity(Eigen::Index d) { return {Vector<Scalar>::Zero(d), Vector<Scalar>::Ones(d)}; }

    /// Rows with zero spread keep sd 1 so they pass through centred.
    static Standardizer fit(ConstMatrixRef<Scalar> x) {
        if (x.cols() == 0) throw DataError("standardizer: no samples");
        Standardizer s;
        s.mean = x.rowwise().mean();
        s.sd.resize(x.rows());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const Scalar var = x.cols() > 1
                                   ? (x.row(r).array() - s.mean(r)).square().sum() / Scalar(x.cols() - 1)
                                   : Scalar(0);
            s.sd(r) = var > Scalar(0) ? Scalar(std::sqrt(var)) : Scalar(1);
        }
        return s;
    }

    Matrix<Scalar> apply(ConstMatrixRef<Scalar> x) const {
        if (x.rows() != mean.size()) throw ShapeError("standardizer: wrong number of rows");
        return (x.colwise() - mean).array().colwise() / sd.array();
    }
};

}  // namespace progress::numcore

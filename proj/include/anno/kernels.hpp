#pragma once

// Small dense kernels shared by the learning and prompting code. All take
// Eigen expressions and keep the caller's scalar type.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "anno/error.hpp"

namespace anno {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VectorXd = Vector<double>;
using MatrixXd = Matrix<double>;

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& values) {
    if (!values.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite input");
}

// Max-shifted softmax of a column vector.
template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    if (logits.size() == 0) throw Error(ErrorCode::NonFiniteInput, "softmax of an empty vector");
    require_finite(logits);
    Vector<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return e / e.sum();
}

template <typename Derived>
Vector<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    require_finite(logits);
    const Scalar m = logits.maxCoeff();
    const Scalar lse = m + std::log((logits.array() - m).exp().sum());
    return (logits.array() - lse).matrix();
}

// Column-wise softmax: each column of `logits` is one distribution.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_columns(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    require_finite(logits);
    Matrix<Scalar> out = (logits.rowwise() - logits.colwise().maxCoeff()).array().exp().matrix();
    out.array().rowwise() /= out.colwise().sum().array();
    return out;
}

// First index of the largest coefficient.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& values) {
    Eigen::Index best = 0;
    values.maxCoeff(&best);
    return best;
}

template <typename A, typename B>
typename A::Scalar cosine(const Eigen::MatrixBase<A>& u, const Eigen::MatrixBase<B>& v) {
    using Scalar = typename A::Scalar;
    if (u.size() != v.size()) throw Error(ErrorCode::DimMismatch, "cosine of vectors with different dims");
    const Scalar nu = u.norm();
    const Scalar nv = v.norm();
    if (nu == Scalar(0) || nv == Scalar(0)) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
    const Scalar c = u.dot(v) / (nu * nv);
    return std::clamp(c, Scalar(-1), Scalar(1));
}

}  // namespace anno

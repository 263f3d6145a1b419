#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "exoendo/errors.hpp"

namespace exoendo {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct CccParams {
    double tikhonov_lambda = 0.01;
    double threshold_epsilon = 0.05;
};

// Column-centered copy.
template <typename Derived>
Mat<typename Derived::Scalar> center(const Eigen::MatrixBase<Derived>& x) {
    Mat<typename Derived::Scalar> c = x;
    if (c.rows() > 0) c.rowwise() -= c.colwise().mean();
    return c;
}

// Sample covariance, normalized by N.
template <typename Derived>
Mat<typename Derived::Scalar> covariance(const Eigen::MatrixBase<Derived>& x) {
    if (x.rows() < 2) throw dimension_error("covariance: need at least 2 rows");
    auto c = center(x);
    Mat<typename Derived::Scalar> s = c.transpose() * c / typename Derived::Scalar(c.rows());
    return (s + s.transpose()) / 2;
}

template <typename DX, typename DY>
Mat<typename DX::Scalar> cross_covariance(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    if (x.rows() != y.rows()) throw dimension_error("cross_covariance: row count mismatch");
    if (x.rows() < 2) throw dimension_error("cross_covariance: need at least 2 rows");
    return center(x).transpose() * center(y) / typename DX::Scalar(x.rows());
}

// (S + lam I)^{-1/2}, eigenvalues clamped from below at lam/10.
template <typename Scalar>
Mat<Scalar> inv_sqrt_regularized(const Mat<Scalar>& s, Scalar lam, const char* block = "?") {
    const Eigen::Index p = s.rows();
    Mat<Scalar> r = (s + s.transpose()) / 2;
    r.diagonal().array() += lam;
    Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(r);
    if (es.info() != Eigen::Success)
        throw singularity_error(std::string("inverse square root failed for block ") + block);
    Vec<Scalar> w = es.eigenvalues().cwiseMax(lam / 10);
    Vec<Scalar> iw = w.array().rsqrt();
    Mat<Scalar> out = es.eigenvectors() * iw.asDiagonal() * es.eigenvectors().transpose();
    if (!out.allFinite() || out.rows() != p)
        throw singularity_error(std::string("inverse square root not finite for block ") + block);
    return out;
}

// CCC from precomputed second-moment blocks. Z may have zero columns.
template <typename Scalar>
Scalar ccc_from_moments(const Mat<Scalar>& sxx, const Mat<Scalar>& syy, const Mat<Scalar>& sxy,
                        const Mat<Scalar>& sxz, const Mat<Scalar>& szz, const Mat<Scalar>& szy,
                        Scalar lam) {
    if (sxx.rows() == 0 || syy.rows() == 0) return Scalar(0);
    Mat<Scalar> m = sxy;
    if (szz.rows() > 0) {
        Mat<Scalar> zr = szz;
        zr.diagonal().array() += lam;
        Eigen::LDLT<Mat<Scalar>> ldlt(zr);
        if (ldlt.info() != Eigen::Success) throw singularity_error("regularized inverse failed for block ZZ");
        m -= sxz * ldlt.solve(szy);
    }
    Mat<Scalar> v = inv_sqrt_regularized<Scalar>(sxx, lam, "XX") * m * inv_sqrt_regularized<Scalar>(syy, lam, "YY");
    Scalar t = v.squaredNorm();
    if (!std::isfinite(double(t))) throw numeric_error("ccc: non-finite result");
    return t;
}

// Conditional correlation coefficient tr(V^T V); inputs centered internally.
template <typename DX, typename DY, typename DZ>
typename DX::Scalar ccc(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                        const Eigen::MatrixBase<DZ>& z, const CccParams& params = {}) {
    using Scalar = typename DX::Scalar;
    const Eigen::Index n = x.rows();
    if (y.rows() != n || (z.cols() > 0 && z.rows() != n)) throw dimension_error("ccc: row count mismatch");
    if (n < 2) throw dimension_error("ccc: need at least 2 rows");
    if (!x.allFinite() || !y.allFinite() || !z.allFinite()) throw numeric_error("ccc: non-finite input");
    Mat<Scalar> xc = center(x), yc = center(y);
    Mat<Scalar> zc = z.cols() > 0 ? center(z) : Mat<Scalar>(n, 0);
    const Scalar inv_n = Scalar(1) / Scalar(n);
    Mat<Scalar> sxx = xc.transpose() * xc * inv_n;
    Mat<Scalar> syy = yc.transpose() * yc * inv_n;
    Mat<Scalar> sxy = xc.transpose() * yc * inv_n;
    Mat<Scalar> sxz = xc.transpose() * zc * inv_n;
    Mat<Scalar> szz = zc.transpose() * zc * inv_n;
    Mat<Scalar> szy = zc.transpose() * yc * inv_n;
    return ccc_from_moments<Scalar>(sxx, syy, sxy, sxz, szz, szy, Scalar(params.tikhonov_lambda));
}

// Discrete joint over (S, A, S') with S a vector of finite-valued variables.
// Flat index: (s * |A| + a) * |S| + s', with s encoded mixed-radix, variable 0 fastest.
struct TabularModel {
    std::vector<int> state_cardinalities;
    int action_cardinality = 1;
    std::vector<double> joint;

    std::int64_t num_states() const;
    std::int64_t index(std::int64_t s, int a, std::int64_t s_next) const {
        return (s * action_cardinality + a) * num_states() + s_next;
    }
    std::vector<int> decode(std::int64_t s) const;
    std::int64_t encode(const std::vector<int>& values) const;
    void validate() const;
};

enum class CmiMode { full, diachronic };

// I(X'; [E,A] | X) or I(X'; [E,A,E'] | X) in nats, X the variables in exo_index_set.
double cmi_tabular(const TabularModel& model, const std::vector<int>& exo_index_set, CmiMode mode,
                   bool* empty_support = nullptr);

} // namespace exoendo

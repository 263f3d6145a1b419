#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "exoendo/errors.hpp"

namespace exoendo {

// Point on {W in R^{d x p} : W^T W = I}.
struct StiefelPoint {
    Eigen::MatrixXd w;

    StiefelPoint() = default;
    // Re-orthonormalizes small violations (<= 1e-4), rejects larger ones.
    explicit StiefelPoint(Eigen::MatrixXd m);

    Eigen::Index d() const { return w.rows(); }
    Eigen::Index p() const { return w.cols(); }
    double orthonormality_residual() const;
};

struct DescentSettings {
    int max_iterations = 400;
    double gradient_norm_tolerance = 1e-6;
    double armijo_sufficient_decrease = 1e-4;
    double backtrack_factor = 0.5;
    int max_backtracks = 30;
    double fd_step = 1e-6;
    // Relative objective decrease below this over `stall_window` iterations stops the run.
    double relative_decrease_tolerance = 1e-12;
    int stall_window = 5;

    void validate() const;
};

using Objective = std::function<double(const Eigen::MatrixXd&)>;
using Gradient = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

// G - W sym(W^T G)
template <typename DW, typename DG>
Eigen::Matrix<typename DW::Scalar, Eigen::Dynamic, Eigen::Dynamic> tangent_project(
    const Eigen::MatrixBase<DW>& w, const Eigen::MatrixBase<DG>& g) {
    if (w.rows() != g.rows() || w.cols() != g.cols()) throw dimension_error("tangent_project: shape mismatch");
    Eigen::Matrix<typename DW::Scalar, Eigen::Dynamic, Eigen::Dynamic> wg = w.transpose() * g;
    return g - w * ((wg + wg.transpose()) / 2);
}

inline Eigen::MatrixXd tangent_project(const StiefelPoint& point, const Eigen::MatrixXd& g) {
    return tangent_project(point.w, g);
}

// Thin-QR retraction with positive diagonal of R.
Eigen::MatrixXd qr_orthonormalize(const Eigen::MatrixXd& m);
StiefelPoint retract(const StiefelPoint& point, const Eigen::MatrixXd& step);

// Central-difference Euclidean gradient.
Eigen::MatrixXd numeric_gradient(const Objective& f, const StiefelPoint& point, double fd_step);

StiefelPoint random_stiefel(int d, int p, std::uint64_t seed);

struct MinimizeResult {
    StiefelPoint point;
    double value = 0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;
};

MinimizeResult minimize(const Objective& f, int d, int p, const std::optional<StiefelPoint>& init,
                        const DescentSettings& settings, std::uint64_t rng_seed, const Gradient& grad = {});

} // namespace exoendo

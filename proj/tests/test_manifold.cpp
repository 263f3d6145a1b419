#include "doctest.h"

#include <cmath>

#include "exoendo/manifold.hpp"
#include "exoendo/rng.hpp"

using namespace exoendo;
using Eigen::MatrixXd;

namespace {

MatrixXd gaussian(Rng& rng, int r, int c) {
    MatrixXd m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = rng.normal();
    return m;
}

MatrixXd random_symmetric(Rng& rng, int d) {
    MatrixXd g = gaussian(rng, d, d);
    return (g + g.transpose()) / 2;
}

} // namespace

TEST_CASE("tangent projection removes the normal component") {
    StiefelPoint w = random_stiefel(5, 2, 1);
    CHECK(tangent_project(w, w.w).cwiseAbs().maxCoeff() < 1e-12);

    MatrixXd e1(2, 1), e2(2, 1);
    e1 << 1, 0;
    e2 << 0, 1;
    CHECK((tangent_project(StiefelPoint(e1), e2) - e2).norm() < 1e-15);

    Rng rng(2);
    StiefelPoint p = random_stiefel(4, 2, 3);
    MatrixXd t = tangent_project(p, gaussian(rng, 4, 2));
    MatrixXd skew = p.w.transpose() * t + t.transpose() * p.w;
    CHECK(skew.cwiseAbs().maxCoeff() < 1e-10);
    CHECK_THROWS_AS(tangent_project(p, MatrixXd(3, 2)), dimension_error);
}

TEST_CASE("retraction") {
    StiefelPoint p = random_stiefel(6, 3, 4);
    CHECK((retract(p, MatrixXd::Zero(6, 3)).w - p.w).cwiseAbs().maxCoeff() < 1e-12);

    MatrixXd e1(2, 1), e2(2, 1);
    e1 << 1, 0;
    e2 << 0, 1;
    MatrixXd expect = (e1 + e2) / std::sqrt(2.0);
    CHECK((retract(StiefelPoint(e1), e2).w - expect).norm() < 1e-12);

    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        StiefelPoint q = retract(p, gaussian(rng, 6, 3));
        CHECK(q.orthonormality_residual() < 1e-10);
    }
    CHECK_THROWS_AS(retract(StiefelPoint(e1), -e1), retraction_error);
}

TEST_CASE("stiefel point construction") {
    MatrixXd m = random_stiefel(4, 2, 6).w;
    m(0, 0) += 1e-6;
    StiefelPoint p(m);
    CHECK(p.orthonormality_residual() < 1e-12);
    MatrixXd bad = MatrixXd::Ones(3, 2);
    CHECK_THROWS_AS(StiefelPoint{bad}, dimension_error);
}

TEST_CASE("numeric gradient") {
    Rng rng(7);
    MatrixXd a = random_symmetric(rng, 5);
    StiefelPoint p = random_stiefel(5, 2, 8);
    Objective quad = [&](const MatrixXd& w) { return (w.transpose() * a * w).trace(); };
    MatrixXd g = numeric_gradient(quad, p, 1e-6);
    MatrixXd expect = 2 * a * p.w;
    CHECK((g - expect).norm() / expect.norm() < 1e-5);

    Objective constant = [](const MatrixXd&) { return 3.0; };
    CHECK(numeric_gradient(constant, p, 1e-6).cwiseAbs().maxCoeff() == 0.0);

    Objective linear = [](const MatrixXd& w) { return w.sum(); };
    CHECK((numeric_gradient(linear, p, 1e-6) - MatrixXd::Ones(5, 2)).cwiseAbs().maxCoeff() < 1e-8);

    Objective broken = [](const MatrixXd& w) { return w(1, 1) > 0.0 ? std::nan("") : 0.0; };
    MatrixXd start = MatrixXd::Zero(5, 2);
    start(0, 0) = start(1, 1) = 1;
    CHECK_THROWS_AS(numeric_gradient(broken, StiefelPoint(start), 1e-6), numeric_error);
}

TEST_CASE("minimize finds the smallest eigenvector") {
    Rng rng(9);
    for (int t = 0; t < 5; ++t) {
        MatrixXd a = random_symmetric(rng, 4);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
        Objective f = [&](const MatrixXd& w) { return (w.transpose() * a * w)(0, 0); };
        MinimizeResult r = minimize(f, 4, 1, std::nullopt, DescentSettings{}, 100 + t);
        CHECK(r.value == doctest::Approx(es.eigenvalues()(0)).epsilon(1e-6));
        CHECK(std::abs(std::abs(r.point.w.col(0).dot(es.eigenvectors().col(0))) - 1) < 1e-6);
    }
}

TEST_CASE("minimize over the orthogonal group") {
    Objective f = [](const MatrixXd& w) { return (w - MatrixXd::Identity(3, 3)).squaredNorm(); };
    // Start inside the identity component so I is reachable.
    MatrixXd init = random_stiefel(3, 3, 10).w;
    if (init.determinant() < 0) init.col(0) = -init.col(0);
    MinimizeResult r = minimize(f, 3, 3, StiefelPoint(init), DescentSettings{}, 0);
    CHECK(r.value < 1e-8);
}

TEST_CASE("minimize with a constant objective returns the initial point") {
    Objective f = [](const MatrixXd&) { return 1.0; };
    StiefelPoint init = random_stiefel(4, 2, 11);
    MinimizeResult r = minimize(f, 4, 2, init, DescentSettings{}, 0);
    CHECK(r.iterations <= 1);
    CHECK(r.converged);
    CHECK((r.point.w - init.w).norm() == 0.0);
}

TEST_CASE("minimize is monotone, stays on the manifold, and is deterministic") {
    Rng rng(12);
    MatrixXd a = random_symmetric(rng, 6);
    MatrixXd b = random_symmetric(rng, 6);
    Objective f = [&](const MatrixXd& w) {
        MatrixXd m = w.transpose() * a * w;
        return m.trace() + 0.3 * (w.transpose() * b * w).squaredNorm();
    };
    MinimizeResult r1 = minimize(f, 6, 3, std::nullopt, DescentSettings{}, 13);
    MinimizeResult r2 = minimize(f, 6, 3, std::nullopt, DescentSettings{}, 13);
    for (size_t k = 1; k < r1.trace.size(); ++k) CHECK(r1.trace[k] <= r1.trace[k - 1]);
    CHECK(r1.point.orthonormality_residual() < 1e-8);
    CHECK(r1.trace == r2.trace);
    CHECK((r1.point.w - r2.point.w).norm() == 0.0);
}

TEST_CASE("analytic gradient hook") {
    Rng rng(14);
    MatrixXd a = random_symmetric(rng, 5);
    Objective f = [&](const MatrixXd& w) { return (w.transpose() * a * w).trace(); };
    Gradient g = [&](const MatrixXd& w) { return MatrixXd(2 * a * w); };
    MinimizeResult r = minimize(f, 5, 2, std::nullopt, DescentSettings{}, 15, g);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
    CHECK(r.value == doctest::Approx(es.eigenvalues().head(2).sum()).epsilon(1e-6));
}

TEST_CASE("minimize rejects NaN objectives and bad settings") {
    Objective f = [](const MatrixXd&) { return std::nan(""); };
    CHECK_THROWS_AS(minimize(f, 3, 1, std::nullopt, DescentSettings{}, 0), numeric_error);
    DescentSettings s;
    s.backtrack_factor = 1.5;
    Objective g = [](const MatrixXd&) { return 0.0; };
    CHECK_THROWS_AS(minimize(g, 3, 1, std::nullopt, s, 0), config_error);
    CHECK_THROWS_AS(minimize(g, 3, 4, std::nullopt, DescentSettings{}, 0), dimension_error);
}

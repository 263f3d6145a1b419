#include "doctest.h"

#include <cmath>
#include <random>

#include "exoendo/rng.hpp"
#include "exoendo/statcore.hpp"

using namespace exoendo;
using Eigen::MatrixXd;

namespace {

MatrixXd gaussian(Rng& rng, int n, int p) {
    MatrixXd m(n, p);
    for (int j = 0; j < p; ++j)
        for (int i = 0; i < n; ++i) m(i, j) = rng.normal();
    return m;
}

// Reference CCC via explicit inverse and Eigen's inverse square root.
double ccc_reference(const MatrixXd& x, const MatrixXd& y, const MatrixXd& z, double lam) {
    auto c = [](const MatrixXd& a, const MatrixXd& b) {
        MatrixXd ac = a.rowwise() - a.colwise().mean();
        MatrixXd bc = b.rowwise() - b.colwise().mean();
        return MatrixXd(ac.transpose() * bc / double(a.rows()));
    };
    auto reg = [&](const MatrixXd& s) { return MatrixXd(s + lam * MatrixXd::Identity(s.rows(), s.cols())); };
    MatrixXd m = c(x, y) - c(x, z) * reg(c(z, z)).fullPivLu().inverse() * c(z, y);
    Eigen::SelfAdjointEigenSolver<MatrixXd> ex(reg(c(x, x))), ey(reg(c(y, y)));
    MatrixXd v = ex.operatorInverseSqrt() * m * ey.operatorInverseSqrt();
    return (v.transpose() * v).trace();
}

} // namespace

TEST_CASE("covariance of the 3x2 example") {
    MatrixXd x(3, 2);
    x << 1, 2, 2, 4, 3, 6;
    MatrixXd c = covariance(x);
    MatrixXd expect(2, 2);
    expect << 2.0 / 3, 4.0 / 3, 4.0 / 3, 8.0 / 3;
    CHECK((c - expect).cwiseAbs().maxCoeff() < 1e-12);

    MatrixXd y = 2 * x;
    CHECK((cross_covariance(x, y) - 2 * expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((cross_covariance(x, x) - c).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance trivial cases") {
    MatrixXd x(4, 2);
    x << 5, -1, 5, 1, 5, -1, 5, 1;
    MatrixXd c = covariance(x);
    CHECK(c(0, 0) == doctest::Approx(0).epsilon(1e-15));
    CHECK(c(0, 1) == doctest::Approx(0).epsilon(1e-15));
    CHECK(c(1, 1) == doctest::Approx(1.0));
    CHECK_THROWS_AS(covariance(MatrixXd(1, 2)), dimension_error);
    CHECK_THROWS_AS(cross_covariance(MatrixXd(3, 1), MatrixXd(4, 1)), dimension_error);
}

TEST_CASE("covariance is symmetric PSD") {
    Rng rng(3);
    for (int t = 0; t < 10; ++t) {
        MatrixXd x = gaussian(rng, 50, 6) * gaussian(rng, 6, 6);
        MatrixXd c = covariance(x);
        CHECK((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(c);
        CHECK(es.eigenvalues().minCoeff() > -1e-9);
    }
}

TEST_CASE("cross covariance of independent samples is small") {
    Rng rng(4);
    const int n = 20000;
    MatrixXd x = gaussian(rng, n, 3), y = gaussian(rng, n, 2);
    CHECK(cross_covariance(x, y).cwiseAbs().maxCoeff() < 5.0 / std::sqrt(double(n)));
}

TEST_CASE("ccc matches an independent reference computation") {
    Rng rng(5);
    for (int t = 0; t < 5; ++t) {
        MatrixXd z = gaussian(rng, 500, 3);
        MatrixXd x = z * gaussian(rng, 3, 2) + gaussian(rng, 500, 2);
        MatrixXd y = z * gaussian(rng, 3, 4) + 0.3 * x * gaussian(rng, 2, 4) + gaussian(rng, 500, 4);
        for (double lam : {0.01, 0.5}) {
            CccParams p;
            p.tikhonov_lambda = lam;
            CHECK(ccc(x, y, z, p) == doctest::Approx(ccc_reference(x, y, z, lam)).epsilon(1e-9));
        }
    }
}

TEST_CASE("ccc scalar closed form") {
    Rng rng(6);
    const int n = 1000;
    MatrixXd z = gaussian(rng, n, 1);
    MatrixXd x = z + gaussian(rng, n, 1);
    MatrixXd y = 0.5 * x + z + gaussian(rng, n, 1);
    const double lam = 0.01;
    auto m = [n](const MatrixXd& a, const MatrixXd& b) {
        return ((a.array() - a.mean()) * (b.array() - b.mean())).sum() / n;
    };
    const double v = (m(x, y) - m(x, z) * m(z, y) / (m(z, z) + lam)) / std::sqrt((m(x, x) + lam) * (m(y, y) + lam));
    CHECK(ccc(x, y, z) == doctest::Approx(v * v).epsilon(1e-12));
}

TEST_CASE("ccc on conditionally independent Gaussian data is near zero") {
    for (std::uint64_t seed : {1, 2, 3}) {
        Rng rng(seed);
        const int n = 10000;
        MatrixXd z = gaussian(rng, n, 1);
        MatrixXd x = z + gaussian(rng, n, 1);
        MatrixXd y = z + gaussian(rng, n, 1);
        CHECK(ccc(x, y, z) < 0.02);
    }
}

TEST_CASE("ccc of a variable with itself tends to one as lambda vanishes") {
    Rng rng(7);
    const int n = 10000;
    MatrixXd x = gaussian(rng, n, 1);
    x = (x.array() - x.mean()) / std::sqrt((x.array() - x.mean()).square().mean());
    MatrixXd z = gaussian(rng, n, 1);
    CccParams p;
    p.tikhonov_lambda = 1e-8;
    CHECK(std::abs(ccc(x, x, z, p) - 1.0) < 0.05);
}

TEST_CASE("ccc with zero-variance x is zero") {
    Rng rng(8);
    MatrixXd x = MatrixXd::Constant(200, 2, 3.0);
    CHECK(ccc(x, gaussian(rng, 200, 2), gaussian(rng, 200, 1)) == doctest::Approx(0).epsilon(1e-15));
}

TEST_CASE("ccc is symmetric in x and y") {
    Rng rng(9);
    MatrixXd z = gaussian(rng, 300, 2);
    MatrixXd x = z * gaussian(rng, 2, 3) + gaussian(rng, 300, 3);
    MatrixXd y = x * gaussian(rng, 3, 2) + gaussian(rng, 300, 2);
    CHECK(ccc(x, y, z) == doctest::Approx(ccc(y, x, z)).epsilon(1e-12));
}

TEST_CASE("ccc is nearly invariant to orthogonal rotations") {
    Rng rng(10);
    const int n = 10000;
    MatrixXd z = gaussian(rng, n, 3);
    MatrixXd x = z * gaussian(rng, 3, 3) + gaussian(rng, n, 3);
    MatrixXd y = z * gaussian(rng, 3, 3) + 0.5 * x + gaussian(rng, n, 3);
    const double base = ccc(x, y, z);
    for (int t = 0; t < 5; ++t) {
        auto rot = [&]() { return MatrixXd(gaussian(rng, 3, 3).householderQr().householderQ()); };
        const double r = ccc(x * rot(), y * rot(), z * rot());
        CHECK(std::abs(r - base) / base < 0.01);
    }
}

TEST_CASE("ccc rejects bad input") {
    MatrixXd x = MatrixXd::Zero(10, 1), y = MatrixXd::Zero(9, 1);
    CHECK_THROWS_AS(ccc(x, y, x), dimension_error);
    x(0, 0) = std::nan("");
    CHECK_THROWS_AS(ccc(x, x, x), numeric_error);
}

TEST_CASE("ccc on dependent data is large") {
    Rng rng(11);
    const int n = 10000;
    MatrixXd z = gaussian(rng, n, 1);
    MatrixXd x = gaussian(rng, n, 1);
    MatrixXd y = x + 0.5 * gaussian(rng, n, 1);
    CHECK(ccc(x, y, z) > 0.2);
}

// ---- tabular ----

namespace {

// Binary S = (S0, S1), one action, X = {S0}: X' = S0 xor S1, E' uniform.
TabularModel xor_model() {
    TabularModel m;
    m.state_cardinalities = {2, 2};
    m.action_cardinality = 1;
    m.joint.assign(16, 0.0);
    for (int x = 0; x < 2; ++x)
        for (int e = 0; e < 2; ++e)
            for (int e2 = 0; e2 < 2; ++e2) {
                const int x2 = x ^ e;
                m.joint[m.index(m.encode({x, e}), 0, m.encode({x2, e2}))] = 0.25 * 0.5;
            }
    return m;
}

// Random joint built from the exogenous factorization with X = {S0}.
TabularModel factored_model(std::uint64_t seed) {
    Rng rng(seed);
    TabularModel m;
    m.state_cardinalities = {2, 3};
    m.action_cardinality = 2;
    const int ns = 6, na = 2;
    m.joint.assign(ns * na * ns, 0.0);
    auto dist = [&](int k) {
        std::vector<double> p(k);
        double s = 0;
        for (auto& v : p) s += v = rng.uniform() + 0.05;
        for (auto& v : p) v /= s;
        return p;
    };
    auto p_s = dist(ns);
    std::vector<std::vector<double>> p_x2(2), pi(ns);
    for (auto& v : p_x2) v = dist(2);
    for (auto& v : pi) v = dist(na);
    std::vector<std::vector<double>> p_e2(ns * na * 2);
    for (auto& v : p_e2) v = dist(3);
    for (int s = 0; s < ns; ++s) {
        auto sv = m.decode(s);
        for (int a = 0; a < na; ++a)
            for (int x2 = 0; x2 < 2; ++x2)
                for (int e2 = 0; e2 < 3; ++e2)
                    m.joint[m.index(s, a, m.encode({x2, e2}))] =
                        p_s[s] * pi[s][a] * p_x2[sv[0]][x2] * p_e2[(s * na + a) * 2 + x2][e2];
    }
    return m;
}

// I(S'; A | S) by brute force.
double cmi_next_state_action(const TabularModel& m) {
    const int ns = int(m.num_states()), na = m.action_cardinality;
    std::vector<double> ps(ns, 0), psa(ns * na, 0), pss(ns * ns, 0);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a)
            for (int s2 = 0; s2 < ns; ++s2) {
                const double p = m.joint[m.index(s, a, s2)];
                ps[s] += p;
                psa[s * na + a] += p;
                pss[s * ns + s2] += p;
            }
    double mi = 0;
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a)
            for (int s2 = 0; s2 < ns; ++s2) {
                const double p = m.joint[m.index(s, a, s2)];
                if (p > 0) mi += p * std::log(p * ps[s] / (psa[s * na + a] * pss[s * ns + s2]));
            }
    return mi;
}

} // namespace

TEST_CASE("cmi of the xor model is log 2") {
    TabularModel m = xor_model();
    m.validate();
    CHECK(cmi_tabular(m, {0}, CmiMode::full) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cmi vanishes under the exogenous factorization") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TabularModel m = factored_model(seed);
        m.validate();
        CHECK(cmi_tabular(m, {0}, CmiMode::full) < 1e-12);
        // Variable 1 is driven by the action, so it is not exogenous.
        CHECK(cmi_tabular(m, {1}, CmiMode::full) > 1e-6);
    }
}

TEST_CASE("cmi with everything exogenous equals I(S';A|S)") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        TabularModel m = factored_model(seed);
        CHECK(cmi_tabular(m, {0, 1}, CmiMode::full) == doctest::Approx(cmi_next_state_action(m)).epsilon(1e-10));
        CHECK(cmi_tabular(m, {0, 1}, CmiMode::full) >= 0);
    }
}

TEST_CASE("cmi flags empty support") {
    TabularModel m = xor_model();
    std::fill(m.joint.begin(), m.joint.end(), 0.0);
    bool empty = false;
    CHECK(cmi_tabular(m, {0}, CmiMode::full, &empty) == 0.0);
    CHECK(empty);
}

#include <doctest.h>

#include <sstream>

#include "exoendo/analysis.hpp"
#include "exoendo/decompose.hpp"
#include "exoendo/rng.hpp"

using namespace exoendo;

namespace {

// s = [x; e] directly: x' = 0.6 x + noise, e' = 0.5 e + 0.3 x + B a + noise.
TransitionDataset block_data(int nx, int ne, int l, int n, std::uint64_t seed, double action_gain = 1.0) {
    Rng rng(seed);
    const int d = nx + ne;
    Eigen::MatrixXd s(n, d), sn(n, d), a(n, l);
    Eigen::VectorXd r(n);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(nx), e = Eigen::VectorXd::Zero(ne);
    for (int t = 0; t < n; ++t) {
        Eigen::VectorXd at(l);
        for (int j = 0; j < l; ++j) at(j) = rng.uniform(-1, 1);
        Eigen::VectorXd x2(nx), e2(ne);
        for (int i = 0; i < nx; ++i) x2(i) = 0.6 * x(i) + rng.normal();
        for (int i = 0; i < ne; ++i) e2(i) = 0.5 * e(i) + (nx ? 0.3 * x(i % nx) : 0.0) + action_gain * at(i % l) + 0.3 * rng.normal();
        s.row(t) << x.transpose(), e.transpose();
        sn.row(t) << x2.transpose(), e2.transpose();
        a.row(t) = at.transpose();
        r(t) = -x.sum() - e.sum();
        x = x2;
        e = e2;
    }
    return make_dataset(s, a, r, sn);
}

Eigen::MatrixXd random_orthonormal(int d, int p, std::uint64_t seed) { return random_stiefel(d, p, seed).w; }

Eigen::MatrixXd true_exo_basis(int nx, int ne) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(nx + ne, nx);
    w.topRows(nx).setIdentity();
    return w;
}

} // namespace

TEST_CASE("make_dataset centers s and s' by the mean of s") {
    Eigen::MatrixXd s(3, 1), sn(3, 1), a(3, 1);
    s << 1, 2, 3;
    sn << 2, 3, 4;
    a << 0, 0, 0;
    auto ds = make_dataset(s, a, Eigen::VectorXd::Zero(3), sn);
    CHECK(ds.s_mean(0) == doctest::Approx(2));
    CHECK(ds.s(0, 0) == doctest::Approx(-1));
    CHECK(ds.s_next(2, 0) == doctest::Approx(2));
    CHECK_THROWS_AS(make_dataset(s, Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(3), sn), dimension_error);
}

TEST_CASE("moment cache matches direct CCC for every objective") {
    auto ds = block_data(2, 2, 1, 2000, 3);
    MomentCache mc(ds);
    const int d = ds.d();
    const double lam = 0.01;
    CccParams params;
    for (int p = 1; p <= 3; ++p) {
        Eigen::MatrixXd w = random_orthonormal(d, p, 40 + p);
        Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(d, d) - w * w.transpose();
        Eigen::MatrixXd x = ds.s_next * w, z = ds.s * w;
        Eigen::MatrixXd y_full(ds.size(), d + 1), y_dia(ds.size(), 2 * d + 1);
        y_full << ds.s * proj, ds.a;
        y_dia << ds.s * proj, ds.s_next * proj, ds.a;
        CHECK(mc.objective(w, ObjectiveMode::simplified, lam) == doctest::Approx(ccc(x, ds.a, z, params)).epsilon(1e-8));
        CHECK(mc.objective(w, ObjectiveMode::full, lam) == doctest::Approx(ccc(x, y_full, z, params)).epsilon(1e-8));
        CHECK(mc.objective(w, ObjectiveMode::diachronic, lam) == doctest::Approx(ccc(x, y_dia, z, params)).epsilon(1e-8));
    }
    CHECK(mc.objective(Eigen::MatrixXd(d, 0), ObjectiveMode::full, lam) == 0.0);
    CHECK_THROWS_AS(mc.objective(Eigen::MatrixXd::Identity(d + 1, 1), ObjectiveMode::full, lam), dimension_error);
}

TEST_CASE("objective mode names round-trip") {
    for (auto m : {ObjectiveMode::full, ObjectiveMode::diachronic, ObjectiveMode::simplified})
        CHECK(parse_objective_mode(to_string(m)) == m);
    CHECK_THROWS(parse_objective_mode("bogus"));
}

TEST_CASE("exo and endo parts reconstruct the state") {
    ExoProjection p;
    p.d = 3;
    p.d_exo = 1;
    p.w_exo = Eigen::Vector3d(1, 1, 0).normalized();
    Eigen::VectorXd s(3);
    s << 2, 0, 5;
    CHECK((p.exo(s) + p.endo(s) - s).norm() < 1e-12);
    CHECK(p.exo(s).dot(p.endo(s)) == doctest::Approx(0).epsilon(1e-12));
    CHECK(p.exo(s)(0) == doctest::Approx(1));
    auto e = ExoProjection::empty(3);
    CHECK(e.exo(s).norm() == 0);
    CHECK(e.endo(s) == s);
    CHECK(e.features(Eigen::MatrixXd::Ones(4, 3)).cols() == 0);
}

TEST_CASE("decomposition report round-trips through text") {
    DecompositionReport r;
    r.algorithm = "grds";
    r.projection.d = 3;
    r.projection.d_exo = 2;
    r.projection.mode = ObjectiveMode::diachronic;
    r.projection.w_exo = random_orthonormal(3, 2, 5);
    r.projection.achieved_ccc_full = 0.0123;
    r.per_rank_ccc = {{3, 0.9}, {2, 0.0123}};
    r.wall_time = 1.5;
    r.diagnostics = {"rank 3 restart 0: something"};
    std::stringstream ss;
    r.write(ss);
    auto back = DecompositionReport::read(ss);
    CHECK(back.algorithm == "grds");
    CHECK(back.projection.d == 3);
    CHECK(back.projection.d_exo == 2);
    CHECK(back.projection.mode == ObjectiveMode::diachronic);
    CHECK((back.projection.w_exo - r.projection.w_exo).norm() < 1e-12);
    CHECK(back.per_rank_ccc.size() == 2);
    CHECK(back.per_rank_ccc[1].second == doctest::Approx(0.0123));
    CHECK(back.diagnostics.size() == 1);
    std::stringstream bad("algorithm\tgrds\nd\tthree\n");
    CHECK_THROWS(DecompositionReport::read(bad));
}

TEST_CASE("pure noise states are entirely exogenous") {
    auto ds = block_data(3, 0, 1, 3000, 8);
    auto rep = grds(ds, CccParams{}, DescentSettings{}, ObjectiveMode::full, 1);
    CHECK(rep.projection.d_exo == 3);
    CHECK(rep.per_rank_ccc.size() == 1);
}

TEST_CASE("grds recovers the exogenous block") {
    auto ds = block_data(2, 2, 2, 5000, 11);
    for (auto mode : {ObjectiveMode::full, ObjectiveMode::simplified, ObjectiveMode::diachronic}) {
        auto rep = grds(ds, CccParams{}, DescentSettings{}, mode, 2);
        CAPTURE(to_string(mode));
        REQUIRE(rep.projection.d_exo == 2);
        auto pa = principal_angles(rep.projection.w_exo, true_exo_basis(2, 2));
        CHECK(pa.angles.maxCoeff() < 0.1);
        CHECK(rep.projection.achieved_ccc_full < 0.05);
        CHECK((rep.projection.w_exo.transpose() * rep.projection.w_exo - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-8);
        // Scan is from the top down and stops at the first pass.
        CHECK(rep.per_rank_ccc.front().first == 4);
        CHECK(rep.per_rank_ccc.back().first == 2);
        for (size_t i = 0; i + 1 < rep.per_rank_ccc.size(); ++i) CHECK(rep.per_rank_ccc[i].second >= 0.05);
    }
}

TEST_CASE("grds rejects tiny datasets") {
    auto ds = block_data(2, 2, 1, 12, 1);
    CHECK_THROWS_AS(grds(ds, CccParams{}, DescentSettings{}, ObjectiveMode::full, 0), dimension_error);
}

TEST_CASE("sras handles the one-dimensional cases") {
    auto exo = block_data(1, 0, 1, 3000, 4);
    CHECK(sras(exo, CccParams{}, DescentSettings{}, 0).projection.d_exo == 1);
    auto end = block_data(0, 1, 1, 3000, 4, 2.0);
    auto rep = sras(end, CccParams{}, DescentSettings{}, 0);
    CHECK(rep.projection.d_exo == 0);
    CHECK(rep.projection.w_exo.cols() == 0);
}

TEST_CASE("sras finds the exogenous block and its output verifies") {
    auto ds = block_data(2, 2, 2, 5000, 21);
    auto rep = sras(ds, CccParams{}, DescentSettings{}, 3);
    REQUIRE(rep.projection.d_exo == 2);
    CHECK(principal_angles(rep.projection.w_exo, true_exo_basis(2, 2)).angles.maxCoeff() < 0.1);
    auto v = verify_projection(ds, rep.projection, CccParams{});
    CHECK(v.valid);
    CHECK(v.ccc_value == doctest::Approx(rep.projection.achieved_ccc_full).epsilon(1e-9));
}

TEST_CASE("verify_projection") {
    auto ds = block_data(2, 2, 1, 3000, 6);
    auto empty = ExoProjection::empty(4);
    auto v = verify_projection(ds, empty, CccParams{});
    CHECK(v.valid);
    CHECK(v.ccc_value == 0);
    ExoProjection bad;
    bad.d = 4;
    bad.d_exo = 1;
    bad.w_exo = Eigen::Vector4d(0, 0, 1, 0);
    CHECK_FALSE(verify_projection(ds, bad, CccParams{}).valid);
    ExoProjection good = bad;
    good.w_exo = Eigen::Vector4d(1, 0, 0, 0);
    CHECK(verify_projection(ds, good, CccParams{}).valid);
    CHECK_THROWS_AS(verify_projection(block_data(1, 1, 1, 100, 1), good, CccParams{}), dimension_error);
}

TEST_CASE("canonicalize keeps the span and orders by variance") {
    Eigen::MatrixXd cov = Eigen::Vector3d(1, 4, 9).asDiagonal();
    Eigen::MatrixXd w = random_orthonormal(3, 2, 77);
    Eigen::MatrixXd c = canonicalize(w, cov);
    CHECK((c * c.transpose() - w * w.transpose()).norm() < 1e-10);
    CHECK((c.transpose() * c - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-10);
    const double v0 = c.col(0).dot(cov * c.col(0)), v1 = c.col(1).dot(cov * c.col(1));
    CHECK(v0 >= v1);
    CHECK((canonicalize(c, cov) - c).norm() < 1e-10);
}

TEST_CASE("oracle on the subset non-closure model") {
    auto m = subset_nonclosure_model(0);
    auto found = oracle_grds_tabular(m, CmiMode::full);
    CHECK(found == std::vector<int>{0, 1});
    CHECK(cmi_tabular(m, {0}, CmiMode::full) > 1e-6);
    CHECK(cmi_tabular(m, {0, 1}, CmiMode::full) < 1e-9);
}

TEST_CASE("oracle edge cases") {
    DbnTemplate driven;
    driven.d = 2;
    driven.diachronic = {{0, 0}, {1, 1}};
    driven.action_targets = {0, 1};
    CHECK(oracle_grds_tabular(tabular_from_dbn(driven, {2, 2}, 2, 1), CmiMode::full).empty());
    DbnTemplate free = driven;
    free.action_targets = {};
    CHECK(oracle_grds_tabular(tabular_from_dbn(free, {2, 2}, 2, 1), CmiMode::full) == std::vector<int>{0, 1});
    TabularModel big;
    big.state_cardinalities.assign(13, 2);
    big.action_cardinality = 1;
    CHECK_THROWS_AS(oracle_grds_tabular(big, CmiMode::full), capacity_error);
}

TEST_CASE("oracle returns a maximum-size valid set (brute force)") {
    Rng rng(99);
    for (int trial = 0; trial < 6; ++trial) {
        DbnTemplate t;
        t.d = 3 + trial % 2;
        for (int i = 0; i < t.d; ++i) {
            t.diachronic.push_back({i, i});
            for (int j = 0; j < t.d; ++j) {
                if (i != j && rng.uniform() < 0.25) t.diachronic.push_back({i, j});
                if (i < j && rng.uniform() < 0.2) t.synchronic.push_back({i, j});
            }
            if (rng.uniform() < 0.35) t.action_targets.push_back(i);
            if (rng.uniform() < 0.5) t.policy_parents.push_back(i);
        }
        std::vector<int> card(t.d, 2);
        auto m = tabular_from_dbn(t, card, 2, trial);
        auto found = oracle_grds_tabular(m, CmiMode::full, 1e-9);
        CHECK(cmi_tabular(m, found, CmiMode::full) <= 1e-9);
        size_t best = 0;
        for (int mask = 0; mask < (1 << t.d); ++mask) {
            std::vector<int> set;
            for (int i = 0; i < t.d; ++i)
                if (mask >> i & 1) set.push_back(i);
            if (cmi_tabular(m, set, CmiMode::full) <= 1e-9) best = std::max(best, set.size());
        }
        CHECK(found.size() == best);
    }
}

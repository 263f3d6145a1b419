#include <doctest.h>

#include <cmath>
#include <sstream>

#include "exoendo/envs.hpp"
#include "exoendo/errors.hpp"
#include "exoendo/regress.hpp"

using namespace exoendo;

namespace {

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return std::sqrt((a - b).squaredNorm() / double(a.size())); }
double stdev(const Eigen::VectorXd& v) { return std::sqrt((v.array() - v.mean()).square().mean()); }

Eigen::MatrixXd gaussian(Rng& rng, int n, int d, double scale = 1.0) {
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = scale * rng.normal();
    return x;
}

double r3(double m) { return -3 * (std::exp(-std::pow(m + 1.5, 2)) - std::exp(-std::pow(m - 1.5, 2))); }

struct Rollout {
    Eigen::MatrixXd s;
    Eigen::VectorXd r, r_exo, r_end;
};

Rollout random_rollout(LinearMdp& env, int n, std::uint64_t seed) {
    Rng rng(seed);
    Rollout out;
    out.s.resize(n, env.obs_dim());
    out.r.resize(n);
    out.r_exo.resize(n);
    out.r_end.resize(n);
    Eigen::VectorXd obs = env.reset();
    const auto cards = env.action_cardinalities();
    for (int t = 0; t < n; ++t) {
        std::vector<int> a;
        for (int c : cards) a.push_back(int(rng.index(c)));
        auto st = env.step(a);
        out.s.row(t) = obs.transpose();
        out.r(t) = st.reward;
        out.r_exo(t) = st.r_exo;
        out.r_end(t) = st.r_end;
        obs = st.obs;
    }
    return out;
}

// Orthonormal basis for the exo part of the observation: rows of M^-1 that read out x.
ExoProjection oracle_projection(const LinearMdp& env) {
    const int m = env.config().n_end, n = env.config().n_exo;
    Eigen::MatrixXd b = env.mixing().inverse().bottomRows(n);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(b.transpose());
    ExoProjection p;
    p.d = m + n;
    p.d_exo = n;
    p.w_exo = qr.householderQ() * Eigen::MatrixXd::Identity(m + n, n);
    return p;
}

} // namespace

TEST_CASE("regression mode names round-trip") {
    for (auto m : {RegressionMode::single_linear, RegressionMode::repeated_linear, RegressionMode::online_mlp})
        CHECK(parse_regression_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_regression_mode("lasso"), config_error);
    RegressionSchedule s;
    s.update_interval = 0;
    CHECK_THROWS_AS(s.validate(), config_error);
}

TEST_CASE("least squares by hand") {
    Eigen::MatrixXd x(3, 1);
    x << 1, 2, 3;
    auto m = fit_linear(x, Eigen::Vector3d(2, 4, 6));
    CHECK(m.weights(0) == doctest::Approx(2));
    CHECK(std::abs(m.intercept) < 1e-12);
    CHECK(m.diagnostics.empty());
}

TEST_CASE("least squares exact fit, noise fit, and orthogonal residuals") {
    Rng rng(1);
    Eigen::MatrixXd x = gaussian(rng, 500, 4);
    Eigen::VectorXd r = x * Eigen::Vector4d(1, -2, 0.5, 3) + Eigen::VectorXd::Constant(500, 7);
    auto m = fit_linear(x, r);
    CHECK((m.predict_rows(x) - r).squaredNorm() / r.squaredNorm() < 1e-18);

    Eigen::MatrixXd big = gaussian(rng, 40000, 3);
    Eigen::VectorXd noise(40000);
    for (auto& v : noise) v = 2 + rng.normal();
    auto z = fit_linear(big, noise);
    CHECK(z.weights.cwiseAbs().maxCoeff() < 4 / std::sqrt(40000.0));
    CHECK(z.predict(Eigen::VectorXd(Eigen::VectorXd::Zero(3))) == doctest::Approx(noise.mean()).epsilon(0.01));

    Eigen::VectorXd resid = noise - z.predict_rows(big);
    CHECK(std::abs(resid.sum()) / 40000 < 1e-8);
    CHECK((big.transpose() * resid).cwiseAbs().maxCoeff() / 40000 < 1e-8);
}

TEST_CASE("rank-deficient design gets the minimum-norm solution") {
    Eigen::MatrixXd x(4, 2);
    x << 1, 1, 2, 2, 3, 3, 4, 4;
    auto m = fit_linear(x, Eigen::Vector4d(2, 4, 6, 8));
    CHECK(m.weights(0) == doctest::Approx(1));
    CHECK(m.weights(1) == doctest::Approx(1));
    CHECK(m.diagnostics.size() == 1);
    CHECK_THROWS_AS(fit_linear(Eigen::MatrixXd::Zero(2, 3), Eigen::Vector2d(1, 2)), dimension_error);
    CHECK_THROWS_AS(fit_linear(x, Eigen::Vector3d(1, 2, 3)), dimension_error);
}

TEST_CASE("mlp learns a constant") {
    Rng rng(2);
    Eigen::MatrixXd x = gaussian(rng, 5000, 2);
    auto m = fit_mlp_phase1(x, Eigen::VectorXd::Constant(5000, 1.7), RegressionSchedule{}, 4);
    // Average prediction over the training inputs; pointwise error sits at the Adam jitter floor.
    CHECK(std::abs(m.predict_rows(x).mean() - 1.7) < 1e-3);
    CHECK((m.predict_rows(x).array() - 1.7).abs().maxCoeff() < 0.15);
}

TEST_CASE("mlp fits a linear exo reward") {
    Rng rng(3);
    Eigen::MatrixXd x = gaussian(rng, 4000, 5);
    Eigen::VectorXd r = 3 * x.rowwise().mean();
    auto m = fit_mlp_phase1(x.topRows(3000), r.head(3000), RegressionSchedule{}, 5);
    CHECK(rmse(m.predict_rows(x.bottomRows(1000)), r.tail(1000)) < 0.05 * stdev(r));
}

TEST_CASE("mlp fits the two-mode reward") {
    Rng rng(4);
    Eigen::MatrixXd x = gaussian(rng, 6000, 3, 1.5);
    Eigen::VectorXd r(6000);
    for (int i = 0; i < 6000; ++i) r(i) = r3(x.row(i).mean());
    auto m = fit_mlp_phase1(x.topRows(5000), r.head(5000), RegressionSchedule{}, 6);
    CHECK(rmse(m.predict_rows(x.bottomRows(1000)), r.tail(1000)) < 0.15 * stdev(r));
}

TEST_CASE("phase-1 training is deterministic and stops on convergence") {
    Rng rng(5);
    Eigen::MatrixXd x = gaussian(rng, 600, 2);
    Eigen::VectorXd r = x.col(0);
    auto a = fit_mlp_phase1(x, r, RegressionSchedule{}, 9);
    auto b = fit_mlp_phase1(x, r, RegressionSchedule{}, 9);
    CHECK(a.net.w[0] == b.net.w[0]);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(int(a.loss_trace.size()) <= 125);
    Eigen::MatrixXd bad = x;
    bad(0, 0) = NAN;
    CHECK_THROWS_AS(fit_mlp_phase1(bad, r, RegressionSchedule{}, 9), numeric_error);
}

TEST_CASE("online updates") {
    Rng rng(6);
    Eigen::MatrixXd x = gaussian(rng, 256, 3);
    Eigen::VectorXd r = x.rowwise().sum();
    RegressionSchedule s;
    s.phase1_max_epochs = 1;
    auto m = fit_mlp_phase1(x, r, s, 1);

    auto same = m;
    update_mlp_online(same, Eigen::MatrixXd(0, 3), Eigen::VectorXd(0));
    CHECK(same.net.w[0] == m.net.w[0]);
    CHECK(same.optimizer.steps() == m.optimizer.steps());

    auto frozen = m;
    frozen.optimizer.config().learning_rate = 0;
    update_mlp_online(frozen, x, r);
    for (size_t k = 0; k < m.net.num_layers(); ++k) CHECK(frozen.net.w[k] == m.net.w[k]);
    CHECK(frozen.optimizer.steps() == m.optimizer.steps() + 1);

    auto learner = m;
    std::vector<double> losses;
    for (int i = 0; i < 50; ++i) {
        update_mlp_online(learner, x, r);
        losses.push_back(learner.loss_trace.back());
    }
    int increases = 0;
    for (size_t i = 1; i < losses.size(); ++i) increases += losses[i] > losses[i - 1];
    CHECK(increases <= 5);
    CHECK(losses.back() < losses.front());

    CHECK_THROWS_AS(update_mlp_online(learner, Eigen::MatrixXd::Zero(4, 2), Eigen::VectorXd::Zero(4)), dimension_error);
    auto lin = fit_linear(x, r);
    CHECK_THROWS_AS(update_mlp_online(lin, x, r), config_error);
}

TEST_CASE("endo reward degenerate cases") {
    auto empty = ExoProjection::empty(3);
    auto mean_only = fit_linear(Eigen::MatrixXd(4, 0), Eigen::Vector4d(1, 2, 3, 6));
    CHECK(endo_reward(mean_only, empty, Eigen::Vector3d(5, 5, 5), 10.0) == doctest::Approx(7.0));
    RewardModel zero;
    zero.d_exo = 3;
    zero.weights = Eigen::Vector3d::Zero();
    ExoProjection all;
    all.d = 3;
    all.d_exo = 3;
    all.w_exo = Eigen::Matrix3d::Identity();
    CHECK(endo_reward(zero, all, Eigen::Vector3d(1, 2, 3), 4.5) == 4.5);
    CHECK_THROWS_AS(endo_reward(zero, all, Eigen::Vector2d(1, 2), 4.5), dimension_error);
}

TEST_CASE("endo reward recovers the true endo channel on an additive linear MDP") {
    LinearMdpConfig cfg;
    cfg.n_exo = 3;
    cfg.n_end = 2;
    cfg.seed = 8;
    LinearMdp env(cfg);
    auto roll = random_rollout(env, 5000, 1);
    auto proj = oracle_projection(env);
    auto model = fit_linear(proj.features(roll.s), roll.r);
    Eigen::VectorXd endo(roll.r.size());
    for (Eigen::Index i = 0; i < endo.size(); ++i) endo(i) = endo_reward(model, proj, roll.s.row(i).transpose(), roll.r(i));
    // The intercept absorbs the mean of r_end.
    Eigen::VectorXd centered_truth = roll.r_end.array() - roll.r_end.mean();
    Eigen::VectorXd centered_endo = endo.array() - endo.mean();
    CHECK(rmse(centered_endo, centered_truth) < 0.1 * stdev(roll.r_exo));
    // Variance reduction.
    CHECK(stdev(endo) < stdev(roll.r));
}

TEST_CASE("regression cannot inflate variance on the anti-correlated family") {
    LinearMdpConfig cfg;
    cfg.family = Family::anticorrelated;
    cfg.reward_kind = RewardKind::anticorrelated;
    cfg.n_exo = 1;
    cfg.n_end = 1;
    cfg.seed = 2;
    LinearMdp env(cfg);
    auto roll = random_rollout(env, 10000, 3);
    auto proj = oracle_projection(env);
    auto model = fit_linear(proj.features(roll.s), roll.r);
    Eigen::VectorXd endo = roll.r - model.predict_rows(proj.features(roll.s));
    CHECK(stdev(endo) * stdev(endo) <= 1.05 * stdev(roll.r) * stdev(roll.r));
}

TEST_CASE("estimator schedules") {
    Rng rng(7);
    Eigen::MatrixXd s = gaussian(rng, 600, 3);
    Eigen::VectorXd r = s.col(0) * 2;
    ExoProjection p;
    p.d = 3;
    p.d_exo = 1;
    p.w_exo = Eigen::Vector3d(1, 0, 0);

    RegressionSchedule single;
    single.mode = RegressionMode::single_linear;
    ExoRewardEstimator e1(p, single, 0);
    CHECK_THROWS_AS(e1.endo(s.row(0).transpose(), 1.0), config_error);
    e1.fit(s, r);
    const double w = e1.model().weights(0);
    for (int i = 0; i < 2000; ++i) e1.observe(Eigen::Vector3d(1, 0, 0), 100.0);
    CHECK(e1.model().weights(0) == w);
    CHECK(e1.updates() == 1);
    CHECK(e1.endo(Eigen::Vector3d(0.5, 9, 9), 1.0) == doctest::Approx(0.0).epsilon(1e-9));

    RegressionSchedule repeated = single;
    repeated.mode = RegressionMode::repeated_linear;
    repeated.repeated_interval = 100;
    ExoRewardEstimator e2(p, repeated, 0);
    e2.fit(s, r);
    for (int i = 0; i < 250; ++i) e2.observe(Eigen::Vector3d(1, 0, 0), 2.0);
    CHECK(e2.updates() == 3);
    repeated.repeated_window = 100;
    ExoRewardEstimator e3(p, repeated, 0);
    e3.fit(s, r);
    for (int i = 0; i < 100; ++i) e3.observe(Eigen::Vector3d(double(i % 3), 0, 0), 5.0);
    CHECK(e3.model().intercept == doctest::Approx(5.0));

    RegressionSchedule online;
    online.phase1_max_epochs = 2;
    ExoRewardEstimator e4(p, online, 0);
    e4.fit(s, r);
    const long steps = e4.model().optimizer.steps();
    for (int i = 0; i < 600; ++i) e4.observe(s.row(i).transpose(), r(i));
    CHECK(e4.updates() == 3);
    CHECK(e4.model().optimizer.steps() == steps + 2);
}

TEST_CASE("reward model checkpoints round-trip") {
    Rng rng(8);
    Eigen::MatrixXd x = gaussian(rng, 300, 2);
    Eigen::VectorXd r = x.col(1);
    RegressionSchedule s;
    s.phase1_max_epochs = 3;
    for (const RewardModel& m : {fit_linear(x, r), fit_mlp_phase1(x, r, s, 2)}) {
        std::stringstream ss;
        m.write(ss);
        auto back = RewardModel::read(ss);
        CHECK(back.kind == m.kind);
        CHECK((back.predict_rows(x) - m.predict_rows(x)).cwiseAbs().maxCoeff() < 1e-12);
    }
    std::stringstream bad("reward_model tree 2");
    CHECK_THROWS_AS(RewardModel::read(bad), io_error);
}

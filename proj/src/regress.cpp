#include "exoendo/regress.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "exoendo/errors.hpp"

namespace exoendo {

std::string to_string(RegressionMode m) {
    switch (m) {
    case RegressionMode::single_linear: return "single_linear";
    case RegressionMode::repeated_linear: return "repeated_linear";
    case RegressionMode::online_mlp: return "online_mlp";
    }
    return "?";
}

RegressionMode parse_regression_mode(const std::string& s) {
    if (s == "single_linear") return RegressionMode::single_linear;
    if (s == "repeated_linear") return RegressionMode::repeated_linear;
    if (s == "online_mlp") return RegressionMode::online_mlp;
    throw config_error("unknown regression mode '" + s + "'");
}

void RegressionSchedule::validate() const {
    if (update_interval < 1 || repeated_interval < 1) throw config_error("regression: intervals must be positive");
    if (repeated_window < 0) throw config_error("regression: window must be nonnegative");
    if (!(learning_rate >= 0) || !(l2 >= 0)) throw config_error("regression: learning rate and l2 must be nonnegative");
    if (batch_size < 1 || phase1_max_epochs < 1 || convergence_window < 1)
        throw config_error("regression: batch size, epochs and window must be positive");
}

double RewardModel::predict(const Eigen::VectorXd& f) const {
    if (f.size() != d_exo) throw dimension_error("reward model: feature dimension mismatch");
    if (kind == RewardModelKind::linear) return intercept + weights.dot(f);
    return net.forward(f - feature_mean)(0, 0);
}

Eigen::VectorXd RewardModel::predict_rows(const Eigen::MatrixXd& f) const {
    if (f.cols() != d_exo) throw dimension_error("reward model: feature dimension mismatch");
    if (kind == RewardModelKind::linear) return (f * weights).array() + intercept;
    Eigen::MatrixXd in = (f.rowwise() - feature_mean.transpose()).transpose();
    return net.forward(in).row(0).transpose();
}

void RewardModel::write(std::ostream& os) const {
    os.precision(17);
    os << "reward_model " << (kind == RewardModelKind::linear ? "linear" : "mlp") << ' ' << d_exo << '\n';
    if (kind == RewardModelKind::linear) {
        os << intercept;
        for (Eigen::Index i = 0; i < weights.size(); ++i) os << ' ' << weights(i);
        os << '\n';
        return;
    }
    os << batch_size;
    for (Eigen::Index i = 0; i < feature_mean.size(); ++i) os << ' ' << feature_mean(i);
    os << '\n';
    net.write(os);
    optimizer.write(os);
}

RewardModel RewardModel::read(std::istream& is) {
    std::string tag, kind;
    RewardModel m;
    if (!(is >> tag >> kind >> m.d_exo) || tag != "reward_model" || m.d_exo < 0)
        throw io_error("checkpoint: expected reward_model header");
    if (kind == "linear") {
        m.kind = RewardModelKind::linear;
        m.weights.resize(m.d_exo);
        if (!(is >> m.intercept)) throw io_error("checkpoint: truncated linear model");
        for (int i = 0; i < m.d_exo; ++i)
            if (!(is >> m.weights(i))) throw io_error("checkpoint: truncated linear model");
        return m;
    }
    if (kind != "mlp") throw io_error("checkpoint: unknown model kind '" + kind + "'");
    m.kind = RewardModelKind::mlp;
    m.feature_mean.resize(m.d_exo);
    if (!(is >> m.batch_size)) throw io_error("checkpoint: truncated mlp model");
    for (int i = 0; i < m.d_exo; ++i)
        if (!(is >> m.feature_mean(i))) throw io_error("checkpoint: truncated mlp model");
    m.net = Mlp::read(is);
    m.optimizer = Adam::read(is);
    return m;
}

RewardModel fit_linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& r) {
    const Eigen::Index n = x.rows();
    if (r.size() != n) throw dimension_error("fit_linear: row count mismatch");
    if (n == 0 || n < x.cols()) throw dimension_error("fit_linear: need at least d_exo samples");
    if (!x.allFinite() || !r.allFinite()) throw numeric_error("fit_linear: non-finite input");
    Eigen::MatrixXd design(n, x.cols() + 1);
    design << Eigen::VectorXd::Ones(n), x;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
    const Eigen::VectorXd beta = cod.solve(r);
    RewardModel m;
    m.kind = RewardModelKind::linear;
    m.d_exo = int(x.cols());
    m.intercept = beta(0);
    m.weights = beta.tail(x.cols());
    if (cod.rank() < design.cols())
        m.diagnostics.push_back("rank-deficient design: rank " + std::to_string(cod.rank()) + " of " +
                                std::to_string(design.cols()) + ", minimum-norm solution");
    return m;
}

namespace {

// Mean of 0.5 (pred - r)^2 over the batch, with its gradient step applied.
double train_batch(RewardModel& m, const Eigen::MatrixXd& in, const Eigen::VectorXd& r) {
    Mlp::Tape tape;
    const Eigen::RowVectorXd pred = m.net.forward(in, tape).row(0);
    const Eigen::RowVectorXd err = pred - r.transpose();
    const double loss = 0.5 * err.squaredNorm() / double(err.size());
    if (!std::isfinite(loss)) return loss;
    const MlpGrads g = m.net.backward(tape, err / double(err.size()));
    m.optimizer.step(m.net, g);
    return loss;
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean, const std::vector<Eigen::Index>& idx,
                               size_t lo, size_t hi) {
    Eigen::MatrixXd out(x.cols(), Eigen::Index(hi - lo));
    for (size_t k = lo; k < hi; ++k) out.col(Eigen::Index(k - lo)) = x.row(idx[k]).transpose() - mean;
    return out;
}

} // namespace

RewardModel fit_mlp_phase1(const Eigen::MatrixXd& x, const Eigen::VectorXd& r, const RegressionSchedule& schedule,
                           std::uint64_t seed) {
    schedule.validate();
    const Eigen::Index n = x.rows();
    if (r.size() != n) throw dimension_error("fit_mlp_phase1: row count mismatch");
    if (n == 0) throw dimension_error("fit_mlp_phase1: empty dataset");
    Rng rng(seed);
    RewardModel m;
    m.kind = RewardModelKind::mlp;
    m.d_exo = int(x.cols());
    m.feature_mean = x.colwise().mean().transpose();
    m.batch_size = schedule.batch_size;
    m.net = Mlp({m.d_exo, 50, 25, 1}, Activation::relu, rng);
    AdamConfig cfg;
    cfg.learning_rate = schedule.learning_rate;
    cfg.eps = 1e-8;
    // Penalty normalized per sample of a nominal batch.
    cfg.l2 = schedule.l2 / double(schedule.batch_size);
    m.optimizer = Adam(m.net, cfg);

    const size_t batch = size_t(std::min<Eigen::Index>(schedule.batch_size, n));
    std::vector<Eigen::Index> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int epoch = 0; epoch < schedule.phase1_max_epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        double total = 0;
        for (size_t lo = 0; lo < size_t(n); lo += batch) {
            const size_t hi = std::min(size_t(n), lo + batch);
            Eigen::VectorXd rb(Eigen::Index(hi - lo));
            for (size_t k = lo; k < hi; ++k) rb(Eigen::Index(k - lo)) = r(idx[k]);
            const double loss = train_batch(m, gather_columns(x, m.feature_mean, idx, lo, hi), rb);
            if (!std::isfinite(loss))
                throw numeric_error("fit_mlp_phase1: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(m.optimizer.steps()));
            total += loss * double(hi - lo);
        }
        m.loss_trace.push_back(total / double(n));
        const int w = schedule.convergence_window;
        if (int(m.loss_trace.size()) > w) {
            const double before = m.loss_trace[m.loss_trace.size() - 1 - w], now = m.loss_trace.back();
            if (before - now < schedule.convergence_tolerance * std::abs(before)) {
                m.diagnostics.push_back("converged after " + std::to_string(epoch + 1) + " epochs");
                break;
            }
        }
    }
    return m;
}

void update_mlp_online(RewardModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& r) {
    if (m.kind != RewardModelKind::mlp) throw config_error("update_mlp_online: model is not an mlp");
    if (x.cols() != m.d_exo || x.rows() != r.size()) throw dimension_error("update_mlp_online: shape mismatch");
    const Eigen::Index n = x.rows();
    std::vector<Eigen::Index> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const size_t batch = size_t(std::max(1, m.batch_size));
    for (size_t lo = 0; lo < size_t(n); lo += batch) {
        const size_t hi = std::min(size_t(n), lo + batch);
        const double loss = train_batch(m, gather_columns(x, m.feature_mean, idx, lo, hi), r.segment(Eigen::Index(lo), Eigen::Index(hi - lo)));
        if (!std::isfinite(loss)) {
            m.diagnostics.push_back("online update skipped: non-finite loss");
            return;
        }
        m.loss_trace.push_back(loss);
    }
}

double endo_reward(const RewardModel& model, const ExoProjection& projection, const Eigen::VectorXd& s, double r) {
    if (s.size() != projection.d) throw dimension_error("endo_reward: state dimension mismatch");
    const Eigen::VectorXd f = projection.d_exo ? Eigen::VectorXd(projection.w_exo.transpose() * s) : Eigen::VectorXd();
    return r - model.predict(f);
}

ExoRewardEstimator::ExoRewardEstimator(ExoProjection projection, RegressionSchedule schedule, std::uint64_t seed)
    : projection_(std::move(projection)), schedule_(schedule), seed_(seed) {
    schedule_.validate();
}

void ExoRewardEstimator::fit(const Eigen::MatrixXd& states, const Eigen::VectorXd& rewards) {
    if (states.cols() != projection_.d) throw dimension_error("estimator: state dimension mismatch");
    if (states.rows() != rewards.size()) throw dimension_error("estimator: row count mismatch");
    const Eigen::MatrixXd f = projection_.features(states);
    features_.clear();
    rewards_.clear();
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
        features_.push_back(f.row(i).transpose());
        rewards_.push_back(rewards(i));
    }
    if (schedule_.mode == RegressionMode::online_mlp)
        model_ = fit_mlp_phase1(f, rewards, schedule_, seed_);
    else
        model_ = fit_linear(f, rewards);
    since_update_ = 0;
    ++updates_;
}

double ExoRewardEstimator::endo(const Eigen::VectorXd& s, double r) const {
    if (updates_ == 0) throw config_error("estimator: endo requested before the initial fit");
    return endo_reward(model_, projection_, s, r);
}

void ExoRewardEstimator::observe(const Eigen::VectorXd& s, double r) {
    if (s.size() != projection_.d) throw dimension_error("estimator: state dimension mismatch");
    features_.push_back(projection_.d_exo ? Eigen::VectorXd(projection_.w_exo.transpose() * s) : Eigen::VectorXd());
    rewards_.push_back(r);
    ++since_update_;
    switch (schedule_.mode) {
    case RegressionMode::single_linear: break;
    case RegressionMode::repeated_linear:
        if (since_update_ >= schedule_.repeated_interval) refit_linear();
        break;
    case RegressionMode::online_mlp:
        if (since_update_ >= schedule_.update_interval) {
            const int k = schedule_.update_interval;
            Eigen::MatrixXd x(k, projection_.d_exo);
            Eigen::VectorXd r(k);
            const size_t base = features_.size() - size_t(k);
            for (int i = 0; i < k; ++i) {
                x.row(i) = features_[base + i].transpose();
                r(i) = rewards_[base + i];
            }
            update_mlp_online(model_, x, r);
            since_update_ = 0;
            ++updates_;
        }
        break;
    }
}

void ExoRewardEstimator::refit_linear() {
    const size_t total = features_.size();
    const size_t k = schedule_.repeated_window > 0 ? std::min(total, size_t(schedule_.repeated_window)) : total;
    Eigen::MatrixXd x(Eigen::Index(k), projection_.d_exo);
    Eigen::VectorXd r(static_cast<Eigen::Index>(k));
    for (size_t i = 0; i < k; ++i) {
        x.row(Eigen::Index(i)) = features_[total - k + i].transpose();
        r(Eigen::Index(i)) = rewards_[total - k + i];
    }
    model_ = fit_linear(x, r);
    since_update_ = 0;
    ++updates_;
}

} // namespace exoendo

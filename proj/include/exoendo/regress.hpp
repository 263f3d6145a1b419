#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "exoendo/decompose.hpp"
#include "exoendo/nn.hpp"

namespace exoendo {

enum class RewardModelKind { linear, mlp };
enum class RegressionMode { single_linear, repeated_linear, online_mlp };
std::string to_string(RegressionMode m);
RegressionMode parse_regression_mode(const std::string& s);

struct RegressionSchedule {
    RegressionMode mode = RegressionMode::online_mlp;
    int update_interval = 256;
    int repeated_interval = 1000;
    // Most-recent window for repeated refits; 0 means all data so far.
    int repeated_window = 0;
    double learning_rate = 3e-4;
    double l2 = 3e-5;
    int batch_size = 256;
    int phase1_max_epochs = 125;
    // Phase-1 stop: relative loss improvement below this over `convergence_window` epochs.
    double convergence_tolerance = 1e-5;
    int convergence_window = 5;

    void validate() const;
};

// Estimate of the exo reward as a function of the exo coordinates W^T s.
struct RewardModel {
    RewardModelKind kind = RewardModelKind::linear;
    int d_exo = 0;
    // linear
    Eigen::VectorXd weights;
    double intercept = 0;
    // mlp; inputs are shifted by feature_mean before the net sees them
    Mlp net;
    Adam optimizer;
    Eigen::VectorXd feature_mean;
    int batch_size = 256;
    std::vector<double> loss_trace;
    std::vector<std::string> diagnostics;

    double predict(const Eigen::VectorXd& features) const;
    // Rows are samples.
    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& features) const;

    void write(std::ostream& os) const;
    static RewardModel read(std::istream& is);
};

// Least squares with intercept; rank-deficient designs get the minimum-norm solution.
RewardModel fit_linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& r);

RewardModel fit_mlp_phase1(const Eigen::MatrixXd& x, const Eigen::VectorXd& r, const RegressionSchedule& schedule,
                           std::uint64_t seed);

// One pass of mini-batch updates, in order, over the given rows.
void update_mlp_online(RewardModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& r);

double endo_reward(const RewardModel& model, const ExoProjection& projection, const Eigen::VectorXd& s, double r);

// Drives a reward model through a run: initial fit, then refits or online updates per the schedule.
class ExoRewardEstimator {
public:
    ExoRewardEstimator(ExoProjection projection, RegressionSchedule schedule, std::uint64_t seed);

    // Initial fit on raw states (rows) and rewards.
    void fit(const Eigen::MatrixXd& states, const Eigen::VectorXd& rewards);
    // Endo estimate for one transition; call before observe().
    double endo(const Eigen::VectorXd& s, double r) const;
    // Record a transition and apply any scheduled update.
    void observe(const Eigen::VectorXd& s, double r);

    const RewardModel& model() const { return model_; }
    const ExoProjection& projection() const { return projection_; }
    long updates() const { return updates_; }

private:
    void refit_linear();

    ExoProjection projection_;
    RegressionSchedule schedule_;
    std::uint64_t seed_;
    RewardModel model_;
    std::vector<Eigen::VectorXd> features_;
    std::vector<double> rewards_;
    long since_update_ = 0;
    long updates_ = 0;
};

} // namespace exoendo

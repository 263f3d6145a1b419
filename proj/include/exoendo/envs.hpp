#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "exoendo/errors.hpp"
#include "exoendo/rng.hpp"

namespace exoendo {

struct domain_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct StepResult {
    Eigen::VectorXd obs;
    double reward = 0;
    // Ground-truth split; only the reward oracle and tests may read these.
    double r_exo = 0;
    double r_end = 0;
    bool done = false;
};

// Uniform interface over all simulator families. Actions are one index per action variable.
class Env {
public:
    virtual ~Env() = default;
    virtual Eigen::VectorXd reset() = 0;
    virtual StepResult step(const std::vector<int>& action) = 0;
    virtual int obs_dim() const = 0;
    virtual std::vector<int> action_cardinalities() const = 0;
    // Numeric encoding of an action as it enters the A matrix.
    virtual Eigen::VectorXd action_values(const std::vector<int>& action) const = 0;
    // Per action variable, which indices are currently legal.
    virtual std::vector<std::vector<bool>> action_mask() const;
    virtual bool episodic() const { return false; }
    // Same structure (matrices, graph), fresh noise stream.
    virtual std::unique_ptr<Env> fork(std::uint64_t noise_seed) const = 0;
};

enum class Family { linear, m1, m2, m3, anticorrelated };
enum class ActionMatrixKind { ones, dense, partial_dense, partial_disjoint };
enum class RewardKind { linear, r1, r2, r3, r4, anticorrelated };
enum class MatrixSign { nonnegative, signed_gaussian };

std::string to_string(Family f);
std::string to_string(ActionMatrixKind k);
std::string to_string(RewardKind k);
std::string to_string(MatrixSign s);
Family parse_family(const std::string& s);
ActionMatrixKind parse_action_matrix_kind(const std::string& s);
RewardKind parse_reward_kind(const std::string& s);
MatrixSign parse_matrix_sign(const std::string& s);

std::vector<double> linspace(double lo, double hi, int n);

struct LinearMdpConfig {
    int n_exo = 3;
    int n_end = 2;
    int n_action_vars = 1;
    std::vector<double> action_grid = linspace(-1, 1, 10);
    // Unset means the family default.
    std::optional<double> exo_noise_std;
    std::optional<double> end_noise_std;
    double row_sum = 0.99;
    ActionMatrixKind action_matrix_kind = ActionMatrixKind::ones;
    double end_matrix_sparsity = 1.0;
    RewardKind reward_kind = RewardKind::linear;
    Family family = Family::linear;
    MatrixSign matrix_sign = MatrixSign::nonnegative;
    std::uint64_t seed = 0;

    double exo_std() const;
    double end_std() const;
    void validate() const;
};

// Rows rescaled to sum to row_sum.
Eigen::MatrixXd random_row_normalized(Rng& rng, int rows, int cols, double row_sum, MatrixSign sign,
                                      double density = 1.0);

double exo_reward(RewardKind kind, const Eigen::VectorXd& x);
double end_reward(RewardKind kind, const Eigen::VectorXd& e);

class LinearMdp : public Env {
public:
    explicit LinearMdp(const LinearMdpConfig& config);

    Eigen::VectorXd reset() override;
    StepResult step(const std::vector<int>& action) override;
    // Step with raw action values (one per action variable); used by tests.
    StepResult step_values(const Eigen::VectorXd& a);
    int obs_dim() const override { return config_.n_exo + config_.n_end; }
    std::vector<int> action_cardinalities() const override;
    Eigen::VectorXd action_values(const std::vector<int>& action) const override;
    std::unique_ptr<Env> fork(std::uint64_t noise_seed) const override;

    const LinearMdpConfig& config() const { return config_; }
    const Eigen::MatrixXd& m_exo() const { return m_exo_; }
    const Eigen::MatrixXd& m_end() const { return m_end_; }
    const Eigen::MatrixXd& mixing() const { return mix_; }
    const Eigen::MatrixXd& m_a() const { return m_a_; }
    const Eigen::MatrixXd& n_exo_matrix() const { return n_exo_; }
    const Eigen::MatrixXd& k_exo_matrix() const { return k_exo_; }
    const Eigen::VectorXd& n_a() const { return n_a_; }

    // Oracle channel.
    const Eigen::VectorXd& hidden_e() const { return e_; }
    const Eigen::VectorXd& hidden_x() const { return x_; }
    void set_hidden(const Eigen::VectorXd& e, const Eigen::VectorXd& x);
    void set_noise_scale(double scale) { noise_scale_ = scale; }
    void reseed_noise(std::uint64_t seed) { noise_ = Rng(seed); }
    Eigen::VectorXd observe() const;

private:
    LinearMdpConfig config_;
    Eigen::MatrixXd m_exo_, m_end_, mix_, m_a_, n_exo_, k_exo_;
    Eigen::VectorXd n_a_;
    Eigen::VectorXd e_, x_;
    Rng noise_;
    double noise_scale_ = 1.0;
};

std::unique_ptr<LinearMdp> make_linear_mdp(const LinearMdpConfig& config);

struct RoutingMdpConfig {
    std::map<std::pair<int, int>, double> edge_costs = default_edge_costs();
    bool stochastic = false;
    double exo_decay = 0.9;
    double exo_noise_std = 1.0;
    std::uint64_t seed = 0;

    static std::map<std::pair<int, int>, double> default_edge_costs();
    void validate() const;
};

class RoutingMdp : public Env {
public:
    static constexpr int num_nodes = 9;
    static constexpr int num_exo = 4;
    static constexpr int terminal = 8;

    explicit RoutingMdp(const RoutingMdpConfig& config);

    Eigen::VectorXd reset() override;
    StepResult step(const std::vector<int>& action) override;
    int obs_dim() const override { return num_nodes + num_exo; }
    std::vector<int> action_cardinalities() const override { return {3}; }
    Eigen::VectorXd action_values(const std::vector<int>& action) const override;
    std::vector<std::vector<bool>> action_mask() const override;
    bool episodic() const override { return true; }
    std::unique_ptr<Env> fork(std::uint64_t noise_seed) const override;

    // Outbound rightward edges of each node, in increasing target order.
    static const std::vector<std::vector<int>>& successors();
    // Transition distribution over successors(node) for the stochastic mode.
    static const std::vector<double>& transition_row(int node, int action);

    int node() const { return node_; }
    const Eigen::VectorXd& hidden_x() const { return x_; }
    void set_state(int node, const Eigen::VectorXd& x);
    Eigen::VectorXd observe() const;

private:
    RoutingMdpConfig config_;
    int node_ = 0;
    Eigen::VectorXd x_;
    Rng rng_;
};

std::unique_ptr<RoutingMdp> make_routing_mdp(const RoutingMdpConfig& config);

using Policy = std::function<std::vector<int>(const Eigen::VectorXd& obs, const Env& env, Rng& rng)>;

// Uniform over legal actions.
Policy random_policy();

struct CovarianceProbe {
    double var_rexo = 0;
    double neg2cov = 0;
    double var_rend = 0;
    double var_total = 0;
    long samples = 0;
};

// Monte Carlo Var(R_exo) and -2 Cov(R_end, R_exo) over `steps` transitions.
CovarianceProbe covariance_probe(Env& env, const Policy& policy, long steps, std::uint64_t seed);

} // namespace exoendo

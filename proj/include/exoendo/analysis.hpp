#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "exoendo/errors.hpp"
#include "exoendo/statcore.hpp"

namespace exoendo {

struct structure_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Finite-horizon tabular MDP evaluated under a fixed stochastic policy.
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    std::vector<Eigen::MatrixXd> transition;  // per action, rows s, cols s'
    Eigen::MatrixXd reward_mean;             // s x a
    Eigen::MatrixXd reward_var;              // s x a
    Eigen::MatrixXd policy;                  // s x a
    double gamma = 1.0;

    void validate() const;
};

// Exo chain P(x'|x) and endo kernel P(e'|e,x,a,x'); joint state index s = e * n_x + x.
struct FactoredMdp {
    int n_e = 0, n_x = 0, n_actions = 0;
    Eigen::MatrixXd p_x;                // n_x x n_x
    std::vector<Eigen::VectorXd> p_e;   // index endo_index(e,x,a,x'), distribution over e'
    Eigen::VectorXd m_exo, var_exo;     // over x
    Eigen::MatrixXd m_end, var_end;     // (e,x) x a
    Eigen::MatrixXd policy;             // (e,x) x a
    double gamma = 1.0;

    int state(int e, int x) const { return e * n_x + x; }
    int n_states() const { return n_e * n_x; }
    size_t endo_index(int e, int x, int a, int x2) const { return ((size_t(e) * n_x + x) * n_actions + a) * n_x + x2; }
    void validate() const;

    // Flattened MDP; reward channels selected by the flags.
    TabularMdp joint(bool with_exo_reward, bool with_end_reward) const;
    // The exo chain alone, with a single dummy action.
    TabularMdp exo_chain() const;
};

// Columns h = 0..H.
Eigen::MatrixXd value_dp(const TabularMdp& mdp, int horizon);
Eigen::MatrixXd variance_dp(const TabularMdp& mdp, int horizon);
// Cov[B_x(x;h), B_e(e,x;h)] per joint state.
Eigen::MatrixXd covariance_dp(const FactoredMdp& mdp, int horizon);

long chebychev_n(double variance, double epsilon, double delta);

struct CovarianceCondition {
    bool holds = false;
    double var_exo = 0;
    double neg2cov = 0;
};

// Strict inequality with a roundoff guard of 1e-12 relative to the larger side.
CovarianceCondition covariance_condition(const FactoredMdp& mdp, int e, int x, int horizon);

enum class RewardCombination { additive, product };

// Max over states and horizons <= H of |V - (V_exo + V_end)| under optimal control.
double bellman_split_check(const FactoredMdp& mdp, int horizon, RewardCombination combine = RewardCombination::additive);

struct SplitValues {
    Eigen::MatrixXd v_full, v_exo, v_end;  // columns h = 0..H; v_exo over x, others over (e,x)
};
SplitValues bellman_split_values(const FactoredMdp& mdp, int horizon, RewardCombination combine);

struct MonteCarloReturns {
    Eigen::VectorXd exo, end, total;
};
// Sampled H-step returns from (e, x) with Gaussian reward noise of the stated variances.
MonteCarloReturns monte_carlo_returns(const FactoredMdp& mdp, int e, int x, int horizon, long n, std::uint64_t seed);

struct PrincipalAngles {
    Eigen::VectorXd angles;  // ascending, radians
    bool dimension_mismatch = false;
};

PrincipalAngles principal_angles(const Eigen::MatrixXd& w1, const Eigen::MatrixXd& w2);

// Two-slice template; primed-to-unprimed edges are unrepresentable by construction.
struct DbnTemplate {
    int d = 0;
    std::vector<std::pair<int, int>> diachronic;  // S_i -> S_j'
    std::vector<std::pair<int, int>> synchronic;  // S_i' -> S_j'
    std::vector<int> action_targets;              // A -> S_j'
    std::vector<int> policy_parents;              // S_i -> A

    void validate() const;
    // Primed variables in an order compatible with the synchronic edges.
    std::vector<int> primed_order() const;
};

// Unrolls the template `horizon` steps; non-positive means 2d, enough for any simple path.
std::vector<int> action_disconnected(const DbnTemplate& dbn, int horizon = 0);

enum class TemplateMatch { full, diachronic, none };
std::string to_string(TemplateMatch m);
TemplateMatch template_match(const DbnTemplate& dbn, const std::vector<int>& exo_index_set);

// Joint (S, A, S') table with random strictly positive CPTs following the template.
TabularModel tabular_from_dbn(const DbnTemplate& dbn, const std::vector<int>& cardinalities, int n_actions,
                              std::uint64_t seed);

// Three binary variables: S2 an exogenous root, S1 driven by S2 through S2' -> S1',
// S3 endogenous with A -> S3', policy reading S2 and S3.
DbnTemplate subset_nonclosure_dbn();
TabularModel subset_nonclosure_model(std::uint64_t seed = 0);

} // namespace exoendo

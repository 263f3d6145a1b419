#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "exoendo/decompose.hpp"
#include "exoendo/envs.hpp"
#include "exoendo/nn.hpp"
#include "exoendo/regress.hpp"

namespace exoendo {

struct PpoSettings {
    double clip = 0.2;
    double value_coeff = 0.5;
    double entropy_coeff = 0.0;
    double gae_lambda = 0.95;
    double gamma = 0.99;
    double learning_rate = 3e-4;
    int minibatch = 64;
    int rollout_steps = 1536;
    int epochs_per_update = 10;
    double adam_eps = 1e-5;
    // Global gradient-norm clip across both nets; non-positive disables it.
    double max_grad_norm = 0.5;
    bool normalize_advantages = true;

    void validate() const;
};

struct ActResult {
    std::vector<int> action;
    double log_prob = 0;
    double value = 0;
};

// Separate policy and value nets (d -> 64 -> 64, tanh); one categorical head per action variable.
class PolicyValueNets {
public:
    PolicyValueNets(int obs_dim, std::vector<int> action_cardinalities, const PpoSettings& settings, std::uint64_t seed);

    // Masked probabilities per head, concatenated (sum of cardinalities).
    Eigen::VectorXd probabilities(const Eigen::VectorXd& obs, const Eigen::VectorXd& mask) const;
    ActResult act(const Eigen::VectorXd& obs, const Eigen::VectorXd& mask, Rng& rng) const;
    double value(const Eigen::VectorXd& obs) const;
    double log_prob(const Eigen::VectorXd& obs, const Eigen::VectorXd& mask, const std::vector<int>& action) const;

    int obs_dim() const { return obs_dim_; }
    const std::vector<int>& action_cardinalities() const { return cards_; }
    int logit_dim() const { return logit_dim_; }

    Mlp policy, critic;
    Adam policy_opt, critic_opt;

private:
    int obs_dim_;
    std::vector<int> cards_;
    int logit_dim_;
};

// Flattened legality mask (1 legal, 0 illegal) in head order.
Eigen::VectorXd flatten_mask(const std::vector<std::vector<bool>>& mask);

struct RolloutBuffer {
    Eigen::MatrixXd obs;  // obs_dim x K
    Eigen::MatrixXd masks;  // logit_dim x K
    std::vector<std::vector<int>> actions;
    std::vector<Eigen::VectorXd> action_values;
    std::vector<StepResult> results;
    Eigen::VectorXd log_probs, values, rewards, raw_rewards;
    std::vector<bool> dones;
    double last_value = 0;
    int size = 0;

    void reserve(int obs_dim, int logit_dim, int capacity);
    void clear();
};

// Maps (obs the action was taken from, step result) to the stored reward.
using RewardTransform = std::function<double(const Eigen::VectorXd& obs, const StepResult& result)>;

// Persistent interaction state for one env: the current observation across rollouts.
class Collector {
public:
    Collector(Env& env, std::uint64_t seed);
    // One transition appended to the buffer; returns the step result.
    const StepResult& step(const PolicyValueNets& nets, RolloutBuffer& buffer, const RewardTransform& transform);
    void finish(const PolicyValueNets& nets, RolloutBuffer& buffer) const;
    const Eigen::VectorXd& obs() const { return obs_; }
    long steps() const { return steps_; }

private:
    Env* env_;
    Rng rng_;
    Eigen::VectorXd obs_;
    long steps_ = 0;
};

RolloutBuffer collect_rollout(const PolicyValueNets& nets, Collector& collector, int steps,
                              const RewardTransform& transform = {});

struct Advantages {
    Eigen::VectorXd advantages, returns;
};

Advantages gae_advantages(const RolloutBuffer& buffer, double gamma, double lambda);

struct UpdateDiagnostics {
    double policy_loss = 0, value_loss = 0, entropy = 0, approx_kl = 0, clip_fraction = 0;
    int skipped_minibatches = 0;
    std::vector<std::string> notes;
};

UpdateDiagnostics ppo_update(PolicyValueNets& nets, const RolloutBuffer& buffer, const PpoSettings& settings, Rng& rng);

// Mean reward per step over `steps` in a fresh fork of `env_template` (for episodic envs,
// the mean return of completed episodes). Deterministic in (nets, seed).
double evaluate_policy(const PolicyValueNets& nets, const Env& env_template, int steps, std::uint64_t seed);

enum class Method { baseline, oracle, grds, simplified_grds, sras };
std::string to_string(Method m);
Method parse_method(const std::string& s);

struct RunSchedule {
    long total_steps = 50000;
    long decomposition_steps = 3000;
    int eval_steps = 1000;
    // Combined with the run seed; every evaluation in a run starts from the same noise stream.
    std::uint64_t eval_seed = 20240601;

    void validate() const;
};

struct RunConfig {
    Method method = Method::baseline;
    RunSchedule schedule;
    PpoSettings ppo;
    CccParams ccc;
    DescentSettings descent;
    GrdsOptions grds;
    SrasOptions sras;
    RegressionSchedule regression;
    std::uint64_t seed = 0;
};

struct CurvePoint {
    int update = 0;
    long env_steps = 0;
    double eval_reward = 0;
    double wall_time = 0;
};

struct RunOutput {
    std::vector<CurvePoint> curve;
    std::optional<DecompositionReport> report;
    std::optional<RewardModel> reward_model;
    int rank = -1;  // -1 when no discovery ran
    double wall_time = 0;
    double decomposition_time = 0;
    // Max |stored - (raw - m_exo(features))| over the rewritten Phase-1 rewards.
    double rewrite_error = 0;
    std::vector<std::string> log;
};

bool uses_discovery(Method m);
// Dispatches to the discovery algorithm named by config.method, seeded from config.seed.
DecompositionReport discover_for_method(const RunConfig& config, const TransitionDataset& data);

// Two-phase driver; `env` is the training env, evaluation runs on forks of it.
RunOutput run_two_phase(const RunConfig& config, Env& env);

} // namespace exoendo

#include "exoendo/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace exoendo {

std::vector<std::vector<bool>> Env::action_mask() const {
    std::vector<std::vector<bool>> m;
    for (int c : action_cardinalities()) m.emplace_back(c, true);
    return m;
}

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
    for (const auto& [name, v] : table)
        if (s == name) return v;
    throw config_error(std::string("unknown ") + what + ": " + s);
}

double avg(const Eigen::VectorXd& v) { return v.mean(); }

} // namespace

std::string to_string(Family f) {
    switch (f) {
    case Family::linear: return "linear";
    case Family::m1: return "m1";
    case Family::m2: return "m2";
    case Family::m3: return "m3";
    case Family::anticorrelated: return "anticorrelated";
    }
    return "?";
}
std::string to_string(ActionMatrixKind k) {
    switch (k) {
    case ActionMatrixKind::ones: return "ones";
    case ActionMatrixKind::dense: return "dense";
    case ActionMatrixKind::partial_dense: return "partial_dense";
    case ActionMatrixKind::partial_disjoint: return "partial_disjoint";
    }
    return "?";
}
std::string to_string(RewardKind k) {
    switch (k) {
    case RewardKind::linear: return "linear";
    case RewardKind::r1: return "r1";
    case RewardKind::r2: return "r2";
    case RewardKind::r3: return "r3";
    case RewardKind::r4: return "r4";
    case RewardKind::anticorrelated: return "anticorrelated";
    }
    return "?";
}
std::string to_string(MatrixSign s) { return s == MatrixSign::nonnegative ? "nonnegative" : "signed"; }

Family parse_family(const std::string& s) {
    return parse_enum<Family>(s, {{"linear", Family::linear}, {"m1", Family::m1}, {"m2", Family::m2},
                                  {"m3", Family::m3}, {"anticorrelated", Family::anticorrelated}}, "family");
}
ActionMatrixKind parse_action_matrix_kind(const std::string& s) {
    return parse_enum<ActionMatrixKind>(s, {{"ones", ActionMatrixKind::ones}, {"dense", ActionMatrixKind::dense},
                                            {"partial_dense", ActionMatrixKind::partial_dense},
                                            {"partial_disjoint", ActionMatrixKind::partial_disjoint}},
                                        "action matrix kind");
}
RewardKind parse_reward_kind(const std::string& s) {
    return parse_enum<RewardKind>(s, {{"linear", RewardKind::linear}, {"r1", RewardKind::r1}, {"r2", RewardKind::r2},
                                      {"r3", RewardKind::r3}, {"r4", RewardKind::r4},
                                      {"anticorrelated", RewardKind::anticorrelated}}, "reward kind");
}
MatrixSign parse_matrix_sign(const std::string& s) {
    return parse_enum<MatrixSign>(s, {{"nonnegative", MatrixSign::nonnegative}, {"signed", MatrixSign::signed_gaussian}},
                                  "matrix sign");
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    return v;
}

double LinearMdpConfig::exo_std() const {
    if (exo_noise_std) return *exo_noise_std;
    return (family == Family::m3 || family == Family::anticorrelated) ? 0.4 : 0.3;
}

double LinearMdpConfig::end_std() const {
    if (end_noise_std) return *end_noise_std;
    return family == Family::m3 ? 0.3 : 0.2;
}

void LinearMdpConfig::validate() const {
    if (n_exo < 1 || n_end < 1 || n_action_vars < 1) throw config_error("linear mdp: dimensions must be positive");
    std::vector<double> g = action_grid;
    std::sort(g.begin(), g.end());
    if (std::unique(g.begin(), g.end()) - g.begin() < 2) throw config_error("linear mdp: action grid needs 2 distinct values");
    if (!(row_sum > 0 && row_sum < 1)) throw config_error("linear mdp: row_sum must be in (0,1)");
    if (!(end_matrix_sparsity > 0 && end_matrix_sparsity <= 1)) throw config_error("linear mdp: sparsity must be in (0,1]");
    if (exo_std() < 0 || end_std() < 0) throw config_error("linear mdp: noise std must be nonnegative");
    if ((action_matrix_kind == ActionMatrixKind::partial_dense || action_matrix_kind == ActionMatrixKind::partial_disjoint) &&
        n_action_vars > n_end)
        throw config_error("linear mdp: partial action matrices need l <= m");
    if (family == Family::anticorrelated && n_exo != n_end)
        throw config_error("linear mdp: anticorrelated family needs n_exo == n_end");
}

Eigen::MatrixXd random_row_normalized(Rng& rng, int rows, int cols, double row_sum, MatrixSign sign, double density) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (;;) {
            for (int j = 0; j < cols; ++j) {
                double g = rng.normal();
                if (sign == MatrixSign::nonnegative) g = std::abs(g);
                if (density < 1 && rng.uniform() >= density) g = 0;
                m(i, j) = g;
            }
            const double s = m.row(i).sum();
            // Redraw rows that cannot be rescaled.
            if (std::abs(s) > 1e-8) {
                m.row(i) *= row_sum / s;
                break;
            }
        }
    }
    return m;
}

double exo_reward(RewardKind kind, const Eigen::VectorXd& x) {
    const double mx = avg(x);
    switch (kind) {
    case RewardKind::linear: return -3 * mx;
    case RewardKind::r1: {
        const double v = 6 * (mx + avg(x.array().square().matrix()) / 3 - 2 * avg(x.array().cube().matrix()) / 15);
        return std::clamp(v, -5.0, 5.0);
    }
    case RewardKind::r2: return -3 * std::exp(-std::pow(std::abs(mx), 1.5));
    case RewardKind::r3: {
        const double a = mx + 1.5, b = mx - 1.5;
        return -3 * (std::exp(-a * a) - std::exp(-b * b));
    }
    case RewardKind::r4: {
        const double a = mx + 1, b = mx - 1.5;
        return -3 * (std::exp(-a * a) + 1.5 * std::exp(-b * b) - 5.0 / 3.0 * std::exp(-mx * mx));
    }
    case RewardKind::anticorrelated: return std::exp(-std::abs(mx + 2.5) / 3);
    }
    return 0;
}

double end_reward(RewardKind kind, const Eigen::VectorXd& e) {
    if (kind == RewardKind::anticorrelated) return std::exp(-std::abs(avg(e) - 2.5) / 3);
    return std::exp(-std::abs(avg(e) - 1));
}

LinearMdp::LinearMdp(const LinearMdpConfig& config) : config_(config), noise_(sub_seed(config.seed, 1)) {
    config_.validate();
    const int n = config_.n_exo, m = config_.n_end, l = config_.n_action_vars;
    const double rs = config_.row_sum;
    const MatrixSign sign = config_.matrix_sign;
    Rng rng(sub_seed(config_.seed, 0));

    m_exo_ = random_row_normalized(rng, n, n, rs, sign);
    const int end_cols = config_.family == Family::anticorrelated ? m : m + n;
    m_end_ = random_row_normalized(rng, m, end_cols, rs, sign, config_.end_matrix_sparsity);
    // Mixing matrix must be well conditioned so that s determines (e, x).
    for (int attempt = 0;; ++attempt) {
        mix_ = random_row_normalized(rng, m + n, m + n, rs, sign);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(mix_);
        const auto& sv = svd.singularValues();
        if (sv(sv.size() - 1) > 0 && sv(0) / sv(sv.size() - 1) < 1e6) break;
        if (attempt > 1000) throw numeric_error("linear mdp: could not draw a well-conditioned mixing matrix");
    }
    if (config_.family == Family::m1 || config_.family == Family::m2) {
        n_exo_ = random_row_normalized(rng, n, n, rs, sign);
        k_exo_ = random_row_normalized(rng, n, n, rs, sign);
    }

    m_a_ = Eigen::MatrixXd::Zero(m, l);
    switch (config_.action_matrix_kind) {
    case ActionMatrixKind::ones: m_a_.setOnes(); break;
    case ActionMatrixKind::dense:
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < l; ++j) m_a_(i, j) = rng.uniform();
            m_a_.row(i) *= rs / m_a_.row(i).sum();
        }
        break;
    case ActionMatrixKind::partial_dense:
    case ActionMatrixKind::partial_disjoint: {
        // Controlled rows: a seeded choice of l of the m endogenous variables.
        std::vector<int> rows(m);
        std::iota(rows.begin(), rows.end(), 0);
        for (int i = m - 1; i > 0; --i) std::swap(rows[i], rows[rng.index(i + 1)]);
        rows.resize(l);
        std::sort(rows.begin(), rows.end());
        for (int k = 0; k < l; ++k) {
            const int i = rows[k];
            if (config_.action_matrix_kind == ActionMatrixKind::partial_dense) {
                for (int j = 0; j < l; ++j) m_a_(i, j) = rng.uniform();
                m_a_.row(i) *= rs / m_a_.row(i).sum();
            } else {
                m_a_(i, k) = rng.uniform(0.5, 1.5);
            }
        }
        break;
    }
    }
    if (config_.family == Family::m2) {
        n_a_.resize(m);
        for (int i = 0; i < m; ++i) n_a_(i) = rng.uniform(0.5, 1.5);
    }
    reset();
}

Eigen::VectorXd LinearMdp::reset() {
    x_.resize(config_.n_exo);
    e_.resize(config_.n_end);
    for (int i = 0; i < x_.size(); ++i) x_(i) = noise_.uniform();
    for (int i = 0; i < e_.size(); ++i) e_(i) = noise_.uniform();
    return observe();
}

Eigen::VectorXd LinearMdp::observe() const {
    Eigen::VectorXd h(e_.size() + x_.size());
    h << e_, x_;
    return mix_ * h;
}

void LinearMdp::set_hidden(const Eigen::VectorXd& e, const Eigen::VectorXd& x) {
    if (e.size() != config_.n_end || x.size() != config_.n_exo) throw dimension_error("set_hidden: shape mismatch");
    e_ = e;
    x_ = x;
}

std::vector<int> LinearMdp::action_cardinalities() const {
    return std::vector<int>(config_.n_action_vars, int(config_.action_grid.size()));
}

Eigen::VectorXd LinearMdp::action_values(const std::vector<int>& action) const {
    if (int(action.size()) != config_.n_action_vars) throw domain_error("linear mdp: wrong number of action variables");
    Eigen::VectorXd a(action.size());
    for (size_t j = 0; j < action.size(); ++j) {
        if (action[j] < 0 || action[j] >= int(config_.action_grid.size())) throw domain_error("linear mdp: action outside grid");
        a(j) = config_.action_grid[action[j]];
    }
    return a;
}

StepResult LinearMdp::step(const std::vector<int>& action) { return step_values(action_values(action)); }

StepResult LinearMdp::step_values(const Eigen::VectorXd& a) {
    if (a.size() != config_.n_action_vars) throw domain_error("linear mdp: wrong number of action variables");
    for (int j = 0; j < a.size(); ++j)
        if (std::find(config_.action_grid.begin(), config_.action_grid.end(), a(j)) == config_.action_grid.end())
            throw domain_error("linear mdp: action outside grid");

    StepResult out;
    out.r_exo = exo_reward(config_.reward_kind, x_);
    out.r_end = end_reward(config_.reward_kind, e_);
    out.reward = out.r_exo + out.r_end;

    const int n = config_.n_exo, m = config_.n_end;
    // Noise order: exo before endo.
    Eigen::VectorXd eps_x(n), eps_e(m);
    const double sx = config_.exo_std() * noise_scale_, se = config_.end_std() * noise_scale_;
    for (int i = 0; i < n; ++i) eps_x(i) = noise_.normal() * sx;
    for (int i = 0; i < m; ++i) eps_e(i) = noise_.normal() * se;

    Eigen::VectorXd ex(m + n);
    ex << e_, x_;
    Eigen::VectorXd x2, e2;
    switch (config_.family) {
    case Family::linear:
        x2 = m_exo_ * x_ + eps_x;
        e2 = m_end_ * ex + m_a_ * a + eps_e;
        break;
    case Family::m1:
    case Family::m2: {
        Eigen::VectorXd x_sq = x_.array().square(), x_cu = x_.array().cube();
        Eigen::VectorXd drift = m_exo_ * x_ + n_exo_ * x_sq / 3 - 2 * k_exo_ * x_cu / 15;
        x2 = drift.cwiseMax(-4).cwiseMin(4) + eps_x;
        e2 = m_end_ * ex + m_a_ * a + eps_e;
        if (config_.family == Family::m2) e2 += n_a_ * (a(0) * a(0));
        break;
    }
    case Family::m3: {
        Eigen::VectorXd drift(n);
        for (int i = 0; i < n; ++i) {
            const double v = x_(i);
            const double sg = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
            drift(i) = std::clamp(5 * sg * std::sqrt(std::abs(v)) - std::sin(v), -2.0, 2.0);
        }
        x2 = drift + eps_x;
        e2 = m_end_ * ex + Eigen::VectorXd::Constant(m, std::sin(3 * a(0))) + eps_e;
        break;
    }
    case Family::anticorrelated:
        x2 = 0.9 * m_exo_ * x_ + eps_x;
        e2 = 0.45 * m_end_ * e_ + 0.55 * m_exo_ * x_ + m_a_ * a + eps_e;
        break;
    }
    x_ = x2;
    e_ = e2;
    out.obs = observe();
    return out;
}

std::unique_ptr<Env> LinearMdp::fork(std::uint64_t noise_seed) const {
    auto c = std::make_unique<LinearMdp>(*this);
    c->reseed_noise(noise_seed);
    c->reset();
    return c;
}

std::unique_ptr<LinearMdp> make_linear_mdp(const LinearMdpConfig& config) { return std::make_unique<LinearMdp>(config); }

// ---- routing ----

std::map<std::pair<int, int>, double> RoutingMdpConfig::default_edge_costs() {
    return {{{0, 1}, 2}, {{0, 2}, 1}, {{0, 4}, 4}, {{1, 4}, 1}, {{1, 5}, 3}, {{2, 3}, 2}, {{2, 4}, 2}, {{3, 6}, 1},
            {{3, 7}, 3}, {{4, 5}, 1}, {{4, 6}, 2}, {{4, 8}, 5}, {{5, 8}, 2}, {{6, 7}, 1}, {{7, 8}, 1}};
}

void RoutingMdpConfig::validate() const {
    for (int v = 0; v < RoutingMdp::num_nodes; ++v)
        for (int w : RoutingMdp::successors()[v]) {
            auto it = edge_costs.find({v, w});
            if (it == edge_costs.end()) throw config_error("routing: missing cost for an edge");
            if (!(it->second > 0)) throw config_error("routing: edge costs must be positive");
        }
    for (const auto& [edge, c] : edge_costs) {
        const auto& succ = RoutingMdp::successors();
        if (edge.first < 0 || edge.first >= RoutingMdp::num_nodes ||
            std::find(succ[edge.first].begin(), succ[edge.first].end(), edge.second) == succ[edge.first].end())
            throw config_error("routing: cost given for an edge outside the fixed topology");
    }
}

const std::vector<std::vector<int>>& RoutingMdp::successors() {
    static const std::vector<std::vector<int>> s = {{1, 2, 4}, {4, 5}, {3, 4}, {6, 7}, {5, 6, 8}, {8}, {7}, {8}, {}};
    return s;
}

const std::vector<double>& RoutingMdp::transition_row(int node, int action) {
    static const std::vector<std::vector<std::vector<double>>> t = {
        {{0.5, 0.3, 0.2}, {0.3, 0.5, 0.2}, {0.3, 0.2, 0.5}},
        {{0.6, 0.4}, {0.5, 0.5}},
        {{0.5, 0.5}, {0.3, 0.7}},
        {{0.7, 0.3}, {0.4, 0.6}},
        {{0.6, 0.2, 0.2}, {0.0, 1.0, 0.0}, {0.3, 0.2, 0.5}},
        {{1.0}},
        {{1.0}},
        {{1.0}},
        {},
    };
    return t.at(node).at(action);
}

RoutingMdp::RoutingMdp(const RoutingMdpConfig& config)
    : config_(config), x_(Eigen::VectorXd::Zero(num_exo)), rng_(sub_seed(config.seed, 1)) {
    config_.validate();
    reset();
}

Eigen::VectorXd RoutingMdp::reset() {
    node_ = 0;
    return observe();
}

Eigen::VectorXd RoutingMdp::observe() const {
    Eigen::VectorXd o = Eigen::VectorXd::Zero(num_nodes + num_exo);
    o(node_) = 1;
    o.tail(num_exo) = x_;
    return o;
}

void RoutingMdp::set_state(int node, const Eigen::VectorXd& x) {
    if (node < 0 || node >= num_nodes || x.size() != num_exo) throw dimension_error("routing: bad state");
    node_ = node;
    x_ = x;
}

std::vector<std::vector<bool>> RoutingMdp::action_mask() const {
    std::vector<bool> m(3, false);
    const int k = int(successors()[node_].size());
    for (int i = 0; i < std::max(k, 1); ++i) m[i] = true;
    return {m};
}

Eigen::VectorXd RoutingMdp::action_values(const std::vector<int>& action) const {
    if (action.size() != 1) throw domain_error("routing: one action variable expected");
    return Eigen::VectorXd::Constant(1, action[0]);
}

StepResult RoutingMdp::step(const std::vector<int>& action) {
    if (action.size() != 1) throw domain_error("routing: one action variable expected");
    if (node_ == terminal) throw domain_error("routing: episode already terminated");
    const auto& succ = successors()[node_];
    const int a = action[0];
    if (a < 0 || a >= int(succ.size())) throw domain_error("routing: action index exceeds out-degree");

    int next = succ[a];
    if (config_.stochastic) {
        const auto& row = transition_row(node_, a);
        double u = rng_.uniform(), acc = 0;
        next = succ.back();
        for (size_t k = 0; k < row.size(); ++k) {
            acc += row[k];
            if (u < acc) {
                next = succ[k];
                break;
            }
        }
    }
    StepResult out;
    out.r_end = -config_.edge_costs.at({node_, next});
    out.r_exo = -x_.sum();
    out.reward = out.r_end + out.r_exo;
    for (int i = 0; i < num_exo; ++i) x_(i) = config_.exo_decay * x_(i) + config_.exo_noise_std * rng_.normal();
    node_ = next;
    out.done = node_ == terminal;
    out.obs = observe();
    return out;
}

std::unique_ptr<Env> RoutingMdp::fork(std::uint64_t noise_seed) const {
    auto c = std::make_unique<RoutingMdp>(*this);
    c->rng_ = Rng(noise_seed);
    c->x_.setZero();
    c->reset();
    return c;
}

std::unique_ptr<RoutingMdp> make_routing_mdp(const RoutingMdpConfig& config) {
    return std::make_unique<RoutingMdp>(config);
}

Policy random_policy() {
    return [](const Eigen::VectorXd&, const Env& env, Rng& rng) {
        const auto mask = env.action_mask();
        std::vector<int> a(mask.size());
        for (size_t j = 0; j < mask.size(); ++j) {
            std::vector<int> legal;
            for (size_t k = 0; k < mask[j].size(); ++k)
                if (mask[j][k]) legal.push_back(int(k));
            a[j] = legal[rng.index(int(legal.size()))];
        }
        return a;
    };
}

CovarianceProbe covariance_probe(Env& env, const Policy& policy, long steps, std::uint64_t seed) {
    if (steps < 2) throw domain_error("covariance_probe: need at least 2 samples");
    Rng rng(seed);
    Eigen::VectorXd obs = env.reset();
    Eigen::ArrayXd rx(steps), re(steps);
    for (long t = 0; t < steps; ++t) {
        StepResult r = env.step(policy(obs, env, rng));
        rx(t) = r.r_exo;
        re(t) = r.r_end;
        obs = r.done ? env.reset() : r.obs;
    }
    const double mx = rx.mean(), me = re.mean();
    CovarianceProbe p;
    p.samples = steps;
    p.var_rexo = (rx - mx).square().mean();
    p.var_rend = (re - me).square().mean();
    p.neg2cov = -2 * ((rx - mx) * (re - me)).mean();
    p.var_total = ((rx + re) - (mx + me)).square().mean();
    return p;
}

} // namespace exoendo

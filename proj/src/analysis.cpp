#include "exoendo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "exoendo/rng.hpp"

namespace exoendo {

namespace {

void check_distribution(const Eigen::VectorXd& p, const char* what) {
    if ((p.array() < 0).any() || std::abs(p.sum() - 1.0) > 1e-12)
        throw numeric_error(std::string(what) + ": rows must be distributions");
}

int sample(Rng& rng, const Eigen::VectorXd& p) {
    double u = rng.uniform(), acc = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) return int(i);
    }
    // Roundoff: last index with positive mass.
    for (Eigen::Index i = p.size() - 1; i >= 0; --i)
        if (p(i) > 0) return int(i);
    return int(p.size()) - 1;
}

} // namespace

void TabularMdp::validate() const {
    if (n_states < 1 || n_actions < 1) throw dimension_error("tabular mdp: empty");
    if (int(transition.size()) != n_actions) throw dimension_error("tabular mdp: one transition matrix per action");
    for (const auto& p : transition) {
        if (p.rows() != n_states || p.cols() != n_states) throw dimension_error("tabular mdp: transition shape");
        for (int s = 0; s < n_states; ++s) check_distribution(p.row(s).transpose(), "tabular mdp transition");
    }
    for (const auto* m : {&reward_mean, &reward_var, &policy})
        if (m->rows() != n_states || m->cols() != n_actions) throw dimension_error("tabular mdp: table shape");
    if ((reward_var.array() < 0).any()) throw numeric_error("tabular mdp: negative reward variance");
    for (int s = 0; s < n_states; ++s) check_distribution(policy.row(s).transpose(), "tabular mdp policy");
}

void FactoredMdp::validate() const {
    if (n_e < 1 || n_x < 1 || n_actions < 1) throw dimension_error("factored mdp: empty");
    if (p_x.rows() != n_x || p_x.cols() != n_x) throw dimension_error("factored mdp: p_x shape");
    for (int x = 0; x < n_x; ++x) check_distribution(p_x.row(x).transpose(), "factored mdp p_x");
    if (p_e.size() != size_t(n_e) * n_x * n_actions * n_x) throw dimension_error("factored mdp: p_e size");
    for (const auto& p : p_e) {
        if (p.size() != n_e) throw dimension_error("factored mdp: p_e row size");
        check_distribution(p, "factored mdp p_e");
    }
    if (m_exo.size() != n_x || var_exo.size() != n_x) throw dimension_error("factored mdp: exo reward shape");
    for (const auto* m : {&m_end, &var_end, &policy})
        if (m->rows() != n_states() || m->cols() != n_actions) throw dimension_error("factored mdp: endo table shape");
    if ((var_exo.array() < 0).any() || (var_end.array() < 0).any()) throw numeric_error("factored mdp: negative variance");
    for (int s = 0; s < n_states(); ++s) check_distribution(policy.row(s).transpose(), "factored mdp policy");
}

TabularMdp FactoredMdp::joint(bool with_exo_reward, bool with_end_reward) const {
    validate();
    TabularMdp t;
    t.n_states = n_states();
    t.n_actions = n_actions;
    t.gamma = gamma;
    t.policy = policy;
    t.reward_mean = Eigen::MatrixXd::Zero(t.n_states, n_actions);
    t.reward_var = Eigen::MatrixXd::Zero(t.n_states, n_actions);
    t.transition.assign(n_actions, Eigen::MatrixXd::Zero(t.n_states, t.n_states));
    for (int e = 0; e < n_e; ++e)
        for (int x = 0; x < n_x; ++x) {
            const int s = state(e, x);
            for (int a = 0; a < n_actions; ++a) {
                if (with_exo_reward) {
                    t.reward_mean(s, a) += m_exo(x);
                    t.reward_var(s, a) += var_exo(x);
                }
                if (with_end_reward) {
                    t.reward_mean(s, a) += m_end(s, a);
                    t.reward_var(s, a) += var_end(s, a);
                }
                for (int x2 = 0; x2 < n_x; ++x2)
                    for (int e2 = 0; e2 < n_e; ++e2)
                        t.transition[a](s, state(e2, x2)) += p_x(x, x2) * p_e[endo_index(e, x, a, x2)](e2);
            }
        }
    return t;
}

TabularMdp FactoredMdp::exo_chain() const {
    TabularMdp t;
    t.n_states = n_x;
    t.n_actions = 1;
    t.gamma = gamma;
    t.transition = {p_x};
    t.reward_mean = m_exo;
    t.reward_var = var_exo;
    t.policy = Eigen::MatrixXd::Ones(n_x, 1);
    return t;
}

Eigen::MatrixXd value_dp(const TabularMdp& mdp, int horizon) {
    mdp.validate();
    if (horizon < 0) throw dimension_error("value_dp: negative horizon");
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(mdp.n_states, horizon + 1);
    for (int h = 1; h <= horizon; ++h)
        for (int a = 0; a < mdp.n_actions; ++a)
            v.col(h) += mdp.policy.col(a).cwiseProduct(mdp.reward_mean.col(a) + mdp.gamma * mdp.transition[a] * v.col(h - 1));
    return v;
}

Eigen::MatrixXd variance_dp(const TabularMdp& mdp, int horizon) {
    Eigen::MatrixXd v = value_dp(mdp, horizon);
    const double g = mdp.gamma;
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(mdp.n_states, horizon + 1);
    for (int h = 1; h <= horizon; ++h) {
        for (int s = 0; s < mdp.n_states; ++s) {
            double acc = 0;
            for (int a = 0; a < mdp.n_actions; ++a) {
                const double pa = mdp.policy(s, a);
                if (pa == 0) continue;
                const double m = mdp.reward_mean(s, a);
                double inner = mdp.reward_var(s, a);
                for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                    const double p = mdp.transition[a](s, s2);
                    if (p == 0) continue;
                    const double b = m + g * v(s2, h - 1);
                    inner += p * (b * b + g * g * var(s2, h - 1));
                }
                acc += pa * inner;
            }
            double out = acc - v(s, h) * v(s, h);
            if (out < -1e-9) throw numeric_error("variance_dp: negative variance, inconsistent inputs");
            var(s, h) = std::max(out, 0.0);
        }
    }
    return var;
}

Eigen::MatrixXd covariance_dp(const FactoredMdp& mdp, int horizon) {
    mdp.validate();
    if (horizon < 0) throw dimension_error("covariance_dp: negative horizon");
    const Eigen::MatrixXd vx = value_dp(mdp.exo_chain(), horizon);
    const Eigen::MatrixXd ve = value_dp(mdp.joint(false, true), horizon);
    const double g = mdp.gamma;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(mdp.n_states(), horizon + 1);
    for (int h = 1; h <= horizon; ++h) {
        for (int e = 0; e < mdp.n_e; ++e)
            for (int x = 0; x < mdp.n_x; ++x) {
                const int s = mdp.state(e, x);
                double acc = 0;
                for (int a = 0; a < mdp.n_actions; ++a) {
                    const double pa = mdp.policy(s, a);
                    if (pa == 0) continue;
                    for (int x2 = 0; x2 < mdp.n_x; ++x2) {
                        const double px = mdp.p_x(x, x2);
                        if (px == 0) continue;
                        const double bx = mdp.m_exo(x) + g * vx(x2, h - 1);
                        const Eigen::VectorXd& pe = mdp.p_e[mdp.endo_index(e, x, a, x2)];
                        for (int e2 = 0; e2 < mdp.n_e; ++e2) {
                            if (pe(e2) == 0) continue;
                            const int s2 = mdp.state(e2, x2);
                            const double be = mdp.m_end(s, a) + g * ve(s2, h - 1);
                            acc += pa * px * pe(e2) * (g * g * cov(s2, h - 1) + bx * be);
                        }
                    }
                }
                cov(s, h) = acc - vx(x, h) * ve(s, h);
            }
    }
    return cov;
}

long chebychev_n(double variance, double epsilon, double delta) {
    if (!(epsilon > 0)) throw std::domain_error("chebychev_n: epsilon must be positive");
    if (!(delta > 0 && delta < 1)) throw std::domain_error("chebychev_n: delta must be in (0,1)");
    if (variance < 0) throw std::domain_error("chebychev_n: negative variance");
    const double n = variance / (delta * epsilon * epsilon);
    // Guard against representation error just above an integer.
    const double r = std::round(n);
    if (std::abs(n - r) < 1e-9 * std::max(1.0, r)) return long(r);
    return long(std::ceil(n));
}

CovarianceCondition covariance_condition(const FactoredMdp& mdp, int e, int x, int horizon) {
    const Eigen::MatrixXd var = variance_dp(mdp.exo_chain(), horizon);
    const Eigen::MatrixXd cov = covariance_dp(mdp, horizon);
    CovarianceCondition c;
    c.var_exo = var(x, horizon);
    c.neg2cov = -2 * cov(mdp.state(e, x), horizon);
    const double scale = std::max({1.0, std::abs(c.var_exo), std::abs(c.neg2cov)});
    c.holds = c.var_exo - c.neg2cov > 1e-12 * scale;
    return c;
}

SplitValues bellman_split_values(const FactoredMdp& mdp, int horizon, RewardCombination combine) {
    mdp.validate();
    const double g = mdp.gamma;
    const TabularMdp full = mdp.joint(false, false);
    SplitValues sv;
    sv.v_full = Eigen::MatrixXd::Zero(mdp.n_states(), horizon + 1);
    sv.v_end = Eigen::MatrixXd::Zero(mdp.n_states(), horizon + 1);
    sv.v_exo = Eigen::MatrixXd::Zero(mdp.n_x, horizon + 1);
    for (int h = 1; h <= horizon; ++h) {
        sv.v_exo.col(h) = mdp.m_exo + g * mdp.p_x * sv.v_exo.col(h - 1);
        for (int e = 0; e < mdp.n_e; ++e)
            for (int x = 0; x < mdp.n_x; ++x) {
                const int s = mdp.state(e, x);
                double best_full = -INFINITY, best_end = -INFINITY;
                for (int a = 0; a < mdp.n_actions; ++a) {
                    const double r = combine == RewardCombination::additive ? mdp.m_exo(x) + mdp.m_end(s, a)
                                                                            : mdp.m_exo(x) * mdp.m_end(s, a);
                    const double next_full = full.transition[a].row(s).dot(sv.v_full.col(h - 1));
                    const double next_end = full.transition[a].row(s).dot(sv.v_end.col(h - 1));
                    best_full = std::max(best_full, r + g * next_full);
                    best_end = std::max(best_end, mdp.m_end(s, a) + g * next_end);
                }
                sv.v_full(s, h) = best_full;
                sv.v_end(s, h) = best_end;
            }
    }
    return sv;
}

double bellman_split_check(const FactoredMdp& mdp, int horizon, RewardCombination combine) {
    const SplitValues sv = bellman_split_values(mdp, horizon, combine);
    double worst = 0;
    for (int h = 0; h <= horizon; ++h)
        for (int e = 0; e < mdp.n_e; ++e)
            for (int x = 0; x < mdp.n_x; ++x) {
                const int s = mdp.state(e, x);
                worst = std::max(worst, std::abs(sv.v_full(s, h) - (sv.v_exo(x, h) + sv.v_end(s, h))));
            }
    return worst;
}

MonteCarloReturns monte_carlo_returns(const FactoredMdp& mdp, int e0, int x0, int horizon, long n, std::uint64_t seed) {
    mdp.validate();
    Rng rng(seed);
    MonteCarloReturns out;
    out.exo.resize(n);
    out.end.resize(n);
    out.total.resize(n);
    const Eigen::VectorXd sd_x = mdp.var_exo.cwiseSqrt();
    const Eigen::MatrixXd sd_e = mdp.var_end.cwiseSqrt();
    for (long i = 0; i < n; ++i) {
        int e = e0, x = x0;
        double bx = 0, be = 0, disc = 1;
        for (int t = 0; t < horizon; ++t) {
            const int s = mdp.state(e, x);
            const int a = sample(rng, mdp.policy.row(s).transpose());
            bx += disc * (mdp.m_exo(x) + sd_x(x) * rng.normal());
            be += disc * (mdp.m_end(s, a) + sd_e(s, a) * rng.normal());
            const int x2 = sample(rng, mdp.p_x.row(x).transpose());
            const int e2 = sample(rng, mdp.p_e[mdp.endo_index(e, x, a, x2)]);
            e = e2;
            x = x2;
            disc *= mdp.gamma;
        }
        out.exo(i) = bx;
        out.end(i) = be;
        out.total(i) = bx + be;
    }
    return out;
}

PrincipalAngles principal_angles(const Eigen::MatrixXd& w1, const Eigen::MatrixXd& w2) {
    if (w1.rows() != w2.rows()) throw dimension_error("principal_angles: ambient dimensions differ");
    PrincipalAngles pa;
    pa.dimension_mismatch = w1.cols() != w2.cols();
    if (w1.cols() == 0 || w2.cols() == 0) return pa;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w1.transpose() * w2);
    Eigen::VectorXd sv = svd.singularValues().cwiseMax(0.0).cwiseMin(1.0);
    pa.angles = sv.array().acos();
    std::sort(pa.angles.data(), pa.angles.data() + pa.angles.size());
    return pa;
}

// ---- DBN templates ----

void DbnTemplate::validate() const {
    if (d < 1) throw structure_error("dbn: need at least one variable");
    auto in = [this](int i) { return i >= 0 && i < d; };
    for (const auto& [i, j] : diachronic)
        if (!in(i) || !in(j)) throw structure_error("dbn: diachronic edge out of range");
    for (const auto& [i, j] : synchronic)
        if (!in(i) || !in(j) || i == j) throw structure_error("dbn: bad synchronic edge");
    for (int j : action_targets)
        if (!in(j)) throw structure_error("dbn: action edge out of range");
    for (int i : policy_parents)
        if (!in(i)) throw structure_error("dbn: policy edge out of range");
    primed_order();
}

std::vector<int> DbnTemplate::primed_order() const {
    std::vector<int> indeg(d, 0);
    std::vector<std::vector<int>> out(d);
    for (const auto& [i, j] : synchronic) {
        out[i].push_back(j);
        ++indeg[j];
    }
    std::vector<int> order;
    std::queue<int> q;
    for (int i = 0; i < d; ++i)
        if (indeg[i] == 0) q.push(i);
    while (!q.empty()) {
        const int i = q.front();
        q.pop();
        order.push_back(i);
        for (int j : out[i])
            if (--indeg[j] == 0) q.push(j);
    }
    if (int(order.size()) != d) throw structure_error("dbn: synchronic edges form a cycle");
    return order;
}

std::vector<int> action_disconnected(const DbnTemplate& dbn, int horizon) {
    dbn.validate();
    const int d = dbn.d, h = horizon > 0 ? horizon : 2 * d;
    auto snode = [d](int i, int t) { return t * d + i; };
    const int n_state_nodes = (h + 1) * d;
    auto anode = [n_state_nodes](int t) { return n_state_nodes + t; };
    std::vector<std::vector<int>> adj(n_state_nodes + h);
    for (int t = 0; t < h; ++t) {
        for (const auto& [i, j] : dbn.diachronic) adj[snode(i, t)].push_back(snode(j, t + 1));
        for (const auto& [i, j] : dbn.synchronic) adj[snode(i, t + 1)].push_back(snode(j, t + 1));
        for (int j : dbn.action_targets) adj[anode(t)].push_back(snode(j, t + 1));
        for (int i : dbn.policy_parents) adj[snode(i, t)].push_back(anode(t));
    }
    std::vector<bool> seen(adj.size(), false);
    std::queue<int> q;
    for (int t = 0; t < h; ++t) {
        seen[anode(t)] = true;
        q.push(anode(t));
    }
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int v : adj[u])
            if (!seen[v]) {
                seen[v] = true;
                q.push(v);
            }
    }
    std::vector<int> out;
    for (int i = 0; i < d; ++i) {
        bool reached = false;
        for (int t = 1; t <= h; ++t) reached = reached || seen[snode(i, t)];
        if (!reached) out.push_back(i);
    }
    return out;
}

std::string to_string(TemplateMatch m) {
    switch (m) {
    case TemplateMatch::full: return "full";
    case TemplateMatch::diachronic: return "diachronic";
    case TemplateMatch::none: return "none";
    }
    return "?";
}

TemplateMatch template_match(const DbnTemplate& dbn, const std::vector<int>& exo_index_set) {
    dbn.validate();
    std::vector<bool> is_x(dbn.d, false);
    for (int i : exo_index_set) {
        if (i < 0 || i >= dbn.d) throw dimension_error("template_match: index out of range");
        is_x[i] = true;
    }
    for (const auto& [i, j] : dbn.diachronic)
        if (!is_x[i] && is_x[j]) return TemplateMatch::none;
    for (int j : dbn.action_targets)
        if (is_x[j]) return TemplateMatch::none;
    bool x_to_e = false;
    for (const auto& [i, j] : dbn.synchronic) {
        if (!is_x[i] && is_x[j]) return TemplateMatch::none;
        if (is_x[i] && !is_x[j]) x_to_e = true;
    }
    return x_to_e ? TemplateMatch::full : TemplateMatch::diachronic;
}

TabularModel tabular_from_dbn(const DbnTemplate& dbn, const std::vector<int>& card, int n_actions, std::uint64_t seed) {
    dbn.validate();
    if (int(card.size()) != dbn.d) throw dimension_error("tabular_from_dbn: one cardinality per variable");
    Rng rng(seed);
    TabularModel m;
    m.state_cardinalities = card;
    m.action_cardinality = n_actions;
    const std::int64_t ns = m.num_states();

    auto dist = [&](int k) {
        std::vector<double> p(k);
        double s = 0;
        for (auto& v : p) s += v = 0.05 + -std::log(1 - rng.uniform());
        for (auto& v : p) v /= s;
        return p;
    };
    // Parent kinds: 0 = unprimed, 1 = primed, 2 = action.
    struct Cpt {
        std::vector<std::pair<int, int>> parents;
        std::vector<std::vector<double>> table;
    };
    auto parent_card = [&](const std::pair<int, int>& p) { return p.first == 2 ? n_actions : card[p.second]; };
    std::vector<Cpt> cpts(dbn.d);
    for (int j = 0; j < dbn.d; ++j) {
        for (const auto& [i, jj] : dbn.diachronic)
            if (jj == j) cpts[j].parents.push_back({0, i});
        for (const auto& [i, jj] : dbn.synchronic)
            if (jj == j) cpts[j].parents.push_back({1, i});
        if (std::find(dbn.action_targets.begin(), dbn.action_targets.end(), j) != dbn.action_targets.end())
            cpts[j].parents.push_back({2, 0});
        std::int64_t configs = 1;
        for (const auto& p : cpts[j].parents) configs *= parent_card(p);
        for (std::int64_t c = 0; c < configs; ++c) cpts[j].table.push_back(dist(card[j]));
    }
    std::int64_t policy_configs = 1;
    for (int i : dbn.policy_parents) policy_configs *= card[i];
    std::vector<std::vector<double>> policy;
    for (std::int64_t c = 0; c < policy_configs; ++c) policy.push_back(dist(n_actions));
    const std::vector<double> p_s = dist(int(ns));

    m.joint.assign(size_t(ns * n_actions * ns), 0.0);
    for (std::int64_t s = 0; s < ns; ++s) {
        const auto sv = m.decode(s);
        std::int64_t pc = 0;
        for (int i : dbn.policy_parents) pc = pc * card[i] + sv[i];
        for (int a = 0; a < n_actions; ++a) {
            const double base = p_s[s] * policy[pc][a];
            for (std::int64_t s2 = 0; s2 < ns; ++s2) {
                const auto sv2 = m.decode(s2);
                double p = base;
                for (int j = 0; j < dbn.d; ++j) {
                    std::int64_t c = 0;
                    for (const auto& par : cpts[j].parents) {
                        const int v = par.first == 0 ? sv[par.second] : par.first == 1 ? sv2[par.second] : a;
                        c = c * parent_card(par) + v;
                    }
                    p *= cpts[j].table[c][sv2[j]];
                }
                m.joint[m.index(s, a, s2)] = p;
            }
        }
    }
    return m;
}

DbnTemplate subset_nonclosure_dbn() {
    DbnTemplate t;
    t.d = 3;
    t.diachronic = {{0, 0}, {1, 1}, {2, 2}};
    t.synchronic = {{1, 0}, {0, 2}};
    t.action_targets = {2};
    t.policy_parents = {1, 2};
    return t;
}

TabularModel subset_nonclosure_model(std::uint64_t seed) { return tabular_from_dbn(subset_nonclosure_dbn(), {2, 2, 2}, 2, seed); }

} // namespace exoendo

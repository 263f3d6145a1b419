#include "exoendo/rl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "exoendo/errors.hpp"

namespace exoendo {

namespace {

constexpr double masked_logit = -1e30;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Masked softmax of one head, written into p.
void head_softmax(const Eigen::Ref<const Eigen::VectorXd>& logits, const Eigen::Ref<const Eigen::VectorXd>& mask,
                  Eigen::Ref<Eigen::VectorXd> p) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        if (mask(i) > 0) mx = std::max(mx, logits(i));
    if (!std::isfinite(mx)) throw domain_error("policy: no legal action in a head");
    double z = 0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) z += p(i) = mask(i) > 0 ? std::exp(logits(i) - mx) : 0.0;
    p /= z;
}

} // namespace

void PpoSettings::validate() const {
    if (!(clip > 0)) throw config_error("ppo: clip must be positive");
    if (!(gamma > 0 && gamma <= 1) || !(gae_lambda > 0 && gae_lambda <= 1))
        throw config_error("ppo: gamma and lambda must lie in (0, 1]");
    if (!(learning_rate >= 0) || value_coeff < 0 || entropy_coeff < 0) throw config_error("ppo: negative coefficient");
    if (minibatch < 1 || rollout_steps < 1 || epochs_per_update < 1) throw config_error("ppo: sizes must be positive");
}

PolicyValueNets::PolicyValueNets(int obs_dim, std::vector<int> cards, const PpoSettings& s, std::uint64_t seed)
    : obs_dim_(obs_dim), cards_(std::move(cards)) {
    s.validate();
    if (obs_dim < 1 || cards_.empty()) throw dimension_error("policy: need observations and at least one action head");
    logit_dim_ = 0;
    for (int c : cards_) {
        if (c < 1) throw dimension_error("policy: empty action head");
        logit_dim_ += c;
    }
    Rng rng(seed);
    policy = Mlp({obs_dim, 64, 64, logit_dim_}, Activation::tanh, rng);
    critic = Mlp({obs_dim, 64, 64, 1}, Activation::tanh, rng);
    // Zero logits: the initial policy is exactly uniform over legal actions.
    policy.w.back().setZero();
    policy.b.back().setZero();
    AdamConfig cfg;
    cfg.learning_rate = s.learning_rate;
    cfg.eps = s.adam_eps;
    policy_opt = Adam(policy, cfg);
    critic_opt = Adam(critic, cfg);
}

Eigen::VectorXd PolicyValueNets::probabilities(const Eigen::VectorXd& obs, const Eigen::VectorXd& mask) const {
    if (mask.size() != logit_dim_) throw dimension_error("policy: mask size mismatch");
    const Eigen::VectorXd logits = policy.forward(obs);
    if (!logits.allFinite()) throw numeric_error("policy: non-finite logits");
    Eigen::VectorXd p(logit_dim_);
    int off = 0;
    for (int c : cards_) {
        head_softmax(logits.segment(off, c), mask.segment(off, c), p.segment(off, c));
        off += c;
    }
    return p;
}

ActResult PolicyValueNets::act(const Eigen::VectorXd& obs, const Eigen::VectorXd& mask, Rng& rng) const {
    const Eigen::VectorXd p = probabilities(obs, mask);
    ActResult out;
    int off = 0;
    for (int c : cards_) {
        const double u = rng.uniform();
        double acc = 0;
        int pick = -1;
        for (int i = 0; i < c; ++i) {
            if (p(off + i) <= 0) continue;
            acc += p(off + i);
            pick = i;
            if (u < acc) break;
        }
        out.action.push_back(pick);
        out.log_prob += std::log(p(off + pick));
        off += c;
    }
    out.value = value(obs);
    return out;
}

double PolicyValueNets::value(const Eigen::VectorXd& obs) const { return critic.forward(obs)(0, 0); }

double PolicyValueNets::log_prob(const Eigen::VectorXd& obs, const Eigen::VectorXd& mask, const std::vector<int>& action) const {
    if (action.size() != cards_.size()) throw dimension_error("policy: action arity mismatch");
    const Eigen::VectorXd p = probabilities(obs, mask);
    double lp = 0;
    int off = 0;
    for (size_t h = 0; h < cards_.size(); ++h) {
        lp += std::log(p(off + action[h]));
        off += cards_[h];
    }
    return lp;
}

Eigen::VectorXd flatten_mask(const std::vector<std::vector<bool>>& mask) {
    size_t n = 0;
    for (const auto& m : mask) n += m.size();
    Eigen::VectorXd out(static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (const auto& m : mask)
        for (bool b : m) out(k++) = b ? 1.0 : 0.0;
    return out;
}

void RolloutBuffer::reserve(int obs_dim, int logit_dim, int capacity) {
    obs.resize(obs_dim, capacity);
    masks.resize(logit_dim, capacity);
    log_probs.resize(capacity);
    values.resize(capacity);
    rewards.resize(capacity);
    raw_rewards.resize(capacity);
    clear();
}

void RolloutBuffer::clear() {
    actions.clear();
    action_values.clear();
    results.clear();
    dones.clear();
    last_value = 0;
    size = 0;
}

Collector::Collector(Env& env, std::uint64_t seed) : env_(&env), rng_(seed) { obs_ = env_->reset(); }

const StepResult& Collector::step(const PolicyValueNets& nets, RolloutBuffer& b, const RewardTransform& transform) {
    if (b.size >= b.obs.cols()) throw dimension_error("rollout buffer is full");
    const Eigen::VectorXd mask = flatten_mask(env_->action_mask());
    const ActResult ar = nets.act(obs_, mask, rng_);
    StepResult res = env_->step(ar.action);
    const int i = b.size++;
    b.obs.col(i) = obs_;
    b.masks.col(i) = mask;
    b.actions.push_back(ar.action);
    b.action_values.push_back(env_->action_values(ar.action));
    b.log_probs(i) = ar.log_prob;
    b.values(i) = ar.value;
    b.raw_rewards(i) = res.reward;
    b.rewards(i) = transform ? transform(obs_, res) : res.reward;
    b.dones.push_back(res.done);
    b.results.push_back(std::move(res));
    ++steps_;
    obs_ = b.results.back().done ? env_->reset() : b.results.back().obs;
    return b.results.back();
}

void Collector::finish(const PolicyValueNets& nets, RolloutBuffer& b) const { b.last_value = nets.value(obs_); }

RolloutBuffer collect_rollout(const PolicyValueNets& nets, Collector& collector, int steps, const RewardTransform& transform) {
    RolloutBuffer b;
    b.reserve(nets.obs_dim(), nets.logit_dim(), steps);
    for (int t = 0; t < steps; ++t) collector.step(nets, b, transform);
    collector.finish(nets, b);
    return b;
}

Advantages gae_advantages(const RolloutBuffer& b, double gamma, double lambda) {
    const int n = b.size;
    Advantages out;
    out.advantages.resize(n);
    double next_adv = 0;
    for (int t = n - 1; t >= 0; --t) {
        const double next_value = t + 1 < n ? b.values(t + 1) : b.last_value;
        const double live = b.dones[t] ? 0.0 : 1.0;
        const double delta = b.rewards(t) + gamma * next_value * live - b.values(t);
        next_adv = delta + gamma * lambda * live * next_adv;
        out.advantages(t) = next_adv;
    }
    out.returns = out.advantages + b.values.head(n);
    return out;
}

UpdateDiagnostics ppo_update(PolicyValueNets& nets, const RolloutBuffer& b, const PpoSettings& s, Rng& rng) {
    s.validate();
    UpdateDiagnostics diag;
    const int n = b.size;
    if (n == 0) return diag;
    const Advantages ga = gae_advantages(b, s.gamma, s.gae_lambda);
    Eigen::VectorXd adv = ga.advantages;
    if (s.normalize_advantages && n > 1) {
        const double mean = adv.mean();
        const double sd = std::sqrt((adv.array() - mean).square().sum() / double(n - 1));
        adv = (adv.array() - mean) / (sd + 1e-8);
    }
    nets.policy_opt.config().learning_rate = s.learning_rate;
    nets.critic_opt.config().learning_rate = s.learning_rate;
    const auto& cards = nets.action_cardinalities();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    long batches = 0;
    for (int epoch = 0; epoch < s.epochs_per_update; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int lo = 0; lo < n; lo += s.minibatch) {
            const int hi = std::min(n, lo + s.minibatch), m = hi - lo;
            Eigen::MatrixXd obs(nets.obs_dim(), m);
            for (int k = 0; k < m; ++k) obs.col(k) = b.obs.col(idx[lo + k]);
            Mlp::Tape ptape, vtape;
            const Eigen::MatrixXd logits = nets.policy.forward(obs, ptape);
            const Eigen::RowVectorXd v = nets.critic.forward(obs, vtape);
            Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(logits.rows(), m);
            Eigen::RowVectorXd d_v(m);
            double pl = 0, vl = 0, ent = 0, kl = 0, clipped = 0;
            for (int k = 0; k < m; ++k) {
                const int j = idx[lo + k];
                double lp = 0, h_total = 0;
                Eigen::VectorXd p(logits.rows());
                int off = 0;
                for (size_t h = 0; h < cards.size(); ++h) {
                    const int c = cards[h];
                    head_softmax(logits.col(k).segment(off, c), b.masks.col(j).segment(off, c), p.segment(off, c));
                    lp += std::log(p(off + b.actions[j][h]));
                    double hh = 0;
                    for (int i = 0; i < c; ++i)
                        if (p(off + i) > 0) hh -= p(off + i) * std::log(p(off + i));
                    // Entropy gradient: dH/dl_i = -p_i (log p_i + H).
                    for (int i = 0; i < c; ++i)
                        if (p(off + i) > 0) d_logits(off + i, k) += s.entropy_coeff / m * p(off + i) * (std::log(p(off + i)) + hh);
                    h_total += hh;
                    off += c;
                }
                const double ratio = std::exp(lp - b.log_probs(j));
                const double a = adv(j);
                const double unclipped = ratio * a;
                const double clipped_ratio = std::clamp(ratio, 1 - s.clip, 1 + s.clip);
                const double surr = std::min(unclipped, clipped_ratio * a);
                pl -= surr / m;
                clipped += std::abs(ratio - 1) > s.clip ? 1.0 : 0.0;
                kl += (b.log_probs(j) - lp) / m;
                ent += h_total / m;
                // Gradient flows only through the unclipped branch when it is the active minimum.
                const double g_lp = unclipped <= clipped_ratio * a ? -a * ratio / m : 0.0;
                off = 0;
                for (size_t h = 0; h < cards.size(); ++h) {
                    const int c = cards[h];
                    for (int i = 0; i < c; ++i) d_logits(off + i, k) -= g_lp * p(off + i);
                    d_logits(off + b.actions[j][h], k) += g_lp;
                    off += c;
                }
                const double err = v(k) - ga.returns(j);
                vl += err * err / m;
                d_v(k) = 2 * s.value_coeff * err / m;
            }
            const double loss = pl + s.value_coeff * vl - s.entropy_coeff * ent;
            if (!std::isfinite(loss)) {
                ++diag.skipped_minibatches;
                diag.notes.push_back("non-finite loss, minibatch skipped");
                continue;
            }
            MlpGrads gp = nets.policy.backward(ptape, d_logits);
            MlpGrads gv = nets.critic.backward(vtape, d_v);
            if (s.max_grad_norm > 0) {
                const double norm = std::sqrt(gp.squared_norm() + gv.squared_norm());
                if (norm > s.max_grad_norm) {
                    gp.scale(s.max_grad_norm / (norm + 1e-6));
                    gv.scale(s.max_grad_norm / (norm + 1e-6));
                }
            }
            nets.policy_opt.step(nets.policy, gp);
            nets.critic_opt.step(nets.critic, gv);
            diag.policy_loss += pl;
            diag.value_loss += vl;
            diag.entropy += ent;
            diag.approx_kl += kl;
            diag.clip_fraction += clipped / m;
            ++batches;
        }
    }
    if (batches > 0) {
        diag.policy_loss /= double(batches);
        diag.value_loss /= double(batches);
        diag.entropy /= double(batches);
        diag.approx_kl /= double(batches);
        diag.clip_fraction /= double(batches);
    }
    return diag;
}

double evaluate_policy(const PolicyValueNets& nets, const Env& env_template, int steps, std::uint64_t seed) {
    if (steps < 1) throw config_error("evaluate_policy: need at least one step");
    auto env = env_template.fork(seed);
    Rng rng(sub_seed(seed, 7));
    Eigen::VectorXd obs = env->reset();
    double total = 0, episode = 0, episodes_total = 0;
    long episodes = 0;
    for (int t = 0; t < steps; ++t) {
        const ActResult ar = nets.act(obs, flatten_mask(env->action_mask()), rng);
        const StepResult res = env->step(ar.action);
        total += res.reward;
        episode += res.reward;
        if (res.done) {
            episodes_total += episode;
            episode = 0;
            ++episodes;
            obs = env->reset();
        } else {
            obs = res.obs;
        }
    }
    if (env->episodic() && episodes > 0) return episodes_total / double(episodes);
    return total / double(steps);
}

std::string to_string(Method m) {
    switch (m) {
    case Method::baseline: return "baseline";
    case Method::oracle: return "oracle";
    case Method::grds: return "grds";
    case Method::simplified_grds: return "simplified_grds";
    case Method::sras: return "sras";
    }
    return "?";
}

Method parse_method(const std::string& s) {
    for (Method m : {Method::baseline, Method::oracle, Method::grds, Method::simplified_grds, Method::sras})
        if (to_string(m) == s) return m;
    throw config_error("unknown method '" + s + "'");
}

void RunSchedule::validate() const {
    if (total_steps < 1 || decomposition_steps < 1 || eval_steps < 1) throw config_error("schedule: counts must be positive");
    if (decomposition_steps > total_steps) throw config_error("schedule: L must not exceed N");
}

bool uses_discovery(Method m) { return m == Method::grds || m == Method::simplified_grds || m == Method::sras; }

DecompositionReport discover_for_method(const RunConfig& cfg, const TransitionDataset& data) {
    const std::uint64_t dseed = sub_seed(cfg.seed, 5);
    switch (cfg.method) {
        case Method::grds: return grds(data, cfg.ccc, cfg.descent, ObjectiveMode::full, dseed, cfg.grds);
        case Method::simplified_grds: return grds(data, cfg.ccc, cfg.descent, ObjectiveMode::simplified, dseed, cfg.grds);
        case Method::sras: return sras(data, cfg.ccc, cfg.descent, dseed, cfg.sras);
        default: throw config_error("method " + to_string(cfg.method) + " does not run discovery");
    }
}

RunOutput run_two_phase(const RunConfig& cfg, Env& env) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.schedule.validate();
    cfg.ppo.validate();
    cfg.regression.validate();
    const bool discover = uses_discovery(cfg.method);
    const long n_total = cfg.schedule.total_steps, n_dec = cfg.schedule.decomposition_steps;
    const int d = env.obs_dim();

    PolicyValueNets nets(d, env.action_cardinalities(), cfg.ppo, sub_seed(cfg.seed, 1));
    Collector collector(env, sub_seed(cfg.seed, 2));
    Rng update_rng(sub_seed(cfg.seed, 3));
    // Fixed within a run; replications see different exo noise paths during evaluation.
    const std::uint64_t eval_seed = sub_seed(cfg.schedule.eval_seed, cfg.seed);
    RolloutBuffer buf;
    buf.reserve(d, nets.logit_dim(), cfg.ppo.rollout_steps);

    RunOutput out;
    std::optional<ExoRewardEstimator> est;
    const RewardTransform transform = [&](const Eigen::VectorXd& obs, const StepResult& r) -> double {
        if (cfg.method == Method::oracle) return r.r_end;
        if (!est) return r.reward;
        const double e = est->endo(obs, r.reward);
        est->observe(obs, r.reward);
        return e;
    };

    std::vector<Eigen::VectorXd> d_s, d_a, d_next;
    std::vector<double> d_r;
    auto run_discovery = [&]() {
        const int l = int(d_a.front().size());
        const Eigen::Index n = Eigen::Index(d_s.size());
        Eigen::MatrixXd s(n, d), a(n, l), sn(n, d);
        Eigen::VectorXd r(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            s.row(i) = d_s[i].transpose();
            a.row(i) = d_a[i].transpose();
            sn.row(i) = d_next[i].transpose();
            r(i) = d_r[i];
        }
        const TransitionDataset data = make_dataset(s, a, r, sn);
        const auto td = std::chrono::steady_clock::now();
        DecompositionReport rep = discover_for_method(cfg, data);
        out.decomposition_time = seconds_since(td);
        out.rank = rep.projection.d_exo;
        ExoProjection proj = rep.projection;
        out.report = rep;
        if (proj.d_exo == 0) {
            out.log.push_back("discovery returned rank 0; continuing as baseline");
            return;
        }
        est.emplace(proj, cfg.regression, sub_seed(cfg.seed, 4));
        est->fit(s, r);
        const Eigen::VectorXd rewritten = r - est->model().predict_rows(proj.features(s));
        for (Eigen::Index i = 0; i < n; ++i)
            out.rewrite_error = std::max(out.rewrite_error, std::abs(est->endo(d_s[i], d_r[i]) - rewritten(i)));
        // Pending Phase-1 tuples in the buffer are the tail of D.
        for (int i = 0; i < buf.size; ++i) buf.rewards(i) = rewritten(n - buf.size + i);
        out.reward_model = est->model();
        out.log.push_back("discovered rank " + std::to_string(out.rank) + " of " + std::to_string(d));
    };

    int update = 0;
    for (long t = 0; t < n_total; ++t) {
        const Eigen::VectorXd obs = collector.obs();
        const StepResult& res = collector.step(nets, buf, transform);
        if (discover && t < n_dec) {
            d_s.push_back(obs);
            d_a.push_back(buf.action_values.back());
            d_next.push_back(res.obs);
            d_r.push_back(res.reward);
            if (t + 1 == n_dec) run_discovery();
        }
        if (buf.size == cfg.ppo.rollout_steps) {
            collector.finish(nets, buf);
            const auto diag = ppo_update(nets, buf, cfg.ppo, update_rng);
            if (diag.skipped_minibatches > 0)
                out.log.push_back("update " + std::to_string(update) + ": skipped " +
                                  std::to_string(diag.skipped_minibatches) + " minibatches");
            buf.clear();
            ++update;
            CurvePoint p;
            p.update = update;
            p.env_steps = t + 1;
            p.eval_reward = evaluate_policy(nets, env, cfg.schedule.eval_steps, eval_seed);
            p.wall_time = seconds_since(t0);
            out.curve.push_back(p);
        }
    }
    if (est) out.reward_model = est->model();
    out.wall_time = seconds_since(t0);
    return out;
}

} // namespace exoendo

#include "exoendo/experiment.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "exoendo/analysis.hpp"

namespace exoendo {

namespace fs = std::filesystem;

namespace {

// Shortest text that parses back to the same double.
std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw io_error("trailing characters in number '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw io_error("not a number: '" + s + "'");
    }
}

// Strict reader over one mapping: unknown keys are rejected by finish().
class Section {
public:
    // An undefined or null node reads as an absent section.
    Section(const YAML::Node& node, std::string path)
        : node_(node && !node.IsNull() ? node : YAML::Node(YAML::NodeType::Undefined)), path_(std::move(path)) {
        if (node_ && !node_.IsMap()) throw config_error(path_ + ": expected a mapping");
    }

    bool present() const { return bool(node_); }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!node_) return;
        const YAML::Node v = node_[key];
        if (!v) return;
        try {
            out = v.as<T>();
        } catch (const YAML::Exception&) {
            throw config_error(path_ + "." + key + ": invalid value");
        }
    }

    template <typename E, typename Parse>
    void get_enum(const std::string& key, E& out, Parse parse) {
        std::string s;
        get(key, s);
        if (!s.empty()) out = parse(s);
    }

    void get_optional(const std::string& key, std::optional<double>& out) {
        std::string s;
        get(key, s);
        if (s.empty()) return;
        if (s == "default") {
            out.reset();
            return;
        }
        try {
            out = parse_double(s);
        } catch (const io_error&) {
            throw config_error(path_ + "." + key + ": expected a number or 'default'");
        }
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        return Section(node_ ? node_[key] : YAML::Node(YAML::NodeType::Undefined), path_.empty() ? key : path_ + "." + key);
    }

    void finish() const {
        if (!node_) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.count(key)) throw config_error("unknown key '" + (path_.empty() ? key : path_ + "." + key) + "'");
        }
    }

private:
    const YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

void put(YAML::Emitter& e, const char* key, double v) { e << YAML::Key << key << YAML::Value << num(v); }
void put(YAML::Emitter& e, const char* key, int v) { e << YAML::Key << key << YAML::Value << v; }
void put(YAML::Emitter& e, const char* key, long v) { e << YAML::Key << key << YAML::Value << v; }
void put(YAML::Emitter& e, const char* key, std::uint64_t v) { e << YAML::Key << key << YAML::Value << v; }
void put(YAML::Emitter& e, const char* key, bool v) { e << YAML::Key << key << YAML::Value << (v ? "true" : "false"); }
void put(YAML::Emitter& e, const char* key, const std::string& v) { e << YAML::Key << key << YAML::Value << v; }

std::string sanitize(std::string s) {
    std::replace(s.begin(), s.end(), '\t', ' ');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw io_error("cannot read " + file.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, '\t')) row.push_back(cell);
        if (!line.empty() && line.back() == '\t') row.emplace_back();
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw io_error(file.string() + ": missing header row");
    return rows;
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + file.string());
    out << text;
    if (!out) throw io_error("write failed for " + file.string());
}

SummaryRow stat(const std::string& metric, const std::vector<double>& v) {
    SummaryRow row;
    row.metric = metric;
    row.n = int(v.size());
    if (v.empty()) {
        row.mean = std::numeric_limits<double>::quiet_NaN();
        row.std = std::numeric_limits<double>::quiet_NaN();
        return row;
    }
    double s = 0;
    for (double x : v) s += x;
    row.mean = s / double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - row.mean) * (x - row.mean);
    row.std = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    return row;
}

void write_replication(const fs::path& dir, const ReplicationRecord& rec, const RunOutput* out) {
    fs::create_directories(dir);
    std::ostringstream meta;
    meta << "index\tseed\tstatus\trank\terror\n"
         << rec.index << '\t' << rec.seed << '\t' << (rec.ok ? "ok" : "failed") << '\t' << rec.rank << '\t'
         << sanitize(rec.error) << '\n';
    write_text(dir / "replication.tsv", meta.str());

    std::ostringstream timing;
    timing << "wall_time\tdecomposition_time\n" << num(rec.wall_time) << '\t' << num(rec.decomposition_time) << '\n';
    write_text(dir / "timing.tsv", timing.str());

    std::ostringstream curve;
    curve << "update\tenv_steps\teval_reward\n";
    for (const auto& p : rec.curve) curve << p.update << '\t' << p.env_steps << '\t' << num(p.eval_reward) << '\n';
    write_text(dir / "curve.tsv", curve.str());

    // Wall time lives in timing.tsv so this file is reproducible bit for bit.
    std::ostringstream dec;
    dec << "key\tvalue\n";
    if (out && out->report) {
        DecompositionReport rep = *out->report;
        rep.wall_time = 0;
        rep.write(dec);
    }
    write_text(dir / "decomposition.tsv", dec.str());

    std::ostringstream model;
    if (out && out->reward_model) out->reward_model->write(model);
    write_text(dir / "model.ckpt", model.str());
}

ReplicationRecord read_replication(const fs::path& dir, int index) {
    ReplicationRecord rec;
    rec.index = index;
    const auto meta = read_tsv(dir / "replication.tsv");
    if (meta.size() < 2 || meta[1].size() < 4) throw io_error((dir / "replication.tsv").string() + ": malformed");
    rec.seed = std::stoull(meta[1][1]);
    rec.ok = meta[1][2] == "ok";
    rec.rank = std::stoi(meta[1][3]);
    if (meta[1].size() > 4) rec.error = meta[1][4];
    const auto timing = read_tsv(dir / "timing.tsv");
    if (timing.size() >= 2 && timing[1].size() >= 2) {
        rec.wall_time = parse_double(timing[1][0]);
        rec.decomposition_time = parse_double(timing[1][1]);
    }
    const auto curve = read_tsv(dir / "curve.tsv");
    for (size_t i = 1; i < curve.size(); ++i) {
        if (curve[i].size() < 3) throw io_error((dir / "curve.tsv").string() + ": malformed row");
        CurvePoint p;
        p.update = std::stoi(curve[i][0]);
        p.env_steps = std::stol(curve[i][1]);
        p.eval_reward = parse_double(curve[i][2]);
        rec.curve.push_back(p);
    }
    return rec;
}

const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '"') out += "&quot;";
        else out += c;
    }
    return out;
}

} // namespace

void ExperimentConfig::validate() const {
    if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
        throw config_error("name must be a non-empty single path component");
    if (replications < 1) throw config_error("replications must be >= 1");
    if (threads < 0) throw config_error("threads must be >= 0");
    if (environment.family == "routing")
        environment.routing.validate();
    else {
        LinearMdpConfig lc = environment.linear;
        lc.family = parse_family(environment.family);
        lc.validate();
    }
    run.schedule.validate();
    run.ppo.validate();
    run.regression.validate();
    run.descent.validate();
    if (!(run.ccc.tikhonov_lambda > 0)) throw config_error("ccc.lambda must be positive");
    if (!(run.ccc.threshold_epsilon > 0)) throw config_error("ccc.epsilon must be positive");
    if (run.grds.restarts < 1) throw config_error("grds.restarts must be >= 1");
}

ExperimentConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw config_error(std::string("config syntax: ") + e.what());
    }
    if (!root || !root.IsMap()) throw config_error("config must be a mapping");
    Section top(root, "");
    int version = -1;
    top.get("schema_version", version);
    if (version != config_schema_version)
        throw config_error("schema_version must be " + std::to_string(config_schema_version));

    ExperimentConfig c;
    RunConfig& r = c.run;
    top.get("name", c.name);
    top.get_enum("method", r.method, parse_method);
    top.get("replications", c.replications);
    top.get("base_seed", c.base_seed);
    top.get("output_dir", c.output_dir);
    top.get("threads", c.threads);

    Section env = top.child("environment");
    env.get("family", c.environment.family);
    LinearMdpConfig& lin = c.environment.linear;
    env.get("n_exo", lin.n_exo);
    env.get("n_end", lin.n_end);
    env.get("n_action_vars", lin.n_action_vars);
    env.get("action_grid", lin.action_grid);
    env.get_optional("exo_noise_std", lin.exo_noise_std);
    env.get_optional("end_noise_std", lin.end_noise_std);
    env.get("row_sum", lin.row_sum);
    env.get_enum("action_matrix", lin.action_matrix_kind, parse_action_matrix_kind);
    env.get("end_matrix_sparsity", lin.end_matrix_sparsity);
    env.get_enum("reward", lin.reward_kind, parse_reward_kind);
    env.get_enum("matrix_sign", lin.matrix_sign, parse_matrix_sign);
    env.get("seed", lin.seed);
    Section routing = env.child("routing");
    routing.get("stochastic", c.environment.routing.stochastic);
    routing.get("exo_decay", c.environment.routing.exo_decay);
    routing.get("exo_noise_std", c.environment.routing.exo_noise_std);
    routing.finish();
    env.finish();
    c.environment.routing.seed = lin.seed;
    if (c.environment.family != "routing") lin.family = parse_family(c.environment.family);

    Section sched = top.child("schedule");
    sched.get("total_steps", r.schedule.total_steps);
    sched.get("decomposition_steps", r.schedule.decomposition_steps);
    sched.get("eval_steps", r.schedule.eval_steps);
    sched.get("eval_seed", r.schedule.eval_seed);
    sched.finish();

    Section ccc = top.child("ccc");
    ccc.get("lambda", r.ccc.tikhonov_lambda);
    ccc.get("epsilon", r.ccc.threshold_epsilon);
    ccc.finish();

    Section desc = top.child("descent");
    desc.get("max_iterations", r.descent.max_iterations);
    desc.get("gradient_norm_tolerance", r.descent.gradient_norm_tolerance);
    desc.get("armijo_sufficient_decrease", r.descent.armijo_sufficient_decrease);
    desc.get("backtrack_factor", r.descent.backtrack_factor);
    desc.get("max_backtracks", r.descent.max_backtracks);
    desc.get("fd_step", r.descent.fd_step);
    desc.get("relative_decrease_tolerance", r.descent.relative_decrease_tolerance);
    desc.get("stall_window", r.descent.stall_window);
    desc.finish();

    Section gr = top.child("grds");
    gr.get("restarts", r.grds.restarts);
    gr.get("verify_epsilon", r.grds.verify_epsilon);
    gr.get("min_samples_margin", r.grds.min_samples_margin);
    gr.finish();

    Section sr = top.child("sras");
    sr.get("simplified_epsilon", r.sras.simplified_epsilon);
    sr.get("full_epsilon", r.sras.full_epsilon);
    sr.finish();

    Section reg = top.child("regression");
    reg.get_enum("mode", r.regression.mode, parse_regression_mode);
    reg.get("update_interval", r.regression.update_interval);
    reg.get("repeated_interval", r.regression.repeated_interval);
    reg.get("repeated_window", r.regression.repeated_window);
    reg.get("learning_rate", r.regression.learning_rate);
    reg.get("l2", r.regression.l2);
    reg.get("batch_size", r.regression.batch_size);
    reg.get("phase1_max_epochs", r.regression.phase1_max_epochs);
    reg.get("convergence_tolerance", r.regression.convergence_tolerance);
    reg.get("convergence_window", r.regression.convergence_window);
    reg.finish();

    Section ppo = top.child("ppo");
    ppo.get("clip", r.ppo.clip);
    ppo.get("value_coeff", r.ppo.value_coeff);
    ppo.get("entropy_coeff", r.ppo.entropy_coeff);
    ppo.get("gae_lambda", r.ppo.gae_lambda);
    ppo.get("gamma", r.ppo.gamma);
    ppo.get("learning_rate", r.ppo.learning_rate);
    ppo.get("minibatch", r.ppo.minibatch);
    ppo.get("rollout_steps", r.ppo.rollout_steps);
    ppo.get("epochs_per_update", r.ppo.epochs_per_update);
    ppo.get("adam_eps", r.ppo.adam_eps);
    ppo.get("max_grad_norm", r.ppo.max_grad_norm);
    ppo.get("normalize_advantages", r.ppo.normalize_advantages);
    ppo.finish();
    top.finish();

    if (uses_discovery(r.method) && (!ccc.present() || !reg.present()))
        throw config_error("method " + to_string(r.method) + " requires ccc and regression sections");
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
    const RunConfig& r = c.run;
    const LinearMdpConfig& lin = c.environment.linear;
    YAML::Emitter e;
    e << YAML::BeginMap;
    put(e, "schema_version", config_schema_version);
    put(e, "name", c.name);
    put(e, "method", to_string(r.method));
    put(e, "replications", c.replications);
    put(e, "base_seed", c.base_seed);
    put(e, "output_dir", c.output_dir);
    put(e, "threads", c.threads);

    e << YAML::Key << "environment" << YAML::Value << YAML::BeginMap;
    put(e, "family", c.environment.family);
    put(e, "n_exo", lin.n_exo);
    put(e, "n_end", lin.n_end);
    put(e, "n_action_vars", lin.n_action_vars);
    e << YAML::Key << "action_grid" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (double v : lin.action_grid) e << num(v);
    e << YAML::EndSeq;
    put(e, "exo_noise_std", lin.exo_noise_std ? num(*lin.exo_noise_std) : std::string("default"));
    put(e, "end_noise_std", lin.end_noise_std ? num(*lin.end_noise_std) : std::string("default"));
    put(e, "row_sum", lin.row_sum);
    put(e, "action_matrix", to_string(lin.action_matrix_kind));
    put(e, "end_matrix_sparsity", lin.end_matrix_sparsity);
    put(e, "reward", to_string(lin.reward_kind));
    put(e, "matrix_sign", to_string(lin.matrix_sign));
    put(e, "seed", lin.seed);
    e << YAML::Key << "routing" << YAML::Value << YAML::BeginMap;
    put(e, "stochastic", c.environment.routing.stochastic);
    put(e, "exo_decay", c.environment.routing.exo_decay);
    put(e, "exo_noise_std", c.environment.routing.exo_noise_std);
    e << YAML::EndMap << YAML::EndMap;

    e << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
    put(e, "total_steps", r.schedule.total_steps);
    put(e, "decomposition_steps", r.schedule.decomposition_steps);
    put(e, "eval_steps", r.schedule.eval_steps);
    put(e, "eval_seed", r.schedule.eval_seed);
    e << YAML::EndMap;

    e << YAML::Key << "ccc" << YAML::Value << YAML::BeginMap;
    put(e, "lambda", r.ccc.tikhonov_lambda);
    put(e, "epsilon", r.ccc.threshold_epsilon);
    e << YAML::EndMap;

    e << YAML::Key << "descent" << YAML::Value << YAML::BeginMap;
    put(e, "max_iterations", r.descent.max_iterations);
    put(e, "gradient_norm_tolerance", r.descent.gradient_norm_tolerance);
    put(e, "armijo_sufficient_decrease", r.descent.armijo_sufficient_decrease);
    put(e, "backtrack_factor", r.descent.backtrack_factor);
    put(e, "max_backtracks", r.descent.max_backtracks);
    put(e, "fd_step", r.descent.fd_step);
    put(e, "relative_decrease_tolerance", r.descent.relative_decrease_tolerance);
    put(e, "stall_window", r.descent.stall_window);
    e << YAML::EndMap;

    e << YAML::Key << "grds" << YAML::Value << YAML::BeginMap;
    put(e, "restarts", r.grds.restarts);
    put(e, "verify_epsilon", r.grds.verify_epsilon);
    put(e, "min_samples_margin", r.grds.min_samples_margin);
    e << YAML::EndMap;

    e << YAML::Key << "sras" << YAML::Value << YAML::BeginMap;
    put(e, "simplified_epsilon", r.sras.simplified_epsilon);
    put(e, "full_epsilon", r.sras.full_epsilon);
    e << YAML::EndMap;

    e << YAML::Key << "regression" << YAML::Value << YAML::BeginMap;
    put(e, "mode", to_string(r.regression.mode));
    put(e, "update_interval", r.regression.update_interval);
    put(e, "repeated_interval", r.regression.repeated_interval);
    put(e, "repeated_window", r.regression.repeated_window);
    put(e, "learning_rate", r.regression.learning_rate);
    put(e, "l2", r.regression.l2);
    put(e, "batch_size", r.regression.batch_size);
    put(e, "phase1_max_epochs", r.regression.phase1_max_epochs);
    put(e, "convergence_tolerance", r.regression.convergence_tolerance);
    put(e, "convergence_window", r.regression.convergence_window);
    e << YAML::EndMap;

    e << YAML::Key << "ppo" << YAML::Value << YAML::BeginMap;
    put(e, "clip", r.ppo.clip);
    put(e, "value_coeff", r.ppo.value_coeff);
    put(e, "entropy_coeff", r.ppo.entropy_coeff);
    put(e, "gae_lambda", r.ppo.gae_lambda);
    put(e, "gamma", r.ppo.gamma);
    put(e, "learning_rate", r.ppo.learning_rate);
    put(e, "minibatch", r.ppo.minibatch);
    put(e, "rollout_steps", r.ppo.rollout_steps);
    put(e, "epochs_per_update", r.ppo.epochs_per_update);
    put(e, "adam_eps", r.ppo.adam_eps);
    put(e, "max_grad_norm", r.ppo.max_grad_norm);
    put(e, "normalize_advantages", r.ppo.normalize_advantages);
    e << YAML::EndMap;

    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

fs::path output_root(const ExperimentConfig& c) {
    if (const char* env = std::getenv(output_root_env); env && *env) return fs::path(env);
    return fs::path(c.output_dir);
}

fs::path experiment_dir(const ExperimentConfig& c) { return output_root(c) / c.name; }

std::unique_ptr<Env> make_environment(const EnvironmentBlock& block, int replication) {
    if (block.family == "routing") {
        RoutingMdpConfig rc = block.routing;
        rc.seed = block.linear.seed + std::uint64_t(replication);
        return make_routing_mdp(rc);
    }
    LinearMdpConfig lc = block.linear;
    lc.family = parse_family(block.family);
    lc.seed = block.linear.seed + std::uint64_t(replication);
    return make_linear_mdp(lc);
}

RunConfig replication_config(const ExperimentConfig& c, int replication) {
    RunConfig rc = c.run;
    rc.seed = c.base_seed + std::uint64_t(replication);
    return rc;
}

double ReplicationRecord::final_eval() const {
    return curve.empty() ? std::numeric_limits<double>::quiet_NaN() : curve.back().eval_reward;
}

std::vector<SummaryRow> summarize(const std::vector<ReplicationRecord>& reps) {
    std::vector<double> rank, total, dec, final_eval;
    double failed = 0;
    for (const auto& r : reps) {
        if (!r.ok) {
            failed += 1;
            continue;
        }
        total.push_back(r.wall_time);
        if (r.rank >= 0) {
            rank.push_back(double(r.rank));
            dec.push_back(r.decomposition_time);
        }
        if (!r.curve.empty()) final_eval.push_back(r.final_eval());
    }
    std::vector<SummaryRow> rows{stat("rank", rank), stat("total_time", total), stat("decomposition_time", dec),
                                 stat("final_eval_reward", final_eval)};
    SummaryRow f;
    f.metric = "failed_replications";
    f.mean = failed;
    f.std = 0;
    f.n = int(reps.size());
    rows.push_back(f);
    return rows;
}

RunResult run_experiment(const ExperimentConfig& config, std::ostream* log) {
    config.validate();
    const fs::path dir = experiment_dir(config);
    fs::create_directories(dir);
    write_text(dir / "config.yaml", serialize_config(config));

    std::mutex log_mu;
    auto say = [&](const std::string& msg) {
        if (!log) return;
        std::lock_guard<std::mutex> lock(log_mu);
        *log << msg << std::endl;
    };

    auto run_one = [&](int r) {
        ReplicationRecord rec;
        rec.index = r;
        const RunConfig rc = replication_config(config, r);
        rec.seed = rc.seed;
        const auto t0 = std::chrono::steady_clock::now();
        std::optional<RunOutput> out;
        try {
            auto env = make_environment(config.environment, r);
            out = run_two_phase(rc, *env);
            rec.rank = out->rank;
            rec.curve = out->curve;
            rec.wall_time = out->wall_time;
            rec.decomposition_time = out->decomposition_time;
        } catch (const std::exception& e) {
            rec.ok = false;
            rec.error = e.what();
            rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        write_replication(dir / std::to_string(r), rec, out ? &*out : nullptr);
        if (rec.ok) {
            std::ostringstream msg;
            msg << config.name << " replication " << r << ": final eval " << rec.final_eval() << ", rank " << rec.rank
                << ", " << std::fixed << std::setprecision(1) << rec.wall_time << " s";
            say(msg.str());
        } else {
            say(config.name + " replication " + std::to_string(r) + " failed: " + rec.error);
        }
    };

    int threads = config.threads;
    if (threads == 0) threads = int(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, config.replications);
    if (threads <= 1) {
        for (int r = 0; r < config.replications; ++r) run_one(r);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&]() {
                for (int r = next++; r < config.replications; r = next++) run_one(r);
            });
        for (auto& th : pool) th.join();
    }

    // Stale replication directories from a larger earlier run would confuse readers.
    for (int r = config.replications;; ++r) {
        const fs::path stale = dir / std::to_string(r);
        if (!fs::exists(stale)) break;
        fs::remove_all(stale);
    }

    // Summarize what is on disk, so the persisted summary is reproducible from the files alone.
    RunResult result = load_result(dir);
    result.summary = summarize(result.replications);
    std::ostringstream s;
    s << "metric\tmean\tstd\tn\n";
    for (const auto& row : result.summary) s << row.metric << '\t' << num(row.mean) << '\t' << num(row.std) << '\t' << row.n << '\n';
    write_text(dir / "summary.tsv", s.str());
    return result;
}

RunResult load_result(const fs::path& dir) {
    const ExperimentConfig cfg = load_config(dir / "config.yaml");
    RunResult res;
    res.dir = dir;
    res.method = to_string(cfg.run.method);
    for (int r = 0; r < cfg.replications; ++r) {
        const fs::path rd = dir / std::to_string(r);
        if (!fs::exists(rd / "replication.tsv")) {
            ReplicationRecord missing;
            missing.index = r;
            missing.ok = false;
            missing.error = "missing results";
            res.replications.push_back(missing);
            res.partial = true;
            continue;
        }
        res.replications.push_back(read_replication(rd, r));
        if (!res.replications.back().ok) res.partial = true;
    }
    if (fs::exists(dir / "summary.tsv")) res.summary = read_summary(dir / "summary.tsv");
    return res;
}

std::vector<SummaryRow> read_summary(const fs::path& file) {
    const auto rows = read_tsv(file);
    std::vector<SummaryRow> out;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() < 4) throw io_error(file.string() + ": malformed row");
        SummaryRow r;
        r.metric = rows[i][0];
        r.mean = parse_double(rows[i][1]);
        r.std = parse_double(rows[i][2]);
        r.n = std::stoi(rows[i][3]);
        out.push_back(r);
    }
    return out;
}

std::string format_summary_table(const RunResult& result) {
    std::vector<SummaryRow> rows = result.summary.empty() ? summarize(result.replications) : result.summary;
    auto find = [&](const std::string& m) -> const SummaryRow* {
        for (const auto& r : rows)
            if (r.metric == m) return &r;
        return nullptr;
    };
    auto cell = [&](const std::string& m, int precision) {
        const SummaryRow* r = find(m);
        if (!r || r->n == 0) return std::string("-");
        std::ostringstream os;
        os << std::fixed << std::setprecision(precision) << r->mean << " ± " << r->std;
        return os.str();
    };
    int ok = 0;
    for (const auto& r : result.replications) ok += r.ok ? 1 : 0;
    std::ostringstream os;
    os << std::left << std::setw(18) << "method" << std::setw(16) << "rank" << std::setw(20) << "total time (s)"
       << std::setw(24) << "decomposition time (s)" << std::setw(20) << "final eval reward"
       << "replications\n";
    // setw counts bytes; the ± sign is two bytes in UTF-8.
    os << std::setw(18) << result.method << std::setw(17) << cell("rank", 1) << std::setw(21) << cell("total_time", 1)
       << std::setw(25) << cell("decomposition_time", 1) << std::setw(21) << cell("final_eval_reward", 3) << ok << "/"
       << result.replications.size() << (result.partial ? " (partial)" : "") << "\n";
    return os.str();
}

PlotData comparison_data(const std::vector<fs::path>& dirs) {
    if (dirs.empty()) throw config_error("plot needs at least one result directory");
    PlotData data;
    std::vector<std::vector<std::vector<double>>> curves;  // per dir, per replication
    std::map<std::string, int> label_count;
    size_t shortest = std::numeric_limits<size_t>::max(), longest = 0;
    for (const auto& dir : dirs) {
        const RunResult res = load_result(dir);
        std::vector<std::vector<double>> reps;
        for (const auto& r : res.replications) {
            if (!r.ok || r.curve.empty()) continue;
            std::vector<double> c;
            for (const auto& p : r.curve) c.push_back(p.eval_reward);
            shortest = std::min(shortest, c.size());
            longest = std::max(longest, c.size());
            reps.push_back(std::move(c));
        }
        if (reps.empty()) {
            data.warnings.push_back(dir.string() + ": no completed replications, skipped");
            continue;
        }
        PlotSeries s;
        s.label = res.method;
        if (label_count[res.method]++ > 0) s.label += " (" + dir.filename().string() + ")";
        s.replications = int(reps.size());
        data.series.push_back(s);
        curves.push_back(std::move(reps));
    }
    if (data.series.empty()) throw io_error("no plottable curves");
    if (shortest != longest)
        data.warnings.push_back("update counts differ (" + std::to_string(shortest) + " to " + std::to_string(longest) +
                                "); truncating to " + std::to_string(shortest));
    for (size_t k = 0; k < data.series.size(); ++k) {
        auto& s = data.series[k];
        for (size_t u = 0; u < shortest; ++u) {
            std::vector<double> v;
            for (const auto& c : curves[k]) v.push_back(c[u]);
            const SummaryRow st = stat("", v);
            s.mean.push_back(st.mean);
            s.std.push_back(st.std);
        }
    }
    return data;
}

std::string render_svg(const PlotData& data) {
    const double width = 760, height = 460, left = 70, right = 180, top = 30, bottom = 60;
    const double pw = width - left - right, ph = height - top - bottom;
    size_t n = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : data.series) {
        n = std::max(n, s.mean.size());
        for (size_t i = 0; i < s.mean.size(); ++i) {
            lo = std::min(lo, s.mean[i] - s.std[i]);
            hi = std::max(hi, s.mean[i] + s.std[i]);
        }
    }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const double x_max = std::max<double>(2, double(n));
    auto px = [&](double u) { return left + (u - 1) / (x_max - 1) * pw; };
    auto py = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };

    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // Axes and ticks.
    os << "<g stroke=\"#444\" fill=\"none\"><rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw
       << "\" height=\"" << ph << "\"/></g>\n";
    for (int i = 0; i <= 5; ++i) {
        const double v = lo + (hi - lo) * i / 5.0, y = py(v);
        os << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\"" << y
           << "\" stroke=\"#444\"/><text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
           << std::setprecision(3) << v << std::setprecision(2) << "</text>\n";
        const double u = 1 + (x_max - 1) * i / 5.0, x = px(u);
        os << "<line x1=\"" << x << "\" y1=\"" << top + ph << "\" x2=\"" << x << "\" y2=\"" << top + ph + 4
           << "\" stroke=\"#444\"/><text x=\"" << x << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
           << std::setprecision(0) << u << std::setprecision(2) << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">policy update</text>\n"
       << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">mean eval reward</text>\n";

    for (size_t k = 0; k < data.series.size(); ++k) {
        const auto& s = data.series[k];
        const char* color = palette[k % (sizeof palette / sizeof palette[0])];
        if (s.mean.empty()) continue;
        os << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
        for (size_t i = 0; i < s.mean.size(); ++i) os << px(double(i + 1)) << ',' << py(s.mean[i] + s.std[i]) << ' ';
        for (size_t i = s.mean.size(); i-- > 0;) os << px(double(i + 1)) << ',' << py(s.mean[i] - s.std[i]) << ' ';
        os << "\"/>\n<polyline class=\"mean\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < s.mean.size(); ++i) os << px(double(i + 1)) << ',' << py(s.mean[i]) << ' ';
        os << "\"/>\n";
        const double ly = top + 10 + 20.0 * double(k);
        os << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << left + pw + 46 << "\" y=\"" << ly + 4
           << "\">" << xml_escape(s.label) << " (n=" << s.replications << ")</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

PlotData plot_comparison(const std::vector<fs::path>& dirs, const fs::path& output) {
    PlotData data = comparison_data(dirs);
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    write_text(output, render_svg(data));
    std::ostringstream t;
    t << "update";
    for (const auto& s : data.series) t << '\t' << s.label << " mean\t" << s.label << " std";
    t << '\n';
    const size_t n = data.series.front().mean.size();
    for (size_t i = 0; i < n; ++i) {
        t << i + 1;
        for (const auto& s : data.series) t << '\t' << num(s.mean[i]) << '\t' << num(s.std[i]);
        t << '\n';
    }
    fs::path tsv = output;
    tsv.replace_extension(".tsv");
    write_text(tsv, t.str());
    return data;
}

Eigen::MatrixXd orthogonal_complement(const Eigen::MatrixXd& w, int d) {
    if (w.rows() != d && w.size() > 0) throw dimension_error("orthogonal_complement: w has wrong row count");
    const int p = int(w.cols());
    if (p == 0) return Eigen::MatrixXd::Identity(d, d);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(w);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
    return q.rightCols(d - p);
}

SweepResult sensitivity_sweep(const ExperimentConfig& config, const std::vector<long>& ls, int replication) {
    config.validate();
    if (!uses_discovery(config.run.method))
        throw config_error("sweep needs a discovery method, got " + to_string(config.run.method));
    if (ls.empty()) throw config_error("sweep needs at least one L value");
    const RunConfig rc = replication_config(config, replication);
    auto env = make_environment(config.environment, replication);
    const int d = env->obs_dim();
    SweepResult out;
    out.collected = config.run.schedule.total_steps;
    const long n = out.collected;

    // Same policy and collector seeds as the first rollout of a training run; the policy is not updated.
    PolicyValueNets nets(d, env->action_cardinalities(), rc.ppo, sub_seed(rc.seed, 1));
    Collector collector(*env, sub_seed(rc.seed, 2));
    RolloutBuffer buf;
    buf.reserve(d, nets.logit_dim(), rc.ppo.rollout_steps);
    const int l = int(env->action_values(std::vector<int>(env->action_cardinalities().size(), 0)).size());
    Eigen::MatrixXd s(n, d), a(n, l), sn(n, d);
    Eigen::VectorXd r(n);
    for (long t = 0; t < n; ++t) {
        if (buf.size == rc.ppo.rollout_steps) buf.clear();
        s.row(t) = collector.obs().transpose();
        const StepResult& res = collector.step(nets, buf, nullptr);
        a.row(t) = buf.action_values.back().transpose();
        sn.row(t) = res.obs.transpose();
        r(t) = res.reward;
    }

    std::optional<Eigen::MatrixXd> prev;
    for (long lv : ls) {
        if (lv > n) {
            out.warnings.push_back("L = " + std::to_string(lv) + " exceeds the " + std::to_string(n) +
                                   " collected steps; skipped");
            continue;
        }
        if (lv < 1) {
            out.warnings.push_back("L = " + std::to_string(lv) + " is not positive; skipped");
            continue;
        }
        SweepPoint pt;
        pt.l = lv;
        const auto t0 = std::chrono::steady_clock::now();
        DecompositionReport rep;
        try {
            rep = discover_for_method(rc, make_dataset(s.topRows(lv), a.topRows(lv), r.head(lv), sn.topRows(lv)));
        } catch (const std::exception& e) {
            out.warnings.push_back("L = " + std::to_string(lv) + ": " + e.what() + "; skipped");
            continue;
        }
        pt.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        pt.rank = rep.projection.d_exo;
        pt.ccc_full = rep.projection.achieved_ccc_full;
        pt.w_exo = rep.projection.w_exo;
        const Eigen::MatrixXd comp = orthogonal_complement(pt.w_exo, d);
        if (prev) {
            pt.has_previous = true;
            if (prev->cols() == 0 || comp.cols() == 0) {
                pt.angle_to_previous = prev->cols() == comp.cols() ? 0.0 : M_PI / 2;
            } else {
                const auto pa = principal_angles(*prev, comp);
                pt.angle_to_previous = pa.angles.size() ? pa.angles.maxCoeff() : 0.0;
                if (pa.dimension_mismatch) pt.angle_to_previous = M_PI / 2;
            }
        }
        prev = comp;
        out.points.push_back(pt);
    }
    return out;
}

void write_sweep(const fs::path& file, const SweepResult& sweep) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ostringstream os;
    os << "L\trank\tccc_full\tangle_to_previous\twall_time\n";
    for (const auto& p : sweep.points)
        os << p.l << '\t' << p.rank << '\t' << num(p.ccc_full) << '\t'
           << (p.has_previous ? num(p.angle_to_previous) : std::string("nan")) << '\t' << num(p.wall_time) << '\n';
    write_text(file, os.str());
}

} // namespace exoendo

#include "exoendo/decompose.hpp"
#include "exoendo/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace exoendo {

TransitionDataset make_dataset(const Eigen::MatrixXd& s, const Eigen::MatrixXd& a, const Eigen::VectorXd& r,
                               const Eigen::MatrixXd& s_next) {
    const Eigen::Index n = s.rows();
    if (a.rows() != n || r.size() != n || s_next.rows() != n) throw dimension_error("dataset: row count mismatch");
    if (s.cols() != s_next.cols()) throw dimension_error("dataset: s and s_next widths differ");
    if (n < 2) throw dimension_error("dataset: need at least 2 tuples");
    TransitionDataset d;
    d.s_mean = s.colwise().mean();
    d.s = s.rowwise() - d.s_mean;
    d.s_next = s_next.rowwise() - d.s_mean;
    d.a = a;
    d.r = r;
    return d;
}

std::string to_string(ObjectiveMode m) {
    switch (m) {
    case ObjectiveMode::full: return "full";
    case ObjectiveMode::diachronic: return "diachronic";
    case ObjectiveMode::simplified: return "simplified";
    }
    return "?";
}

ObjectiveMode parse_objective_mode(const std::string& s) {
    if (s == "full") return ObjectiveMode::full;
    if (s == "diachronic") return ObjectiveMode::diachronic;
    if (s == "simplified") return ObjectiveMode::simplified;
    throw config_error("unknown objective mode: " + s);
}

ExoProjection ExoProjection::empty(int d) {
    ExoProjection p;
    p.d = d;
    p.w_exo = Eigen::MatrixXd(d, 0);
    return p;
}

Eigen::VectorXd ExoProjection::exo(const Eigen::VectorXd& s) const {
    if (s.size() != d) throw dimension_error("projection: state has wrong size");
    if (d_exo == 0) return Eigen::VectorXd::Zero(d);
    return w_exo * (w_exo.transpose() * s);
}

Eigen::VectorXd ExoProjection::endo(const Eigen::VectorXd& s) const { return s - exo(s); }

Eigen::MatrixXd ExoProjection::features(const Eigen::MatrixXd& s_rows) const {
    if (s_rows.cols() != d) throw dimension_error("projection: states have wrong width");
    return s_rows * w_exo;
}

// ---- report serialization ----

void DecompositionReport::write(std::ostream& os) const {
    os << std::setprecision(17);
    os << "algorithm\t" << algorithm << "\n";
    os << "mode\t" << to_string(projection.mode) << "\n";
    os << "d\t" << projection.d << "\n";
    os << "d_exo\t" << projection.d_exo << "\n";
    os << "ccc_full\t" << projection.achieved_ccc_full << "\n";
    os << "wall_time\t" << wall_time << "\n";
    os << "per_rank";
    for (const auto& [rank, v] : per_rank_ccc) os << "\t" << rank << ":" << v;
    os << "\n";
    os << "w_exo";
    for (Eigen::Index i = 0; i < projection.w_exo.rows(); ++i)
        for (Eigen::Index j = 0; j < projection.w_exo.cols(); ++j) os << "\t" << projection.w_exo(i, j);
    os << "\n";
    for (const auto& msg : diagnostics) os << "diagnostic\t" << msg << "\n";
}

DecompositionReport DecompositionReport::read(std::istream& is) {
    DecompositionReport rep;
    std::vector<double> w;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        std::getline(ls, key, '\t');
        std::string rest;
        std::getline(ls, rest);
        std::istringstream rs(rest);
        std::string tok;
        if (key == "algorithm") rep.algorithm = rest;
        else if (key == "mode") rep.projection.mode = parse_objective_mode(rest);
        else if (key == "d") rep.projection.d = std::stoi(rest);
        else if (key == "d_exo") rep.projection.d_exo = std::stoi(rest);
        else if (key == "ccc_full") rep.projection.achieved_ccc_full = std::stod(rest);
        else if (key == "wall_time") rep.wall_time = std::stod(rest);
        else if (key == "per_rank") {
            while (std::getline(rs, tok, '\t')) {
                const auto c = tok.find(':');
                if (c == std::string::npos) throw io_error("report: malformed per_rank entry");
                rep.per_rank_ccc.emplace_back(std::stoi(tok.substr(0, c)), std::stod(tok.substr(c + 1)));
            }
        } else if (key == "w_exo") {
            while (std::getline(rs, tok, '\t')) w.push_back(std::stod(tok));
        } else if (key == "diagnostic") rep.diagnostics.push_back(rest);
        else throw io_error("report: unknown key " + key);
    }
    const int d = rep.projection.d, p = rep.projection.d_exo;
    if (int(w.size()) != d * p) throw io_error("report: w_exo has wrong number of entries");
    rep.projection.w_exo.resize(d, p);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < p; ++j) rep.projection.w_exo(i, j) = w[i * p + j];
    return rep;
}

// ---- moment cache ----

MomentCache::MomentCache(const TransitionDataset& data) : d_(data.d()), l_(data.l()) {
    const Eigen::Index n = data.size();
    Eigen::MatrixXd u(n, 2 * d_ + l_);
    u << data.s, data.s_next, data.a;
    if (!u.allFinite()) throw numeric_error("moment cache: non-finite data");
    u.rowwise() -= u.colwise().mean();
    c_ = u.transpose() * u / double(n);
    c_ = (c_ + c_.transpose()) / 2;
}

double MomentCache::ccc(const Eigen::MatrixXd& lx, const Eigen::MatrixXd& ly, const Eigen::MatrixXd& lz,
                        double lam) const {
    Eigen::MatrixXd cy = c_ * ly;
    Eigen::MatrixXd cz = c_ * lz;
    Eigen::MatrixXd sxx = lx.transpose() * c_ * lx;
    Eigen::MatrixXd syy = ly.transpose() * cy;
    Eigen::MatrixXd sxy = lx.transpose() * cy;
    Eigen::MatrixXd sxz = lx.transpose() * cz;
    Eigen::MatrixXd szz = lz.transpose() * cz;
    Eigen::MatrixXd szy = lz.transpose() * cy;
    return ccc_from_moments<double>(sxx, syy, sxy, sxz, szz, szy, lam);
}

double MomentCache::objective(const Eigen::MatrixXd& w, ObjectiveMode mode, double lam) const {
    const int d = d_, l = l_, p = int(w.cols());
    if (w.rows() != d) throw dimension_error("objective: W has wrong row count");
    const int dim = 2 * d + l;
    if (p == 0) return 0.0;
    Eigen::MatrixXd lx = Eigen::MatrixXd::Zero(dim, p);
    lx.middleRows(d, d) = w;
    Eigen::MatrixXd lz = Eigen::MatrixXd::Zero(dim, p);
    lz.topRows(d) = w;
    Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(d, d) - w * w.transpose();
    Eigen::MatrixXd ly;
    switch (mode) {
    case ObjectiveMode::simplified:
        ly = Eigen::MatrixXd::Zero(dim, l);
        ly.bottomRows(l).setIdentity();
        break;
    case ObjectiveMode::full:
        ly = Eigen::MatrixXd::Zero(dim, d + l);
        ly.topLeftCorner(d, d) = proj;
        ly.bottomRightCorner(l, l).setIdentity();
        break;
    case ObjectiveMode::diachronic:
        ly = Eigen::MatrixXd::Zero(dim, 2 * d + l);
        ly.topLeftCorner(d, d) = proj;
        ly.block(d, d, d, d) = proj;
        ly.bottomRightCorner(l, l).setIdentity();
        break;
    }
    return ccc(lx, ly, lz, lam);
}

Eigen::MatrixXd canonicalize(const Eigen::MatrixXd& w, const Eigen::MatrixXd& s_cov) {
    if (w.cols() == 0) return w;
    Eigen::MatrixXd m = w.transpose() * s_cov * w;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((m + m.transpose()) / 2);
    const Eigen::Index p = w.cols();
    Eigen::MatrixXd out(w.rows(), p);
    for (Eigen::Index j = 0; j < p; ++j) out.col(j) = w * es.eigenvectors().col(p - 1 - j);
    for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::Index i;
        out.col(j).cwiseAbs().maxCoeff(&i);
        if (out(i, j) < 0) out.col(j) = -out.col(j);
    }
    return out;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_sample_floor(const TransitionDataset& data, int margin) {
    if (data.size() < data.d() + margin)
        throw dimension_error("decomposition needs at least d + " + std::to_string(margin) + " tuples");
}

ObjectiveMode verification_mode(ObjectiveMode m) {
    return m == ObjectiveMode::diachronic ? ObjectiveMode::diachronic : ObjectiveMode::full;
}

} // namespace

DecompositionReport grds(const TransitionDataset& data, const CccParams& params, const DescentSettings& settings,
                         ObjectiveMode objective_mode, std::uint64_t seed, const GrdsOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    check_sample_floor(data, options.min_samples_margin);
    const int d = data.d();
    const double lam = params.tikhonov_lambda;
    const double verify_eps = options.verify_epsilon < 0 ? params.threshold_epsilon : options.verify_epsilon;
    const ObjectiveMode vmode = verification_mode(objective_mode);
    MomentCache mc(data);
    const Eigen::MatrixXd s_cov = mc.cov().topLeftCorner(d, d);

    DecompositionReport rep;
    rep.algorithm = objective_mode == ObjectiveMode::simplified ? "simplified_grds" : "grds";
    rep.projection = ExoProjection::empty(d);
    rep.projection.mode = vmode;
    const Objective f = [&](const Eigen::MatrixXd& w) { return mc.objective(w, objective_mode, lam); };

    for (int p = d; p >= 1; --p) {
        bool have = false;
        MinimizeResult best;
        for (int r = 0; r < std::max(1, options.restarts); ++r) {
            try {
                MinimizeResult res = minimize(f, d, p, std::nullopt, settings, sub_seed(seed, std::uint64_t(p) * 1000 + r));
                if (!have || res.value < best.value) best = res;
                have = true;
            } catch (const std::exception& e) {
                rep.diagnostics.push_back("rank " + std::to_string(p) + " restart " + std::to_string(r) + ": " + e.what());
            }
        }
        if (!have) {
            rep.per_rank_ccc.emplace_back(p, std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        double v;
        double eps = params.threshold_epsilon;
        if (objective_mode == ObjectiveMode::simplified) {
            v = mc.objective(best.point.w, vmode, lam);
            eps = verify_eps;
        } else {
            v = f(best.point.w);
        }
        rep.per_rank_ccc.emplace_back(p, v);
        if (v < eps) {
            rep.projection.w_exo = canonicalize(best.point.w, s_cov);
            rep.projection.d_exo = p;
            rep.projection.achieved_ccc_full = v;
            break;
        }
    }
    rep.wall_time = seconds_since(t0);
    return rep;
}

DecompositionReport sras(const TransitionDataset& data, const CccParams& params, const DescentSettings& settings,
                         std::uint64_t seed) {
    SrasOptions o;
    o.simplified_epsilon = params.threshold_epsilon;
    o.full_epsilon = params.threshold_epsilon;
    return sras(data, params, settings, seed, o);
}

DecompositionReport sras(const TransitionDataset& data, const CccParams& params, const DescentSettings& settings,
                         std::uint64_t seed, const SrasOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    check_sample_floor(data, 10);
    const int d = data.d();
    const double lam = params.tikhonov_lambda;
    MomentCache mc(data);
    const Eigen::MatrixXd s_cov = mc.cov().topLeftCorner(d, d);

    DecompositionReport rep;
    rep.algorithm = "sras";
    rep.projection = ExoProjection::empty(d);
    Eigen::MatrixXd cx(d, 0), w_temp(d, 0), w_exo(d, 0);
    double exo_ccc = 0;

    for (int k = 0; k < d; ++k) {
        // Orthonormal basis of the complement of the candidates (which are orthonormal).
        Eigen::MatrixXd nb;
        try {
            if (cx.cols() == 0) {
                nb = Eigen::MatrixXd::Identity(d, d);
            } else {
                Eigen::HouseholderQR<Eigen::MatrixXd> qr(cx);
                Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
                nb = q.rightCols(d - cx.cols());
            }
            if (!nb.allFinite()) throw numeric_error("non-finite null-space basis");
        } catch (const std::exception& e) {
            rep.diagnostics.push_back(std::string("null space failure at step ") + std::to_string(k) + ": " + e.what());
            break;
        }
        const int q = int(nb.cols());
        Eigen::MatrixXd stacked(d, w_temp.cols() + 1);
        stacked.leftCols(w_temp.cols()) = w_temp;
        const Objective f = [&](const Eigen::MatrixXd& wh) {
            stacked.rightCols(1) = nb * wh;
            return mc.objective(stacked, ObjectiveMode::simplified, lam);
        };
        MinimizeResult res;
        try {
            res = minimize(f, q, 1, std::nullopt, settings, sub_seed(seed, std::uint64_t(k)));
        } catch (const std::exception& e) {
            rep.diagnostics.push_back("step " + std::to_string(k) + ": " + e.what());
            break;
        }
        Eigen::VectorXd w = nb * res.point.w.col(0);
        w.normalize();
        cx.conservativeResize(d, cx.cols() + 1);
        cx.col(cx.cols() - 1) = w;

        Eigen::MatrixXd cand(d, w_temp.cols() + 1);
        cand << w_temp, w;
        const double ccc_sim = mc.objective(cand, ObjectiveMode::simplified, lam);
        if (ccc_sim < options.simplified_epsilon) {
            w_temp = cand;
            const double ccc_full = mc.objective(w_temp, ObjectiveMode::full, lam);
            rep.per_rank_ccc.emplace_back(int(w_temp.cols()), ccc_full);
            if (ccc_full < options.full_epsilon) {
                w_exo = w_temp;
                exo_ccc = ccc_full;
            }
        }
    }
    if (w_exo.cols() > 0) {
        rep.projection.w_exo = canonicalize(w_exo, s_cov);
        rep.projection.d_exo = int(w_exo.cols());
        rep.projection.achieved_ccc_full = exo_ccc;
    }
    rep.wall_time = seconds_since(t0);
    return rep;
}

std::vector<int> oracle_grds_tabular(const TabularModel& model, CmiMode mode, double tolerance) {
    const int d = int(model.state_cardinalities.size());
    if (d > 12) throw capacity_error("oracle_grds_tabular: subset enumeration limited to d <= 12");
    for (int k = d; k >= 0; --k) {
        // Lexicographic k-subsets of [d].
        std::vector<int> idx(k);
        for (int i = 0; i < k; ++i) idx[i] = i;
        for (;;) {
            if (cmi_tabular(model, idx, mode) <= tolerance) return idx;
            int i = k - 1;
            while (i >= 0 && idx[i] == d - k + i) --i;
            if (i < 0) break;
            ++idx[i];
            for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
        }
    }
    return {};
}

Verification verify_projection(const TransitionDataset& data, const ExoProjection& projection, const CccParams& params) {
    if (projection.d != data.d()) throw dimension_error("verify_projection: dimension mismatch");
    Verification v;
    if (projection.d_exo == 0) return v;
    MomentCache mc(data);
    v.ccc_value = mc.objective(projection.w_exo, verification_mode(projection.mode), params.tikhonov_lambda);
    v.valid = v.ccc_value < params.threshold_epsilon;
    return v;
}

} // namespace exoendo

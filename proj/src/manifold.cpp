#include "exoendo/manifold.hpp"

#include <cmath>
#include <random>
#include <string>

namespace exoendo {

StiefelPoint::StiefelPoint(Eigen::MatrixXd m) : w(std::move(m)) {
    if (w.cols() > w.rows() || w.cols() < 1) throw dimension_error("StiefelPoint: need 1 <= p <= d");
    const double r = orthonormality_residual();
    if (r > 1e-4) throw dimension_error("StiefelPoint: matrix is not orthonormal");
    if (r > 1e-8) w = qr_orthonormalize(w);
}

double StiefelPoint::orthonormality_residual() const {
    Eigen::MatrixXd e = w.transpose() * w - Eigen::MatrixXd::Identity(w.cols(), w.cols());
    return e.cwiseAbs().maxCoeff();
}

void DescentSettings::validate() const {
    if (max_iterations < 1 || max_backtracks < 1 || stall_window < 1) throw config_error("descent: counts must be positive");
    if (!(gradient_norm_tolerance > 0) || !(fd_step > 0)) throw config_error("descent: tolerances must be positive");
    if (!(armijo_sufficient_decrease > 0 && armijo_sufficient_decrease < 1))
        throw config_error("descent: armijo constant must be in (0,1)");
    if (!(backtrack_factor > 0 && backtrack_factor < 1)) throw config_error("descent: backtrack factor must be in (0,1)");
}

Eigen::MatrixXd qr_orthonormalize(const Eigen::MatrixXd& m) {
    const Eigen::Index d = m.rows(), p = m.cols();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, p);
    const auto& r = qr.matrixQR();
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < p; ++j) {
        if (std::abs(r(j, j)) < 1e-13 * scale) throw retraction_error("retract: rank-deficient update");
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    return q;
}

StiefelPoint retract(const StiefelPoint& point, const Eigen::MatrixXd& step) {
    if (step.rows() != point.d() || step.cols() != point.p()) throw dimension_error("retract: shape mismatch");
    StiefelPoint out;
    out.w = qr_orthonormalize(point.w + step);
    return out;
}

Eigen::MatrixXd numeric_gradient(const Objective& f, const StiefelPoint& point, double h) {
    Eigen::MatrixXd w = point.w;
    Eigen::MatrixXd g(w.rows(), w.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            const double orig = w(i, j);
            w(i, j) = orig + h;
            const double fp = f(w);
            w(i, j) = orig - h;
            const double fm = f(w);
            w(i, j) = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw numeric_error("numeric_gradient: non-finite objective at entry (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
            g(i, j) = (fp - fm) / (2 * h);
        }
    }
    return g;
}

StiefelPoint random_stiefel(int d, int p, std::uint64_t seed) {
    if (p < 1 || p > d) throw dimension_error("random_stiefel: need 1 <= p <= d");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd g(d, p);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < d; ++i) g(i, j) = n01(rng);
    StiefelPoint s;
    s.w = qr_orthonormalize(g);
    return s;
}

MinimizeResult minimize(const Objective& f, int d, int p, const std::optional<StiefelPoint>& init,
                        const DescentSettings& settings, std::uint64_t rng_seed, const Gradient& grad) {
    settings.validate();
    if (p < 1 || p > d) throw dimension_error("minimize: need 1 <= p <= d");
    MinimizeResult res;
    res.point = init ? *init : random_stiefel(d, p, rng_seed);
    if (res.point.d() != d || res.point.p() != p) throw dimension_error("minimize: init has wrong shape");

    auto eval = [&](const Eigen::MatrixXd& w) {
        const double v = f(w);
        if (std::isnan(v)) throw numeric_error("minimize: objective returned NaN");
        return v;
    };
    res.value = eval(res.point.w);
    res.trace.push_back(res.value);
    double alpha = 1.0;
    const double c = settings.armijo_sufficient_decrease;

    for (int it = 0; it < settings.max_iterations; ++it) {
        Eigen::MatrixXd g = grad ? grad(res.point.w) : numeric_gradient(f, res.point, settings.fd_step);
        Eigen::MatrixXd rg = tangent_project(res.point, g);
        const double gn2 = rg.squaredNorm();
        if (std::sqrt(gn2) < settings.gradient_norm_tolerance) {
            res.converged = true;
            break;
        }
        double t = alpha;
        bool accepted = false;
        StiefelPoint next;
        double fn = res.value;
        for (int b = 0; b < settings.max_backtracks; ++b) {
            next = retract(res.point, -t * rg);
            fn = eval(next.w);
            if (fn <= res.value - c * t * gn2) {
                accepted = true;
                break;
            }
            t *= settings.backtrack_factor;
        }
        if (!accepted) {
            res.converged = false;
            break;
        }
        if (next.orthonormality_residual() > 1e-8) next.w = qr_orthonormalize(next.w);
        res.point = next;
        res.value = fn;
        res.iterations = it + 1;
        res.trace.push_back(fn);
        alpha = t / settings.backtrack_factor;

        const int k = int(res.trace.size()) - 1;
        if (k >= settings.stall_window) {
            const double old = res.trace[k - settings.stall_window];
            const double denom = std::abs(old);
            if (denom == 0 || (old - fn) / denom < settings.relative_decrease_tolerance) {
                res.converged = true;
                break;
            }
        }
    }
    return res;
}

} // namespace exoendo

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "exoendo/manifold.hpp"
#include "exoendo/statcore.hpp"

namespace exoendo {

// Transition tuples; s and s_next are centered by the mean of s.
struct TransitionDataset {
    Eigen::MatrixXd s;
    Eigen::MatrixXd a;
    Eigen::VectorXd r;
    Eigen::MatrixXd s_next;
    Eigen::RowVectorXd s_mean;

    Eigen::Index size() const { return s.rows(); }
    int d() const { return int(s.cols()); }
    int l() const { return int(a.cols()); }
};

TransitionDataset make_dataset(const Eigen::MatrixXd& s, const Eigen::MatrixXd& a, const Eigen::VectorXd& r,
                               const Eigen::MatrixXd& s_next);

enum class ObjectiveMode { full, diachronic, simplified };
std::string to_string(ObjectiveMode m);
ObjectiveMode parse_objective_mode(const std::string& s);

struct ExoProjection {
    Eigen::MatrixXd w_exo;  // d x d_exo
    int d = 0;
    int d_exo = 0;
    double achieved_ccc_full = 0;
    ObjectiveMode mode = ObjectiveMode::full;

    static ExoProjection empty(int d);
    Eigen::VectorXd exo(const Eigen::VectorXd& s) const;
    Eigen::VectorXd endo(const Eigen::VectorXd& s) const;
    // Exo coordinates W^T s (what the reward regression sees).
    Eigen::MatrixXd features(const Eigen::MatrixXd& s_rows) const;
};

struct DecompositionReport {
    ExoProjection projection;
    std::vector<std::pair<int, double>> per_rank_ccc;
    double wall_time = 0;
    std::string algorithm;
    std::vector<std::string> diagnostics;

    void write(std::ostream& os) const;
    static DecompositionReport read(std::istream& is);
};

// Covariance of u = [s, s', a]; every CCC over linear maps of u follows from it.
class MomentCache {
public:
    explicit MomentCache(const TransitionDataset& data);
    int d() const { return d_; }
    int l() const { return l_; }
    const Eigen::MatrixXd& cov() const { return c_; }

    // CCC(u Lx; u Ly | u Lz), each L of shape (2d+l) x k.
    double ccc(const Eigen::MatrixXd& lx, const Eigen::MatrixXd& ly, const Eigen::MatrixXd& lz, double lam) const;

    // The three objectives evaluated at W (d x p).
    double objective(const Eigen::MatrixXd& w, ObjectiveMode mode, double lam) const;

private:
    int d_, l_;
    Eigen::MatrixXd c_;
};

struct GrdsOptions {
    int restarts = 1;
    // Threshold for the full-objective check after a simplified solve; negative means use params epsilon.
    double verify_epsilon = -1;
    int min_samples_margin = 10;
};

DecompositionReport grds(const TransitionDataset& data, const CccParams& params, const DescentSettings& settings,
                         ObjectiveMode objective_mode, std::uint64_t seed, const GrdsOptions& options = {});

struct SrasOptions {
    double simplified_epsilon = 0.05;
    double full_epsilon = 0.05;
};

DecompositionReport sras(const TransitionDataset& data, const CccParams& params, const DescentSettings& settings,
                         std::uint64_t seed, const SrasOptions& options);
DecompositionReport sras(const TransitionDataset& data, const CccParams& params, const DescentSettings& settings,
                         std::uint64_t seed);

struct capacity_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<int> oracle_grds_tabular(const TabularModel& model, CmiMode mode, double tolerance = 1e-9);

struct Verification {
    double ccc_value = 0;
    bool valid = true;
};

Verification verify_projection(const TransitionDataset& data, const ExoProjection& projection, const CccParams& params);

// Rotate W within its span to principal axes of S W, by descending variance.
Eigen::MatrixXd canonicalize(const Eigen::MatrixXd& w, const Eigen::MatrixXd& s_cov);

} // namespace exoendo

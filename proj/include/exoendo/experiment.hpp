#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "exoendo/envs.hpp"
#include "exoendo/rl.hpp"

namespace exoendo {

inline constexpr int config_schema_version = 1;
// When set, replaces output_dir from the config file.
inline constexpr const char* output_root_env = "EXOENDO_OUTPUT_ROOT";

// family is one of linear, m1, m2, m3, anticorrelated, routing.
// Replication r builds its MDP with seed + r.
struct EnvironmentBlock {
    std::string family = "linear";
    LinearMdpConfig linear;
    RoutingMdpConfig routing;
};

struct ExperimentConfig {
    std::string name = "experiment";
    EnvironmentBlock environment;
    // run.seed is ignored; replication r runs with base_seed + r.
    RunConfig run;
    int replications = 1;
    std::uint64_t base_seed = 0;
    std::string output_dir = "results";
    // 0 means min(replications, hardware threads).
    int threads = 0;

    void validate() const;
};

// Unknown keys are errors; missing keys take defaults, except that discovery methods
// require explicit ccc and regression sections.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

std::filesystem::path output_root(const ExperimentConfig& config);
std::filesystem::path experiment_dir(const ExperimentConfig& config);

std::unique_ptr<Env> make_environment(const EnvironmentBlock& block, int replication);
RunConfig replication_config(const ExperimentConfig& config, int replication);

struct ReplicationRecord {
    int index = 0;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    int rank = -1;
    std::vector<CurvePoint> curve;
    double wall_time = 0;
    double decomposition_time = 0;

    double final_eval() const;
};

struct SummaryRow {
    std::string metric;
    double mean = 0;
    double std = 0;
    int n = 0;
};

struct RunResult {
    std::filesystem::path dir;
    std::string method;
    std::vector<ReplicationRecord> replications;
    std::vector<SummaryRow> summary;
    bool partial = false;
};

// Sample std (n - 1); metrics with no contributing replication have n = 0 and NaN mean.
std::vector<SummaryRow> summarize(const std::vector<ReplicationRecord>& reps);

// Runs every replication, writes the results tree, and returns what was read back from disk.
RunResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

RunResult load_result(const std::filesystem::path& dir);
std::vector<SummaryRow> read_summary(const std::filesystem::path& file);
std::string format_summary_table(const RunResult& result);

struct PlotSeries {
    std::string label;
    std::vector<double> mean;
    std::vector<double> std;
    int replications = 0;
};

struct PlotData {
    std::vector<PlotSeries> series;
    std::vector<std::string> warnings;
};

PlotData comparison_data(const std::vector<std::filesystem::path>& dirs);
std::string render_svg(const PlotData& data);
// Writes the SVG to `output` and the plotted values next to it with a .tsv extension.
PlotData plot_comparison(const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& output);

struct SweepPoint {
    long l = 0;
    int rank = 0;
    double ccc_full = 0;
    // Largest principal angle between this and the previous point's orthogonal complements.
    double angle_to_previous = 0;
    bool has_previous = false;
    double wall_time = 0;
    Eigen::MatrixXd w_exo;
};

struct SweepResult {
    long collected = 0;
    std::vector<SweepPoint> points;
    std::vector<std::string> warnings;
};

// Collects total_steps transitions under the initial (uniform) policy and runs discovery on each prefix.
SweepResult sensitivity_sweep(const ExperimentConfig& config, const std::vector<long>& ls, int replication = 0);
void write_sweep(const std::filesystem::path& file, const SweepResult& sweep);

// Orthonormal basis of the orthogonal complement of span(w) in R^d.
Eigen::MatrixXd orthogonal_complement(const Eigen::MatrixXd& w, int d);

} // namespace exoendo

// Command-line front end: run, plot, sweep, analyze.
#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "exoendo/experiment.hpp"

using namespace exoendo;
namespace fs = std::filesystem;

namespace {

std::vector<long> parse_list(const std::string& text) {
    std::vector<long> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stol(tok));
        } catch (const std::exception&) {
            throw config_error("--L: '" + tok + "' is not an integer");
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Exogenous/endogenous state decomposition experiments"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run all replications of an experiment config");
    std::string run_config;
    int threads = -1;
    run->add_option("config", run_config, "Experiment config file")->required()->check(CLI::ExistingFile);
    run->add_option("--threads", threads, "Worker threads (overrides the config; 0 = auto)");

    auto* plot = app.add_subcommand("plot", "Plot mean learning curves with a 1-std band");
    std::vector<std::string> plot_dirs;
    std::string plot_out;
    plot->add_option("dirs", plot_dirs, "Experiment result directories")->required();
    plot->add_option("-o,--output", plot_out, "Output SVG file")->required();

    auto* sweep = app.add_subcommand("sweep", "Discovery at several L on nested prefixes of one trajectory");
    std::string sweep_config, sweep_ls, sweep_out;
    int sweep_rep = 0;
    sweep->add_option("config", sweep_config, "Experiment config file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--L", sweep_ls, "Comma-separated L values")->required();
    sweep->add_option("--replication", sweep_rep, "Replication index that selects the seeds");
    sweep->add_option("-o,--output", sweep_out, "Output TSV (default <output_dir>/<name>/sweep.tsv)");

    auto* analyze = app.add_subcommand("analyze", "Print the summary table of an experiment directory");
    std::string analyze_dir;
    analyze->add_option("dir", analyze_dir, "Experiment result directory")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            ExperimentConfig cfg = load_config(run_config);
            if (threads >= 0) cfg.threads = threads;
            const RunResult res = run_experiment(cfg, &std::cerr);
            std::cout << format_summary_table(res);
            std::cout << "results in " << res.dir.string() << "\n";
            return res.partial ? 2 : 0;
        }
        if (*plot) {
            std::vector<fs::path> dirs(plot_dirs.begin(), plot_dirs.end());
            const PlotData data = plot_comparison(dirs, plot_out);
            for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "wrote " << plot_out << "\n";
            return 0;
        }
        if (*sweep) {
            const ExperimentConfig cfg = load_config(sweep_config);
            const SweepResult res = sensitivity_sweep(cfg, parse_list(sweep_ls), sweep_rep);
            for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
            const fs::path out = sweep_out.empty() ? experiment_dir(cfg) / "sweep.tsv" : fs::path(sweep_out);
            write_sweep(out, res);
            std::cout << "L\trank\tangle_to_previous\n";
            for (const auto& p : res.points)
                std::cout << p.l << '\t' << p.rank << '\t' << (p.has_previous ? std::to_string(p.angle_to_previous) : "-") << "\n";
            std::cout << "wrote " << out.string() << "\n";
            return 0;
        }
        if (*analyze) {
            std::cout << format_summary_table(load_result(analyze_dir));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

// Command-line front end for the estimation experiments.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "tae/experiment.hpp"
#include "tae/log.hpp"

namespace fs = std::filesystem;
using namespace tae;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kTimeout = 4 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> replicates;
    int jobs = 1;
};

ExperimentConfig load(const Options& o)
{
    ExperimentConfig cfg = load_experiment_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.out_dir = *o.out;
    if (o.replicates) cfg.replicates = *o.replicates;
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    return cfg;
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    if (text.empty() || text.back() != '\n') out << '\n';
}

int cmd_simulate(const Options& o)
{
    const ExperimentConfig cfg = load(o);
    const Scenario sc = build_scenario(cfg);
    const Simulation sim = simulate_replicate(cfg, sc, 0);
    std::ofstream csv(fs::path(cfg.out_dir) / "measurements.csv");
    write_measurements_csv(csv, sim.measurements);
    write_file(fs::path(cfg.out_dir) / "truth.json", truth_json(sim.truth));
    write_file(fs::path(cfg.out_dir) / "case.json", to_json_text(sc.net));
    std::cout << sim.measurements.size() << " measurements written to " << cfg.out_dir << "\n";
    return kOk;
}

int cmd_crlb(const Options& o)
{
    const ExperimentConfig cfg = load(o);
    const Scenario sc = build_scenario(cfg);
    const CrlbReport rep = run_crlb(cfg, sc, simulate_replicate(cfg, sc, 0));
    write_file(fs::path(cfg.out_dir) / "report.json", to_json_text(rep));
    std::ofstream csv(fs::path(cfg.out_dir) / "bounds.csv");
    write_bounds_csv(csv, rep);
    std::cout << "topology limit " << rep.topology_limit_pct << " %, admittance limit " << rep.admittance_limit_pct
              << " %, Fisher rank " << rep.fisher_rank << "/" << rep.admittance_dim << "\n";
    return kOk;
}

int cmd_init(const Options& o)
{
    const ExperimentConfig cfg = load(o);
    const Scenario sc = build_scenario(cfg);
    const Simulation sim = simulate_replicate(cfg, sc, 0);
    const StateVector x0 = initial_state(cfg, sc, sim, 0);
    write_file(fs::path(cfg.out_dir) / "x0.json", state_json(x0, sc.set));
    std::cout << "initial state for " << sc.set.size() << " candidate pairs written to " << cfg.out_dir << "\n";
    return kOk;
}

int cmd_estimate(const Options& o)
{
    const ExperimentConfig cfg = load(o);
    const Scenario sc = build_scenario(cfg);
    const ReplicateResult r = run_replicate(cfg, sc, 0);
    if (r.failed) {
        std::cerr << "estimation failed: " << r.error << "\n";
        return kNumerical;
    }
    write_file(fs::path(cfg.out_dir) / "report.json", estimation_json(r.estimate, r.metrics));
    std::ofstream trace(fs::path(cfg.out_dir) / "trace.csv");
    write_trace_csv(trace, r.estimate.trace);
    std::cout << "loss " << r.estimate.final_loss << ", " << r.estimate.set.size() << " branches, topology error "
              << r.metrics.topology_error_pct << " %, admittance error " << r.metrics.admittance_error_pct << " %\n";
    if (r.timed_out) return kTimeout;
    return r.estimate.diverged ? kNumerical : kOk;
}

int cmd_experiment(const Options& o)
{
    const ExperimentConfig cfg = load(o);
    const ExperimentReport rep = run_experiment(cfg, o.jobs);
    write_file(fs::path(cfg.out_dir) / "report.json", experiment_json(cfg, rep));
    std::ofstream hg(fs::path(cfg.out_dir) / "hist_g.csv"), hb(fs::path(cfg.out_dir) / "hist_b.csv");
    write_histogram_csv(hg, rep.replicates, 'g');
    write_histogram_csv(hb, rep.replicates, 'b');
    std::ofstream trace(fs::path(cfg.out_dir) / "trace.csv");
    if (!rep.replicates.empty()) write_trace_csv(trace, rep.replicates.front().estimate.trace);

    std::cout << "CRLB: topology " << rep.crlb.topology_limit_pct << " %, admittance " << rep.crlb.admittance_limit_pct
              << " %\nCPS over " << rep.completed << "/" << cfg.replicates << " replicates: topology "
              << rep.mean_topology_error_pct << " %, admittance " << rep.mean_admittance_error_pct << " %\n";
    bool timed_out = false;
    for (const auto& r : rep.replicates) {
        if (r.failed) std::cerr << "replicate " << r.replicate << " failed: " << r.error << "\n";
        timed_out = timed_out || r.timed_out;
    }
    if (rep.completed == 0) return kNumerical;
    return timed_out ? kTimeout : kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Joint topology and admittance estimation for distribution grids"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "base seed");
        sub->add_option("--out", o.out, "output directory");
    };
    auto* sim = app.add_subcommand("simulate", "simulate measurements");
    auto* crlb = app.add_subcommand("crlb", "precision limits at the true state");
    auto* init = app.add_subcommand("init", "initial state from measurements");
    auto* est = app.add_subcommand("estimate", "one CPS estimation");
    auto* exp = app.add_subcommand("experiment", "Monte Carlo replicates");
    for (auto* s : {sim, crlb, init, est, exp}) add_common(s);
    exp->add_option("--replicates", o.replicates, "replicate count")->check(CLI::PositiveNumber);
    exp->add_option("--jobs", o.jobs, "parallel replicates")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*sim) return cmd_simulate(o);
        if (*crlb) return cmd_crlb(o);
        if (*init) return cmd_init(o);
        if (*est) return cmd_estimate(o);
        return cmd_experiment(o);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kConfig;
    } catch (const CaseError& e) {
        std::cerr << e.what() << "\n";
        return kConfig;
    } catch (const PowerFlowError& e) {
        std::cerr << e.what();
        if (e.snapshot() >= 0) std::cerr << " (snapshot " << e.snapshot() + 1 << ")";
        std::cerr << "\n";
        return kNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kNumerical;
    }
}

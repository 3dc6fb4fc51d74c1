// Config-driven experiments: simulate, bound, initialise, estimate, replicate.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tae/cps.hpp"
#include "tae/crlb.hpp"
#include "tae/initval.hpp"
#include "tae/netmodel.hpp"
#include "tae/powerflow.hpp"

namespace tae {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class PriorKnowledge {
    None,            // every bus pair is a candidate
    Branches,        // the in-service branches
    BranchesAndTies  // in-service branches plus normally-open tie lines
};

enum class InitMode {
    Measurements,  // voltage-correlation tree and angle-free fits
    Planning,      // admittances from the case, optionally perturbed
    Truth          // the simulated ground truth
};

struct ExperimentConfig {
    std::string case_path;
    int snapshots = 120;
    /// Measured buses per quantity (P, Q, V, TH); empty means none.
    std::array<std::vector<int>, 4> sensors;
    NoiseSpec noise;
    double load_spread = 0.5;
    double shared_spread = 0.0;
    std::optional<std::uint64_t> load_seed;  // defaults to `seed`
    PriorKnowledge prior = PriorKnowledge::None;
    bool pin_slack = true;
    std::uint64_t seed = 1;
    int replicates = 1;
    InitMode init = InitMode::Measurements;
    double planning_perturbation = 0.0;  // relative, uniform, for InitMode::Planning
    InitConfig init_config;
    CpsConfig cps;
    double max_wall_seconds = 0.0;  // per replicate, 0 for none
    std::string out_dir = "out";

    /// Throws ConfigError.
    void validate() const;
};

/// Parses the JSON config. Relative case paths resolve against `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& json_text, const std::string& base_dir = ".");
ExperimentConfig load_experiment_config(const std::string& path);

/// The fixed part of an experiment: network, loads, sensors and candidate set.
struct Scenario {
    NetworkCase net;
    LoadProfile loads;
    MeasurementPlan plan;  // sigmas unresolved
    CandidateSet set;
};

Scenario build_scenario(const ExperimentConfig& cfg);

/// Noise seed of replicate r: seed + r.
Simulation simulate_replicate(const ExperimentConfig& cfg, const Scenario& sc, int replicate);

/// CRLB at the true operating points over the scenario's candidate set.
CrlbReport run_crlb(const ExperimentConfig& cfg, const Scenario& sc, const Simulation& sim);

StateVector initial_state(const ExperimentConfig& cfg, const Scenario& sc, const Simulation& sim, int replicate);

struct ErrorMetrics {
    double topology_error_pct = 0.0;      // (missing + spurious) / true branches
    double admittance_error_pct = 0.0;    // pruned true branches count with relative error 1
    double conditional_error_pct = 0.0;   // recovered true branches only
    int missing = 0;
    int spurious = 0;
};

/// Relative geometric mean over the true-branch parameters, in percent.
ErrorMetrics compute_metrics(const NetworkCase& net, const CandidateSet& set, const Eigen::VectorXd& g,
                             const Eigen::VectorXd& b);

struct HistogramRow {
    BusPair branch;
    double abs_error;
    int replicate;
};

struct ReplicateResult {
    int replicate = 0;
    std::uint64_t noise_seed = 0;
    ErrorMetrics metrics;
    EstimationResult estimate;
    double seconds = 0.0;
    bool timed_out = false;
    bool failed = false;
    std::string error;
    std::vector<HistogramRow> hist_g, hist_b;
};

ReplicateResult run_replicate(const ExperimentConfig& cfg, const Scenario& sc, int replicate);

struct ExperimentReport {
    CrlbReport crlb;
    std::vector<ReplicateResult> replicates;
    double mean_topology_error_pct = 0.0;
    double mean_admittance_error_pct = 0.0;
    double mean_conditional_error_pct = 0.0;
    int completed = 0;
};

/// Replicates run on up to `jobs` threads; results are ordered by replicate.
ExperimentReport run_experiment(const ExperimentConfig& cfg, int jobs = 1);

std::string estimation_json(const EstimationResult& est, const std::optional<ErrorMetrics>& metrics);
std::string experiment_json(const ExperimentConfig& cfg, const ExperimentReport& rep);
/// Columns: branch_from,branch_to,abs_error,replicate
void write_histogram_csv(std::ostream& out, const std::vector<ReplicateResult>& reps, char param);
std::string truth_json(const std::vector<Snapshot>& truth);
std::string state_json(const StateVector& x, const CandidateSet& set);

}  // namespace tae

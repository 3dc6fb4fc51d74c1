#include "tae/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace tae {

using nlohmann::json;

void ExperimentConfig::validate() const
{
    if (case_path.empty()) throw ConfigError("config: case path missing");
    if (!std::filesystem::exists(case_path)) throw ConfigError("config: case file not found: " + case_path);
    if (snapshots < 1) throw ConfigError("config: snapshots must be positive");
    if (replicates < 1) throw ConfigError("config: replicates must be at least 1");
    if (!(noise.percent > 0.0)) throw ConfigError("config: noise percent must be positive");
    if (load_spread < 0.0 || load_spread >= 1.0 || shared_spread < 0.0 || shared_spread >= 1.0)
        throw ConfigError("config: load spreads must lie in [0, 1)");
    if (planning_perturbation < 0.0) throw ConfigError("config: perturbation must be nonnegative");
    if (max_wall_seconds < 0.0) throw ConfigError("config: max_wall_seconds must be nonnegative");
    if (init_config.window < 1 || init_config.window > snapshots)
        throw ConfigError("config: init window must lie in [1, snapshots]");
    bool any = false;
    for (const auto& s : sensors) any = any || !s.empty();
    if (!any) throw ConfigError("config: no sensors");
    try {
        cps.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

namespace {

const char* kQuantityKeys[4] = {"P", "Q", "V", "TH"};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where)
{
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out)
{
    if (j.contains(key)) out = j.at(key).get<T>();
}

void read_prune(const json& j, PruneRule& p)
{
    check_keys(j, {"enabled", "tau_abs", "tau_rel", "min_significance", "expect_radial"}, "prune");
    read(j, "enabled", p.enabled);
    read(j, "tau_abs", p.tau_abs);
    read(j, "tau_rel", p.tau_rel);
    read(j, "min_significance", p.min_significance);
    read(j, "expect_radial", p.expect_radial);
}

void read_cps(const json& j, CpsConfig& c)
{
    check_keys(j,
               {"alpha", "r0", "r_max", "beta", "eta", "gamma", "max_inner_iters", "max_outer_rounds", "loss_rtol",
                "phase2_ascending", "prune"},
               "cps");
    read(j, "alpha", c.alpha);
    read(j, "r0", c.r0);
    read(j, "r_max", c.r_max);
    read(j, "beta", c.beta);
    read(j, "eta", c.eta);
    read(j, "gamma", c.gamma);
    read(j, "max_inner_iters", c.max_inner_iters);
    read(j, "max_outer_rounds", c.max_outer_rounds);
    read(j, "loss_rtol", c.loss_rtol);
    read(j, "phase2_ascending", c.phase2_ascending);
    if (j.contains("prune")) read_prune(j.at("prune"), c.prune);
}

void read_init(const json& j, ExperimentConfig& cfg)
{
    check_keys(j, {"mode", "window", "flow", "perturbation"}, "init");
    if (j.contains("mode")) {
        const auto m = j.at("mode").get<std::string>();
        if (m == "measurements")
            cfg.init = InitMode::Measurements;
        else if (m == "planning")
            cfg.init = InitMode::Planning;
        else if (m == "truth")
            cfg.init = InitMode::Truth;
        else
            throw ConfigError("config: unknown init mode '" + m + "'");
    }
    read(j, "window", cfg.init_config.window);
    read(j, "perturbation", cfg.planning_perturbation);
    if (j.contains("flow")) {
        const auto f = j.at("flow").get<std::string>();
        if (f == "subtree")
            cfg.init_config.flow = FlowProxy::SubtreeSum;
        else if (f == "nodal")
            cfg.init_config.flow = FlowProxy::Nodal;
        else
            throw ConfigError("config: unknown flow proxy '" + f + "'");
    }
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text, const std::string& base_dir)
{
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        check_keys(j,
                   {"case", "snapshots", "sensors", "noise", "load", "prior", "pin_slack", "seed", "replicates", "init",
                    "cps", "max_wall_seconds", "out", "description"},
                   "config");
        if (!j.contains("case")) throw ConfigError("config: case path missing");
        std::filesystem::path cp = j.at("case").get<std::string>();
        if (cp.is_relative()) cp = std::filesystem::path(base_dir) / cp;
        cfg.case_path = cp.lexically_normal().string();
        read(j, "snapshots", cfg.snapshots);
        read(j, "seed", cfg.seed);
        read(j, "replicates", cfg.replicates);
        read(j, "pin_slack", cfg.pin_slack);
        read(j, "max_wall_seconds", cfg.max_wall_seconds);
        read(j, "out", cfg.out_dir);

        // Sensors are resolved against the bus count later; "all" is stored as {-1}.
        const json sensors = j.value("sensors", json{{"P", "all"}, {"Q", "all"}, {"V", "all"}, {"TH", "all"}});
        check_keys(sensors, {"P", "Q", "V", "TH"}, "sensors");
        for (int q = 0; q < 4; ++q) {
            if (!sensors.contains(kQuantityKeys[q])) continue;
            const auto& s = sensors.at(kQuantityKeys[q]);
            if (s.is_string()) {
                if (s.get<std::string>() != "all") throw ConfigError("config: sensor list must be \"all\" or buses");
                cfg.sensors[q] = {-1};
            } else {
                cfg.sensors[q] = s.get<std::vector<int>>();
            }
        }

        if (j.contains("noise")) {
            const auto& n = j.at("noise");
            check_keys(n, {"percent", "mode", "floor"}, "noise");
            read(n, "percent", cfg.noise.percent);
            read(n, "floor", cfg.noise.floor);
            const auto mode = n.value("mode", std::string("relative_rms"));
            if (mode == "relative_rms")
                cfg.noise.mode = NoiseMode::RelativeRms;
            else if (mode == "absolute")
                cfg.noise.mode = NoiseMode::Absolute;
            else
                throw ConfigError("config: unknown noise mode '" + mode + "'");
        }
        if (j.contains("load")) {
            const auto& l = j.at("load");
            check_keys(l, {"spread", "shared_spread", "seed"}, "load");
            read(l, "spread", cfg.load_spread);
            read(l, "shared_spread", cfg.shared_spread);
            if (l.contains("seed")) cfg.load_seed = l.at("seed").get<std::uint64_t>();
        }
        const auto prior = j.value("prior", std::string("none"));
        if (prior == "none")
            cfg.prior = PriorKnowledge::None;
        else if (prior == "branches")
            cfg.prior = PriorKnowledge::Branches;
        else if (prior == "branches+ties")
            cfg.prior = PriorKnowledge::BranchesAndTies;
        else
            throw ConfigError("config: unknown prior '" + prior + "'");
        if (j.contains("init")) read_init(j.at("init"), cfg);
        if (j.contains("cps")) read_cps(j.at("cps"), cfg.cps);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

Scenario build_scenario(const ExperimentConfig& cfg)
{
    cfg.validate();
    Scenario sc;
    try {
        sc.net = load_case_file(cfg.case_path);
    } catch (const CaseError& e) {
        throw ConfigError(e.what());
    }
    const int N = sc.net.bus_count();
    sc.loads = generate_load_profile(sc.net, cfg.snapshots, cfg.load_seed.value_or(cfg.seed), cfg.load_spread,
                                     cfg.shared_spread);
    sc.plan.bus_count = N;
    sc.plan.snapshots = cfg.snapshots;
    for (int q = 0; q < 4; ++q) {
        if (cfg.sensors[q] == std::vector<int>{-1}) {
            for (int i = 1; i <= N; ++i) sc.plan.buses[q].push_back(i);
        } else {
            sc.plan.buses[q] = cfg.sensors[q];
            std::sort(sc.plan.buses[q].begin(), sc.plan.buses[q].end());
        }
    }
    try {
        sc.plan.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    switch (cfg.prior) {
    case PriorKnowledge::None:
        sc.set = candidate_set(N);
        break;
    case PriorKnowledge::Branches:
        sc.set = candidate_set(N, sc.net.branch_pairs());
        break;
    case PriorKnowledge::BranchesAndTies: {
        auto pairs = sc.net.branch_pairs();
        pairs.insert(pairs.end(), sc.net.tie_lines.begin(), sc.net.tie_lines.end());
        std::sort(pairs.begin(), pairs.end());
        sc.set = candidate_set(N, pairs);
        break;
    }
    }
    return sc;
}

Simulation simulate_replicate(const ExperimentConfig& cfg, const Scenario& sc, int replicate)
{
    MeasurementPlan plan = sc.plan;
    plan.seed = cfg.seed + static_cast<std::uint64_t>(replicate);
    return simulate_measurements(sc.net, sc.loads, plan, cfg.noise);
}

CrlbReport run_crlb(const ExperimentConfig& cfg, const Scenario& sc, const Simulation& sim)
{
    const StateVector xs = true_state(sc.net, sc.set, sim.truth, cfg.pin_slack);
    const MeasurementModel model(sim.plan, sc.set, xs.layout);
    const AdmittanceCrlb cr = crlb_admittance(assemble_fisher_blocks(model, xs.x, sim.measurements.sigma));
    CrlbReport rep = precision_limits(cr.sigma, sc.net, sc.set);
    rep.fisher_rank = cr.rank;
    return rep;
}

StateVector initial_state(const ExperimentConfig& cfg, const Scenario& sc, const Simulation& sim, int replicate)
{
    switch (cfg.init) {
    case InitMode::Truth:
        return true_state(sc.net, sc.set, sim.truth, cfg.pin_slack);
    case InitMode::Planning: {
        NetworkCase planning = sc.net;
        std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(replicate) + 0x9e3779b97f4a7c15ULL);
        std::uniform_real_distribution<double> u(-cfg.planning_perturbation, cfg.planning_perturbation);
        for (auto& br : planning.branches) {
            br.g *= 1.0 + u(rng);
            br.b *= 1.0 + u(rng);
        }
        return initial_state_from_case(sim.measurements, sim.plan, sc.set, planning);
    }
    case InitMode::Measurements:
        break;
    }
    return make_initial_state(sim.measurements, sim.plan, sc.set, sc.net.slack_bus, cfg.init_config);
}

ErrorMetrics compute_metrics(const NetworkCase& net, const CandidateSet& set, const Eigen::VectorXd& g,
                             const Eigen::VectorXd& b)
{
    ErrorMetrics m;
    const std::vector<BusPair> truth = net.branch_pairs();
    const std::set<BusPair> true_set(truth.begin(), truth.end());
    for (const auto& p : set.pairs())
        if (!true_set.count(p)) ++m.spurious;

    double full = 0.0, cond = 0.0;
    int full_n = 0, cond_n = 0;
    for (const auto& br : net.branches) {
        const auto k = set.index_of(br.pair);
        if (!k) ++m.missing;
        for (const auto& [truth_value, est] : {std::pair{br.g, k ? g[static_cast<Eigen::Index>(*k)] : 0.0},
                                               std::pair{br.b, k ? b[static_cast<Eigen::Index>(*k)] : 0.0}}) {
            if (truth_value == 0.0) continue;
            const double rel = std::abs(est - truth_value) / std::abs(truth_value);
            // An exact estimate would send the log to -inf; clamp at machine precision.
            const double l = std::log(std::max(rel, 1e-16));
            full += l;
            ++full_n;
            if (k) {
                cond += l;
                ++cond_n;
            }
        }
    }
    const double n_true = static_cast<double>(truth.size());
    m.topology_error_pct = n_true > 0 ? 100.0 * (m.missing + m.spurious) / n_true : 0.0;
    m.admittance_error_pct = full_n ? 100.0 * std::exp(full / full_n) : 0.0;
    m.conditional_error_pct = cond_n ? 100.0 * std::exp(cond / cond_n) : 0.0;
    return m;
}

ReplicateResult run_replicate(const ExperimentConfig& cfg, const Scenario& sc, int replicate)
{
    ReplicateResult r;
    r.replicate = replicate;
    r.noise_seed = cfg.seed + static_cast<std::uint64_t>(replicate);
    const auto start = std::chrono::steady_clock::now();
    try {
        const Simulation sim = simulate_replicate(cfg, sc, replicate);
        const StateVector x0 = initial_state(cfg, sc, sim, replicate);
        CpsConfig cps = cfg.cps;
        cps.max_seconds = cfg.max_wall_seconds;
        r.estimate = cps_estimate(sim.measurements, sim.plan, sc.set, x0, cps);
        r.timed_out = r.estimate.timed_out;
        r.metrics = compute_metrics(sc.net, r.estimate.set, r.estimate.g, r.estimate.b);
        for (const auto& br : sc.net.branches) {
            const auto k = r.estimate.set.index_of(br.pair);
            const double g = k ? r.estimate.g[static_cast<Eigen::Index>(*k)] : 0.0;
            const double b = k ? r.estimate.b[static_cast<Eigen::Index>(*k)] : 0.0;
            r.hist_g.push_back({br.pair, std::abs(g - br.g), replicate});
            r.hist_b.push_back({br.pair, std::abs(b - br.b), replicate});
        }
    } catch (const std::exception& e) {
        r.failed = true;
        r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, int jobs)
{
    const Scenario sc = build_scenario(cfg);
    ExperimentReport rep;
    rep.crlb = run_crlb(cfg, sc, simulate_replicate(cfg, sc, 0));

    rep.replicates.resize(static_cast<std::size_t>(cfg.replicates));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < cfg.replicates; r = next++) rep.replicates[r] = run_replicate(cfg, sc, r);
    };
    const int threads = std::clamp(jobs, 1, cfg.replicates);
    std::vector<std::thread> pool;
    for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    double topo = 0.0, adm = 0.0, cond = 0.0;
    for (const auto& r : rep.replicates) {
        if (r.failed) continue;
        ++rep.completed;
        topo += r.metrics.topology_error_pct;
        adm += r.metrics.admittance_error_pct;
        cond += r.metrics.conditional_error_pct;
    }
    if (rep.completed) {
        rep.mean_topology_error_pct = topo / rep.completed;
        rep.mean_admittance_error_pct = adm / rep.completed;
        rep.mean_conditional_error_pct = cond / rep.completed;
    }
    return rep;
}

namespace {

json pair_list(const CandidateSet& set)
{
    json out = json::array();
    for (const auto& p : set.pairs()) out.push_back({p.from, p.to});
    return out;
}

json metrics_json(const ErrorMetrics& m)
{
    return {{"topology_error_pct", m.topology_error_pct},
            {"admittance_error_pct", m.admittance_error_pct},
            {"conditional_admittance_error_pct", m.conditional_error_pct},
            {"missing_branches", m.missing},
            {"spurious_branches", m.spurious}};
}

json estimation_object(const EstimationResult& est, const std::optional<ErrorMetrics>& metrics)
{
    json j;
    j["branches"] = json::array();
    for (std::size_t k = 0; k < est.set.size(); ++k)
        j["branches"].push_back({{"from", est.set[k].from},
                                 {"to", est.set[k].to},
                                 {"g", est.g[static_cast<Eigen::Index>(k)]},
                                 {"b", est.b[static_cast<Eigen::Index>(k)]}});
    j["rounds"] = est.rounds;
    j["inner_iterations"] = est.inner_iterations;
    j["converged"] = est.converged;
    j["stalled"] = est.stalled;
    j["diverged"] = est.diverged;
    j["timed_out"] = est.timed_out;
    j["final_loss"] = est.final_loss;
    j["max_loss"] = est.max_loss;
    j["loss_history"] = est.loss_history;
    if (metrics) j["metrics"] = metrics_json(*metrics);
    return j;
}

json crlb_object(const CrlbReport& r) { return json::parse(to_json_text(r)); }

}  // namespace

std::string estimation_json(const EstimationResult& est, const std::optional<ErrorMetrics>& metrics)
{
    return estimation_object(est, metrics).dump(2);
}

std::string experiment_json(const ExperimentConfig& cfg, const ExperimentReport& rep)
{
    json j;
    j["case"] = cfg.case_path;
    j["snapshots"] = cfg.snapshots;
    j["seed"] = cfg.seed;
    j["replicates"] = cfg.replicates;
    j["noise_percent"] = cfg.noise.percent;
    json crlb = crlb_object(rep.crlb);
    crlb.erase("bounds");
    j["crlb"] = crlb;
    j["completed"] = rep.completed;
    j["mean_topology_error_pct"] = rep.mean_topology_error_pct;
    j["mean_admittance_error_pct"] = rep.mean_admittance_error_pct;
    j["mean_conditional_admittance_error_pct"] = rep.mean_conditional_error_pct;
    j["runs"] = json::array();
    for (const auto& r : rep.replicates) {
        json o{{"replicate", r.replicate}, {"noise_seed", r.noise_seed}, {"failed", r.failed},
               {"timed_out", r.timed_out}};
        if (r.failed) {
            o["error"] = r.error;
        } else {
            o["metrics"] = metrics_json(r.metrics);
            o["rounds"] = r.estimate.rounds;
            o["inner_iterations"] = r.estimate.inner_iterations;
            o["final_loss"] = r.estimate.final_loss;
            o["estimated_branches"] = pair_list(r.estimate.set);
            o["loss_history"] = r.estimate.loss_history;
        }
        j["runs"].push_back(o);
    }
    return j.dump(2);
}

void write_histogram_csv(std::ostream& out, const std::vector<ReplicateResult>& reps, char param)
{
    out << "branch_from,branch_to,abs_error,replicate\n";
    char buf[128];
    for (const auto& r : reps)
        for (const auto& h : param == 'g' ? r.hist_g : r.hist_b) {
            std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%d\n", h.branch.from, h.branch.to, h.abs_error, h.replicate);
            out << buf;
        }
}

std::string truth_json(const std::vector<Snapshot>& truth)
{
    json j = json::array();
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    for (std::size_t t = 0; t < truth.size(); ++t)
        j.push_back({{"t", t + 1},
                     {"v", vec(truth[t].v)},
                     {"theta", vec(truth[t].theta)},
                     {"p", vec(truth[t].p)},
                     {"q", vec(truth[t].q)}});
    return j.dump(1);
}

std::string state_json(const StateVector& x, const CandidateSet& set)
{
    json j;
    const Eigen::VectorXd g = x.g(), b = x.b();
    j["branches"] = json::array();
    for (std::size_t k = 0; k < set.size(); ++k)
        j["branches"].push_back({{"from", set[k].from},
                                 {"to", set[k].to},
                                 {"g", g[static_cast<Eigen::Index>(k)]},
                                 {"b", b[static_cast<Eigen::Index>(k)]}});
    const Eigen::MatrixXd v = x.v(), th = x.theta();
    j["v"] = json::array();
    j["theta"] = json::array();
    for (Eigen::Index t = 0; t < v.rows(); ++t) {
        const Eigen::VectorXd vr = v.row(t).transpose(), tr = th.row(t).transpose();
        j["v"].push_back(std::vector<double>(vr.data(), vr.data() + vr.size()));
        j["theta"].push_back(std::vector<double>(tr.data(), tr.data() + tr.size()));
    }
    return j.dump(1);
}

}  // namespace tae

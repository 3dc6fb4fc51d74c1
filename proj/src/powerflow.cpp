#include "tae/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <sstream>

#include "tae/injections.hpp"

namespace tae {

namespace {

// Independent, reproducible streams per (seed, purpose, snapshot).
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t purpose, std::uint32_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose, index};
    return std::mt19937_64(seq);
}

constexpr std::uint32_t kLoadStream = 1;
constexpr std::uint32_t kNoiseStream = 2;

}  // namespace

bool is_connected(int bus_count, const std::vector<BusPair>& edges)
{
    if (bus_count <= 1) return true;
    std::vector<std::vector<int>> adj(bus_count);
    for (const auto& e : edges) {
        adj[e.from - 1].push_back(e.to - 1);
        adj[e.to - 1].push_back(e.from - 1);
    }
    std::vector<char> seen(bus_count, 0);
    std::queue<int> todo;
    todo.push(0);
    seen[0] = 1;
    int count = 1;
    while (!todo.empty()) {
        const int u = todo.front();
        todo.pop();
        for (int w : adj[u])
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                todo.push(w);
            }
    }
    return count == bus_count;
}

Snapshot solve_ac_power_flow(const NetworkCase& net, const Eigen::VectorXd& p_load, const Eigen::VectorXd& q_load,
                             const PowerFlowOptions& opts)
{
    const int n = net.bus_count();
    if (!is_connected(n, net.branch_pairs())) throw PowerFlowError("network is disconnected");

    const CandidateSet set(n, net.branch_pairs());
    Eigen::VectorXd g, b;
    extract_branches(net, set, g, b);

    const int slack = net.slack_bus - 1;
    std::vector<int> pq;  // every non-slack bus is PQ
    for (int i = 0; i < n; ++i)
        if (i != slack) pq.push_back(i);
    const int m = static_cast<int>(pq.size());

    Snapshot s;
    s.v = Eigen::VectorXd::Ones(n);
    s.theta = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd p_spec = -p_load, q_spec = -q_load;

    Eigen::VectorXd p, q, mismatch(2 * m);
    double worst = 0.0;
    for (int iter = 0; iter <= opts.max_iterations; ++iter) {
        injections(set, g, b, s.v, s.theta, p, q);
        for (int r = 0; r < m; ++r) {
            mismatch[r] = p[pq[r]] - p_spec[pq[r]];
            mismatch[m + r] = q[pq[r]] - q_spec[pq[r]];
        }
        worst = m > 0 ? mismatch.cwiseAbs().maxCoeff() : 0.0;
        if (!std::isfinite(worst)) break;
        if (worst <= opts.tolerance) {
            s.p = p;
            s.q = q;
            return s;
        }
        if (iter == opts.max_iterations) break;

        const StateJacobian jac = injection_state_jacobian(set, g, b, s.v, s.theta);
        // unknowns: [theta_pq; V_pq]
        Eigen::MatrixXd J(2 * m, 2 * m);
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) {
                J(r, c) = jac.dp_dth(pq[r], pq[c]);
                J(r, m + c) = jac.dp_dv(pq[r], pq[c]);
                J(m + r, c) = jac.dq_dth(pq[r], pq[c]);
                J(m + r, m + c) = jac.dq_dv(pq[r], pq[c]);
            }
        const Eigen::VectorXd dx = J.partialPivLu().solve(mismatch);
        for (int r = 0; r < m; ++r) {
            s.theta[pq[r]] -= dx[r];
            s.v[pq[r]] -= dx[m + r];
        }
    }
    std::ostringstream msg;
    msg << "power flow did not converge after " << opts.max_iterations << " iterations (max mismatch " << worst
        << " p.u.)";
    throw PowerFlowError(msg.str(), worst);
}

Snapshot solve_ac_power_flow(const NetworkCase& net, const PowerFlowOptions& opts)
{
    Eigen::VectorXd pl(net.bus_count()), ql(net.bus_count());
    for (int i = 0; i < net.bus_count(); ++i) {
        pl[i] = net.buses[i].pd;
        ql[i] = net.buses[i].qd;
    }
    return solve_ac_power_flow(net, pl, ql, opts);
}

LoadProfile generate_load_profile(const NetworkCase& net, int snapshots, std::uint64_t seed, double spread,
                                  double shared_spread)
{
    if (snapshots < 1) throw std::invalid_argument("snapshot count must be >= 1");
    if (spread < 0.0 || spread >= 1.0) throw std::invalid_argument("load spread must be in [0, 1)");
    if (shared_spread < 0.0 || shared_spread >= 1.0) throw std::invalid_argument("shared spread must be in [0, 1)");
    const int n = net.bus_count();
    LoadProfile lp{Eigen::MatrixXd::Ones(n, snapshots), Eigen::MatrixXd::Ones(n, snapshots)};
    for (int t = 0; t < snapshots; ++t) {
        auto rng = stream_rng(seed, kLoadStream, static_cast<std::uint32_t>(t));
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        const double shared = 1.0 + shared_spread * unit(rng);
        for (int i = 0; i < n; ++i) {
            const double up = unit(rng), uq = unit(rng);
            if (spread > 0.0) {
                lp.p_mult(i, t) = (1.0 + spread * up);
                lp.q_mult(i, t) = (1.0 + spread * uq);
            }
            lp.p_mult(i, t) *= shared;
            lp.q_mult(i, t) *= shared;
        }
    }
    return lp;
}

const char* quantity_name(Quantity q)
{
    switch (q) {
    case Quantity::P: return "P";
    case Quantity::Q: return "Q";
    case Quantity::V: return "V";
    case Quantity::Theta: return "TH";
    }
    return "?";
}

Quantity parse_quantity(const std::string& s)
{
    if (s == "P") return Quantity::P;
    if (s == "Q") return Quantity::Q;
    if (s == "V") return Quantity::V;
    if (s == "TH" || s == "THETA" || s == "theta") return Quantity::Theta;
    throw std::invalid_argument("unknown measurement quantity '" + s + "'");
}

int MeasurementPlan::per_snapshot() const
{
    int count = 0;
    for (const auto& set : buses) count += static_cast<int>(set.size());
    return count;
}

bool MeasurementPlan::sigmas_resolved() const
{
    for (int k = 0; k < 4; ++k)
        if (sigma[k].size() != buses[k].size()) return false;
    return true;
}

void MeasurementPlan::validate() const
{
    if (snapshots < 1) throw std::invalid_argument("plan needs at least one snapshot");
    for (int k = 0; k < 4; ++k) {
        const auto& set = buses[k];
        for (std::size_t i = 0; i < set.size(); ++i) {
            if (set[i] < 1 || set[i] > bus_count)
                throw std::invalid_argument("sensor at nonexistent bus " + std::to_string(set[i]));
            if (i > 0 && set[i] <= set[i - 1]) throw std::invalid_argument("sensor bus lists must be sorted and unique");
        }
        if (!sigma[k].empty()) {
            if (sigma[k].size() != set.size()) throw std::invalid_argument("sigma/sensor length mismatch");
            for (double s : sigma[k])
                if (!(s > 0.0)) throw std::invalid_argument("sigma must be positive");
        }
    }
}

MeasurementPlan full_plan(int bus_count, int snapshots, std::initializer_list<Quantity> quantities, std::uint64_t seed)
{
    MeasurementPlan plan;
    plan.bus_count = bus_count;
    plan.snapshots = snapshots;
    plan.seed = seed;
    for (Quantity q : quantities) {
        auto& set = plan.buses[static_cast<int>(q)];
        set.resize(bus_count);
        std::iota(set.begin(), set.end(), 1);
    }
    return plan;
}

namespace {

double channel_value(const Snapshot& s, Quantity q, int bus)
{
    switch (q) {
    case Quantity::P: return s.p[bus - 1];
    case Quantity::Q: return s.q[bus - 1];
    case Quantity::V: return s.v[bus - 1];
    case Quantity::Theta: return s.theta[bus - 1];
    }
    return 0.0;
}

}  // namespace

void resolve_sigmas(MeasurementPlan& plan, const std::vector<Snapshot>& truth, const NoiseSpec& noise)
{
    if (!(noise.percent > 0.0)) throw std::invalid_argument("noise percent must be positive");
    for (int k = 0; k < 4; ++k) {
        const auto q = static_cast<Quantity>(k);
        plan.sigma[k].clear();
        for (int bus : plan.buses[k]) {
            double s = noise.percent / 100.0;
            if (noise.mode == NoiseMode::RelativeRms) {
                double acc = 0.0;
                for (const auto& snap : truth) acc += std::pow(channel_value(snap, q, bus), 2);
                s *= std::sqrt(acc / static_cast<double>(truth.size()));
            }
            plan.sigma[k].push_back(std::max(s, noise.floor));
        }
    }
}

std::vector<MeasurementEntry> stacking_layout(const MeasurementPlan& plan)
{
    std::vector<MeasurementEntry> out;
    out.reserve(static_cast<std::size_t>(plan.measurement_count()));
    for (int t = 0; t < plan.snapshots; ++t)
        for (int k = 0; k < 4; ++k)
            for (int bus : plan.buses[k]) out.push_back({t, static_cast<Quantity>(k), bus});
    return out;
}

Eigen::VectorXd stack_measurements(const MeasurementPlan& plan, const std::vector<Snapshot>& snaps)
{
    const auto layout = stacking_layout(plan);
    Eigen::VectorXd z(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t m = 0; m < layout.size(); ++m)
        z[static_cast<Eigen::Index>(m)] = channel_value(snaps.at(layout[m].snapshot), layout[m].quantity, layout[m].bus);
    return z;
}

Eigen::VectorXd add_noise(const Eigen::VectorXd& clean, const MeasurementTensor& shape, std::uint64_t seed)
{
    Eigen::VectorXd z = clean;
    const int per = shape.per_snapshot;
    const auto snapshots = per > 0 ? clean.size() / per : 0;
    for (Eigen::Index t = 0; t < snapshots; ++t) {
        auto rng = stream_rng(seed, kNoiseStream, static_cast<std::uint32_t>(t));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int r = 0; r < per; ++r) {
            const auto m = t * per + r;
            z[m] += shape.sigma[m] * normal(rng);
        }
    }
    return z;
}

Simulation simulate_measurements(const NetworkCase& net, const LoadProfile& loads, const MeasurementPlan& plan_in,
                                 const NoiseSpec& noise)
{
    Simulation sim;
    sim.plan = plan_in;
    sim.plan.bus_count = net.bus_count();
    sim.plan.snapshots = loads.snapshots();
    sim.plan.validate();

    const int n = net.bus_count();
    Eigen::VectorXd pd(n), qd(n);
    for (int i = 0; i < n; ++i) {
        pd[i] = net.buses[i].pd;
        qd[i] = net.buses[i].qd;
    }
    sim.truth.reserve(static_cast<std::size_t>(loads.snapshots()));
    for (int t = 0; t < loads.snapshots(); ++t) {
        try {
            sim.truth.push_back(
                solve_ac_power_flow(net, pd.cwiseProduct(loads.p_mult.col(t)), qd.cwiseProduct(loads.q_mult.col(t))));
        } catch (const PowerFlowError& e) {
            throw PowerFlowError("snapshot " + std::to_string(t + 1) + ": " + e.what(), e.mismatch(), t);
        }
    }
    if (!sim.plan.sigmas_resolved()) resolve_sigmas(sim.plan, sim.truth, noise);

    auto& m = sim.measurements;
    m.layout = stacking_layout(sim.plan);
    m.per_snapshot = sim.plan.per_snapshot();
    m.sigma.resize(static_cast<Eigen::Index>(m.layout.size()));
    std::array<std::map<int, double>, 4> sig;
    for (int k = 0; k < 4; ++k)
        for (std::size_t i = 0; i < sim.plan.buses[k].size(); ++i) sig[k][sim.plan.buses[k][i]] = sim.plan.sigma[k][i];
    for (std::size_t r = 0; r < m.layout.size(); ++r)
        m.sigma[static_cast<Eigen::Index>(r)] = sig[static_cast<int>(m.layout[r].quantity)].at(m.layout[r].bus);
    m.z = add_noise(stack_measurements(sim.plan, sim.truth), m, sim.plan.seed);
    return sim;
}

void write_measurements_csv(std::ostream& out, const MeasurementTensor& m)
{
    out << "t,quantity,bus,value,sigma\n";
    char buf[128];
    for (std::size_t r = 0; r < m.layout.size(); ++r) {
        const auto& e = m.layout[r];
        std::snprintf(buf, sizeof buf, "%d,%s,%d,%.17g,%.17g\n", e.snapshot + 1, quantity_name(e.quantity), e.bus,
                      m.z[static_cast<Eigen::Index>(r)], m.sigma[static_cast<Eigen::Index>(r)]);
        out << buf;
    }
}

MeasurementTensor read_measurements_csv(std::istream& in, MeasurementPlan* plan_out)
{
    struct Row {
        MeasurementEntry e;
        double value, sigma;
    };
    std::vector<Row> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.rfind("t,", 0) == 0) continue;
        std::istringstream ss(line);
        std::string f[5];
        for (auto& field : f)
            if (!std::getline(ss, field, ',')) throw std::runtime_error("measurement CSV line " + std::to_string(lineno) + ": too few columns");
        try {
            rows.push_back({{std::stoi(f[0]) - 1, parse_quantity(f[1]), std::stoi(f[2])}, std::stod(f[3]), std::stod(f[4])});
        } catch (const std::exception& ex) {
            throw std::runtime_error("measurement CSV line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return std::tie(a.e.snapshot, a.e.quantity, a.e.bus) < std::tie(b.e.snapshot, b.e.quantity, b.e.bus);
    });

    MeasurementTensor m;
    m.z.resize(static_cast<Eigen::Index>(rows.size()));
    m.sigma.resize(static_cast<Eigen::Index>(rows.size()));
    int snapshots = 0, max_bus = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        m.layout.push_back(rows[r].e);
        m.z[static_cast<Eigen::Index>(r)] = rows[r].value;
        m.sigma[static_cast<Eigen::Index>(r)] = rows[r].sigma;
        snapshots = std::max(snapshots, rows[r].e.snapshot + 1);
        max_bus = std::max(max_bus, rows[r].e.bus);
    }
    // Rebuild the plan from snapshot 0 and check every snapshot shares it.
    MeasurementPlan plan;
    plan.snapshots = snapshots;
    plan.bus_count = max_bus;
    for (const auto& r : rows)
        if (r.e.snapshot == 0) {
            plan.buses[static_cast<int>(r.e.quantity)].push_back(r.e.bus);
            plan.sigma[static_cast<int>(r.e.quantity)].push_back(r.sigma);
        }
    m.per_snapshot = plan.per_snapshot();
    if (static_cast<std::size_t>(m.per_snapshot) * snapshots != rows.size())
        throw std::runtime_error("measurement CSV: snapshots do not share one sensor layout");
    const auto expect = stacking_layout(plan);
    for (std::size_t r = 0; r < rows.size(); ++r)
        if (expect[r].bus != rows[r].e.bus || expect[r].quantity != rows[r].e.quantity ||
            expect[r].snapshot != rows[r].e.snapshot)
            throw std::runtime_error("measurement CSV: snapshots do not share one sensor layout");
    if (plan_out) *plan_out = plan;
    return m;
}

}  // namespace tae

#include "tae/initval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "tae/log.hpp"

namespace tae {

Eigen::MatrixXd moving_average(const Eigen::MatrixXd& series, int l)
{
    const auto T = series.rows();
    if (l < 1 || l > T) throw std::invalid_argument("moving average window must lie in [1, T]");
    Eigen::MatrixXd out(T - l + 1, series.cols());
    for (Eigen::Index t = 0; t + l <= T; ++t) out.row(t) = series.middleRows(t, l).colwise().mean();
    return out;
}

namespace {

Eigen::MatrixXd filter_rows(const Eigen::MatrixXd& m, const InitConfig& cfg)
{
    if (!cfg.snapshot_filter) return m;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index t = 0; t < m.rows(); ++t)
        if (cfg.snapshot_filter(static_cast<int>(t))) keep.push_back(t);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(keep.size()), m.cols());
    for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(keep[i]);
    return out;
}

// Bus indices (0-based) by descending column mean; ties by index.
std::vector<int> descending_order(const Eigen::VectorXd& mean)
{
    std::vector<int> order(static_cast<std::size_t>(mean.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mean[a] > mean[b]; });
    return order;
}

}  // namespace

std::vector<BusPair> build_tree_topology(const Eigen::MatrixXd& v, const InitConfig& cfg,
                                         const std::vector<BusPair>& allowed)
{
    const Eigen::MatrixXd data = filter_rows(v, cfg);
    const auto N = static_cast<int>(data.cols());
    if (data.rows() < cfg.window) throw std::invalid_argument("fewer snapshots than the moving-average window");
    const Eigen::MatrixXd smooth = moving_average(data, cfg.window);
    const Eigen::VectorXd mean = smooth.colwise().mean();
    const Eigen::MatrixXd centered = smooth.rowwise() - mean.transpose();
    const Eigen::VectorXd norm = centered.colwise().norm();
    const std::set<BusPair> allowed_set(allowed.begin(), allowed.end());

    const std::vector<int> order = descending_order(mean);
    std::vector<BusPair> tree;
    for (int pos = 1; pos < N; ++pos) {
        const int i = order[pos];
        std::vector<int> preds(order.begin(), order.begin() + pos);
        if (!allowed_set.empty()) {
            std::vector<int> ok;
            for (int j : preds)
                if (allowed_set.count(BusPair(i + 1, j + 1))) ok.push_back(j);
            if (!ok.empty()) preds = std::move(ok);
        }

        int best = preds.front();
        if (norm[i] == 0.0) {
            warn("bus " + std::to_string(i + 1) + " has a constant voltage series; attached by mean magnitude");
            double gap = std::numeric_limits<double>::infinity();
            for (int j : preds)
                if (std::abs(mean[j] - mean[i]) < gap) {
                    gap = std::abs(mean[j] - mean[i]);
                    best = j;
                }
        } else {
            double best_corr = -std::numeric_limits<double>::infinity();
            for (int j : preds) {
                // A constant series carries no correlation information.
                const double corr = norm[j] > 0.0 ? centered.col(i).dot(centered.col(j)) / (norm[i] * norm[j]) : 0.0;
                if (corr > best_corr) {
                    best_corr = corr;
                    best = j;
                }
            }
        }
        tree.emplace_back(i + 1, best + 1);
    }
    return tree;
}

BranchFit fit_phasor_free(const Eigen::VectorXd& p, const Eigen::VectorXd& q, const Eigen::VectorXd& v_send,
                          const Eigen::VectorXd& v_recv)
{
    const Eigen::VectorXd drop = v_send - v_recv;
    const double denom = drop.squaredNorm();
    BranchFit fit;
    if (std::sqrt(denom) < 1e-12) {
        fit.g = kFlatStartG;
        fit.b = kFlatStartB;
        fit.degenerate = true;
        return fit;
    }
    fit.g = p.cwiseQuotient(v_send).dot(drop) / denom;
    fit.b = -q.cwiseQuotient(v_send).dot(drop) / denom;
    return fit;
}

std::vector<BranchFit> phasor_free_admittance(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q,
                                              const Eigen::MatrixXd& v, const std::vector<BusPair>& tree, int root,
                                              const InitConfig& cfg)
{
    const auto N = static_cast<int>(v.cols());
    const Eigen::MatrixXd P = filter_rows(p, cfg), Q = filter_rows(q, cfg), V = filter_rows(v, cfg);

    std::vector<std::vector<int>> adj(static_cast<std::size_t>(N));
    for (const auto& e : tree) {
        adj[e.from - 1].push_back(e.to - 1);
        adj[e.to - 1].push_back(e.from - 1);
    }
    // Breadth-first order from the root gives parents before children.
    std::vector<int> parent(static_cast<std::size_t>(N), -2), order;
    parent[root - 1] = -1;
    order.push_back(root - 1);
    for (std::size_t h = 0; h < order.size(); ++h)
        for (int nb : adj[order[h]])
            if (parent[nb] == -2) {
                parent[nb] = order[h];
                order.push_back(nb);
            }

    // Consumption flowing into each bus's subtree.
    Eigen::MatrixXd p_flow = -P, q_flow = -Q;
    if (cfg.flow == FlowProxy::SubtreeSum)
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if (parent[*it] >= 0) {
                p_flow.col(parent[*it]) += p_flow.col(*it);
                q_flow.col(parent[*it]) += q_flow.col(*it);
            }

    std::vector<BranchFit> fits;
    for (const auto& e : tree) {
        int up = e.from - 1, down = e.to - 1;
        if (parent[down] != up) std::swap(up, down);
        if (parent[down] != up) {
            warn("pair " + std::to_string(e.from) + "-" + std::to_string(e.to) + " is not a tree edge from the root");
            fits.push_back({kFlatStartG, kFlatStartB, true});
            continue;
        }
        BranchFit fit = fit_phasor_free(p_flow.col(down), q_flow.col(down), V.col(up), V.col(down));
        if (fit.degenerate)
            warn("no voltage drop across " + std::to_string(e.from) + "-" + std::to_string(e.to) +
                 "; using the flat-start admittance");
        fits.push_back(fit);
    }
    return fits;
}

Eigen::MatrixXd dc_angle_seed(const Eigen::MatrixXd& p, const CandidateSet& set, const Eigen::VectorXd& b,
                              int slack_bus)
{
    const int N = set.bus_count();
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(N, N);
    for (std::size_t k = 0; k < set.size(); ++k) {
        const int i = set[k].from - 1, j = set[k].to - 1;
        const double w = -b[static_cast<Eigen::Index>(k)];
        lap(i, i) += w;
        lap(j, j) += w;
        lap(i, j) -= w;
        lap(j, i) -= w;
    }
    std::vector<int> keep;
    for (int i = 0; i < N; ++i)
        if (i != slack_bus - 1) keep.push_back(i);
    const auto R = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd reduced(R, R);
    for (Eigen::Index a = 0; a < R; ++a)
        for (Eigen::Index c = 0; c < R; ++c) reduced(a, c) = lap(keep[a], keep[c]);

    Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(p.rows(), N);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(reduced);
    if (R > 0 && !lu.isInvertible()) {
        warn("DC power flow matrix is singular; angles seeded at zero");
        return theta;
    }
    for (Eigen::Index t = 0; t < p.rows(); ++t) {
        Eigen::VectorXd rhs(R);
        for (Eigen::Index a = 0; a < R; ++a) rhs[a] = p(t, keep[a]);
        const Eigen::VectorXd sol = lu.solve(rhs);
        for (Eigen::Index a = 0; a < R; ++a) theta(t, keep[a]) = sol[a];
    }
    return theta;
}

MeasuredSeries measured_series(const MeasurementTensor& z, const MeasurementPlan& plan)
{
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const Eigen::MatrixXd blank = Eigen::MatrixXd::Constant(plan.snapshots, plan.bus_count, nan);
    MeasuredSeries s{blank, blank, blank, blank};
    for (std::size_t m = 0; m < z.layout.size(); ++m) {
        const auto& e = z.layout[m];
        Eigen::MatrixXd& dst = e.quantity == Quantity::P ? s.p
                             : e.quantity == Quantity::Q ? s.q
                             : e.quantity == Quantity::V ? s.v
                                                         : s.theta;
        dst(e.snapshot, e.bus - 1) = z.z[static_cast<Eigen::Index>(m)];
    }
    return s;
}

namespace {

// Measured angles, referenced to the slack, replace the DC seed where available.
Eigen::MatrixXd seed_angles(const MeasuredSeries& s, Eigen::MatrixXd dc, int slack_bus)
{
    for (Eigen::Index t = 0; t < dc.rows(); ++t) {
        const double ref = s.theta(t, slack_bus - 1);
        const double offset = std::isnan(ref) ? 0.0 : ref;
        for (Eigen::Index i = 0; i < dc.cols(); ++i)
            if (!std::isnan(s.theta(t, i))) dc(t, i) = s.theta(t, i) - offset;
        dc(t, slack_bus - 1) = 0.0;
    }
    return dc;
}

}  // namespace

StateVector make_initial_state(const MeasurementTensor& z, const MeasurementPlan& plan, const CandidateSet& set,
                               int slack_bus, const InitConfig& cfg)
{
    const MeasuredSeries s = measured_series(z, plan);
    if (s.v.hasNaN()) throw std::invalid_argument("initialisation needs V at every bus; supply x0 externally");
    if (s.p.hasNaN() || s.q.hasNaN())
        throw std::invalid_argument("initialisation needs P and Q at every bus; supply x0 externally");

    const std::vector<BusPair> tree = build_tree_topology(s.v, cfg, set.pairs());
    const Eigen::MatrixXd v_used = filter_rows(s.v, cfg);
    Eigen::Index root = 0;
    moving_average(v_used, cfg.window).colwise().mean().maxCoeff(&root);
    const std::vector<BranchFit> fits =
        phasor_free_admittance(s.p, s.q, s.v, tree, static_cast<int>(root) + 1, cfg);

    const auto K = static_cast<Eigen::Index>(set.size());
    Eigen::VectorXd g = Eigen::VectorXd::Zero(K), b = Eigen::VectorXd::Zero(K);
    for (std::size_t e = 0; e < tree.size(); ++e) {
        const auto k = set.index_of(tree[e]);
        if (!k) {
            warn("tree edge " + std::to_string(tree[e].from) + "-" + std::to_string(tree[e].to) +
                 " is not a candidate; dropped");
            continue;
        }
        g[static_cast<Eigen::Index>(*k)] = fits[e].g;
        b[static_cast<Eigen::Index>(*k)] = fits[e].b;
    }
    const Eigen::MatrixXd theta = seed_angles(s, dc_angle_seed(s.p, set, b, slack_bus), slack_bus);
    const StateLayout layout(plan.bus_count, plan.snapshots, static_cast<int>(K), slack_bus);
    return pack_state(layout, g, b, s.v, theta);
}

StateVector initial_state_from_case(const MeasurementTensor& z, const MeasurementPlan& plan, const CandidateSet& set,
                                    const NetworkCase& planning)
{
    MeasuredSeries s = measured_series(z, plan);
    s.v = s.v.unaryExpr([](double x) { return std::isnan(x) ? 1.0 : x; });
    s.p = s.p.unaryExpr([](double x) { return std::isnan(x) ? 0.0 : x; });
    Eigen::VectorXd g, b;
    extract_branches(planning, set, g, b);
    const Eigen::MatrixXd theta = seed_angles(s, dc_angle_seed(s.p, set, b, planning.slack_bus), planning.slack_bus);
    const StateLayout layout(plan.bus_count, plan.snapshots, static_cast<int>(set.size()), planning.slack_bus);
    return pack_state(layout, g, b, s.v, theta);
}

}  // namespace tae

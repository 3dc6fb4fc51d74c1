#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "tae/cps.hpp"
#include "tae/initval.hpp"
#include "tae/log.hpp"

using namespace tae;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct CaptureWarnings {
    std::vector<std::string> messages;
    CaptureWarnings()
    {
        set_warning_sink([this](const std::string& m) { messages.push_back(m); });
    }
    ~CaptureWarnings() { set_warning_sink(nullptr); }
};

MatrixXd column_series(const std::vector<Snapshot>& truth, VectorXd Snapshot::*field)
{
    MatrixXd out(static_cast<Eigen::Index>(truth.size()), (truth.front().*field).size());
    for (std::size_t t = 0; t < truth.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = (truth[t].*field).transpose();
    return out;
}

double recovered_fraction(const std::vector<BusPair>& tree, const std::vector<BusPair>& truth)
{
    const std::set<BusPair> t(truth.begin(), truth.end());
    int hit = 0;
    for (const auto& e : tree) hit += static_cast<int>(t.count(e));
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

bool is_spanning_tree(const std::vector<BusPair>& edges, int n)
{
    if (static_cast<int>(edges.size()) != n - 1) return false;
    std::vector<int> root(static_cast<std::size_t>(n));
    std::iota(root.begin(), root.end(), 0);
    auto find = [&](int a) {
        while (root[a] != a) a = root[a] = root[root[a]];
        return a;
    };
    for (const auto& e : edges) {
        const int a = find(e.from - 1), b = find(e.to - 1);
        if (a == b) return false;
        root[a] = b;
    }
    return true;
}

}  // namespace

TEST_CASE("moving average")
{
    const MatrixXd ramp = (MatrixXd(4, 2) << 1, 5, 2, 5, 3, 5, 4, 5).finished();
    CHECK(moving_average(ramp, 1) == ramp);
    const MatrixXd avg = moving_average(ramp, 2);
    REQUIRE(avg.rows() == 3);
    CHECK(avg.col(0) == (VectorXd(3) << 1.5, 2.5, 3.5).finished());
    CHECK(avg.col(1) == VectorXd::Constant(3, 5.0));
    CHECK(moving_average(ramp, 4).row(0) == (Eigen::RowVectorXd(2) << 2.5, 5).finished());
    CHECK_THROWS_AS(moving_average(ramp, 5), std::invalid_argument);
    CHECK_THROWS_AS(moving_average(ramp, 0), std::invalid_argument);
}

TEST_CASE("voltage-correlation tree")
{
    SUBCASE("chain with independent segment drops")
    {
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> u(0.0, 0.01);
        const int T = 200, N = 5;
        MatrixXd v(T, N);
        for (int t = 0; t < T; ++t) {
            v(t, 0) = 1.0;
            for (int i = 1; i < N; ++i) v(t, i) = v(t, i - 1) - u(rng);
        }
        InitConfig cfg;
        const auto tree = build_tree_topology(v, cfg);
        CHECK(tree == std::vector<BusPair>{{1, 2}, {2, 3}, {3, 4}, {4, 5}});
    }
    SUBCASE("two buses")
    {
        const MatrixXd v = (MatrixXd(5, 2) << 1, 0.99, 1, 0.98, 1, 0.97, 1, 0.985, 1, 0.99).finished();
        InitConfig cfg;
        cfg.window = 1;
        CHECK(build_tree_topology(v, cfg) == std::vector<BusPair>{{1, 2}});
    }
    SUBCASE("33-bus noiseless voltages")
    {
        const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
        const LoadProfile loads = generate_load_profile(net, 120, 1, 0.5);
        const Simulation sim = simulate_measurements(net, loads, full_plan(33, 120, {Quantity::V}));
        const auto tree = build_tree_topology(column_series(sim.truth, &Snapshot::v), InitConfig{});
        CHECK(is_spanning_tree(tree, 33));
        CHECK(recovered_fraction(tree, net.branch_pairs()) >= 0.9);
    }
    SUBCASE("random trees are always spanning")
    {
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(0.9, 1.1);
        for (int trial = 0; trial < 20; ++trial) {
            const int n = 2 + trial % 9;
            const MatrixXd v = MatrixXd::NullaryExpr(30, n, [&] { return u(rng); });
            CHECK(is_spanning_tree(build_tree_topology(v, InitConfig{}), n));
        }
    }
    SUBCASE("constant series warns and still attaches")
    {
        MatrixXd v(20, 3);
        for (int t = 0; t < 20; ++t) v.row(t) << 1.0, 0.99 - 0.001 * (t % 3), 0.995;
        CaptureWarnings w;
        const auto tree = build_tree_topology(v, InitConfig{});
        CHECK(is_spanning_tree(tree, 3));
        CHECK(w.messages.size() == 1);
    }
    SUBCASE("allowed pairs restrict the parent")
    {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(0.0, 0.01);
        MatrixXd v(100, 4);
        for (int t = 0; t < 100; ++t) {
            v(t, 0) = 1.0;
            for (int i = 1; i < 4; ++i) v(t, i) = v(t, i - 1) - u(rng);
        }
        const auto tree = build_tree_topology(v, InitConfig{}, {{1, 2}, {1, 3}, {2, 3}, {1, 4}});
        CHECK(tree == std::vector<BusPair>{{1, 2}, {2, 3}, {1, 4}});
    }
}

TEST_CASE("angle-free admittance fit")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int T = 60;
    const double g = 12.5, b = -31.0;
    VectorXd vs(T), vr(T), p(T), q(T);
    for (int t = 0; t < T; ++t) {
        vs[t] = 1.0 + 0.02 * u(rng);
        vr[t] = vs[t] - 0.001 - 0.02 * u(rng);
        p[t] = g * vs[t] * (vs[t] - vr[t]);
        q[t] = -b * vs[t] * (vs[t] - vr[t]);
    }
    const BranchFit fit = fit_phasor_free(p, q, vs, vr);
    CHECK_FALSE(fit.degenerate);
    CHECK(std::abs(fit.g - g) <= 1e-10 * std::abs(g));
    CHECK(std::abs(fit.b - b) <= 1e-10 * std::abs(b));

    const BranchFit resistive = fit_phasor_free(p, VectorXd::Zero(T), vs, vr);
    CHECK(resistive.g == doctest::Approx(g).epsilon(1e-12));
    CHECK(resistive.b == 0.0);

    const BranchFit flat = fit_phasor_free(p, q, vs, vs);
    CHECK(flat.degenerate);
    CHECK(flat.g == kFlatStartG);
    CHECK(flat.b == kFlatStartB);

    std::vector<int> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto shuffled = [&](const VectorXd& x) {
        VectorXd out(T);
        for (int t = 0; t < T; ++t) out[t] = x[perm[t]];
        return out;
    };
    VectorXd pn = p, qn = q;
    for (int t = 0; t < T; ++t) {
        pn[t] += 0.01 * (u(rng) - 0.5);
        qn[t] += 0.01 * (u(rng) - 0.5);
    }
    const BranchFit a = fit_phasor_free(pn, qn, vs, vr);
    const BranchFit c = fit_phasor_free(shuffled(pn), shuffled(qn), shuffled(vs), shuffled(vr));
    CHECK(a.g == doctest::Approx(c.g).epsilon(1e-12));
    CHECK(a.b == doctest::Approx(c.b).epsilon(1e-12));
}

TEST_CASE("angle-free fits on the 33-bus feeder stay within a factor of five")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const LoadProfile loads = generate_load_profile(net, 120, 1, 0.5);
    const Simulation sim = simulate_measurements(net, loads, full_plan(33, 120, {Quantity::V}));
    const auto tree = net.branch_pairs();
    const auto fits = phasor_free_admittance(column_series(sim.truth, &Snapshot::p),
                                             column_series(sim.truth, &Snapshot::q),
                                             column_series(sim.truth, &Snapshot::v), tree, net.slack_bus);
    REQUIRE(fits.size() == tree.size());
    int within = 0, total = 0;
    for (std::size_t e = 0; e < tree.size(); ++e) {
        const auto& br = net.branches[e];
        CHECK(br.pair == tree[e]);
        CHECK_FALSE(fits[e].degenerate);
        for (const auto& [est, truth] : {std::pair{fits[e].g, br.g}, std::pair{fits[e].b, br.b}}) {
            const double ratio = est / truth;
            within += ratio >= 0.2 && ratio <= 5.0;
            ++total;
        }
    }
    CHECK(within >= 0.9 * total);
}

TEST_CASE("DC angle seed")
{
    const CandidateSet two(2, {{1, 2}});
    const VectorXd b = VectorXd::Constant(1, -10.0);
    CHECK(dc_angle_seed(MatrixXd::Zero(3, 2), two, b, 1).isZero(0.0));
    const MatrixXd th = dc_angle_seed((MatrixXd(1, 2) << 0.1, -0.1).finished(), two, b, 1);
    CHECK(th(0, 0) == 0.0);
    CHECK(th(0, 1) == doctest::Approx(-0.01).epsilon(1e-14));

    // A 3-bus chain seeded from bus 2.
    const CandidateSet chain(3, {{1, 2}, {2, 3}});
    const MatrixXd th3 = dc_angle_seed((MatrixXd(1, 3) << -0.2, 0.3, -0.1).finished(), chain,
                                       (VectorXd(2) << -5.0, -20.0).finished(), 2);
    CHECK(th3(0, 1) == 0.0);
    CHECK(th3(0, 0) == doctest::Approx(-0.04).epsilon(1e-14));
    CHECK(th3(0, 2) == doctest::Approx(-0.005).epsilon(1e-14));

    CaptureWarnings w;
    const CandidateSet cut(3, {{1, 2}});
    CHECK(dc_angle_seed(MatrixXd::Ones(2, 3), cut, VectorXd::Constant(1, -4.0), 1).isZero(0.0));
    CHECK(w.messages.size() == 1);
}

TEST_CASE("DC angles approximate the AC solution on reactive feeders")
{
    std::mt19937_64 rng(5);
    NetworkCase net = oracle::random_network(8, 0, rng);
    for (auto& br : net.branches) {
        std::uniform_real_distribution<double> x(0.01, 0.05);
        br = branch_from_impedance(br.pair.from, br.pair.to, 0.0, x(rng));
    }
    const LoadProfile loads = generate_load_profile(net, 10, 3, 0.5);
    const Simulation sim = simulate_measurements(net, loads, full_plan(8, 10, {Quantity::V}));
    const CandidateSet set = candidate_set(8, net.branch_pairs());
    VectorXd g, b;
    extract_branches(net, set, g, b);
    const MatrixXd dc = dc_angle_seed(column_series(sim.truth, &Snapshot::p), set, b, net.slack_bus);
    const MatrixXd ac = column_series(sim.truth, &Snapshot::theta);
    CHECK((dc - ac).cwiseAbs().maxCoeff() <= 0.1 * ac.cwiseAbs().maxCoeff());
}

TEST_CASE("initial state from measurements")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case3.json");
    const int T = 50;
    const LoadProfile loads = generate_load_profile(net, T, 1, 0.5);
    const CandidateSet set = candidate_set(3, net.branch_pairs());

    const Simulation pq = simulate_measurements(net, loads, full_plan(3, T, {Quantity::P, Quantity::Q}, 1));
    CHECK_THROWS_AS(make_initial_state(pq.measurements, pq.plan, set, 1), std::invalid_argument);
    const Simulation vonly = simulate_measurements(net, loads, full_plan(3, T, {Quantity::V}, 1));
    CHECK_THROWS_AS(make_initial_state(vonly.measurements, vonly.plan, set, 1), std::invalid_argument);

    NoiseSpec tiny;
    tiny.percent = 1e-9;
    const Simulation clean =
        simulate_measurements(net, loads, full_plan(3, T, {Quantity::P, Quantity::Q, Quantity::V}, 1), tiny);
    const StateVector x0 = make_initial_state(clean.measurements, clean.plan, set, 1);
    CHECK((x0.v() - column_series(clean.truth, &Snapshot::v)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(x0.theta().col(0).isZero(0.0));

    // Measured angles replace the DC seed, referenced to the slack.
    const Simulation all = simulate_measurements(
        net, loads, full_plan(3, T, {Quantity::P, Quantity::Q, Quantity::V, Quantity::Theta}, 1), tiny);
    const StateVector xa = make_initial_state(all.measurements, all.plan, set, 1);
    CHECK((xa.theta() - column_series(all.truth, &Snapshot::theta)).cwiseAbs().maxCoeff() <= 1e-6);

    const Simulation noisy =
        simulate_measurements(net, loads, full_plan(3, T, {Quantity::P, Quantity::Q, Quantity::V}, 1));
    const StateVector xn = make_initial_state(noisy.measurements, noisy.plan, set, 1);
    CpsConfig known;
    known.prune.enabled = false;
    const EstimationResult r = cps_estimate(noisy.measurements, noisy.plan, set, xn, known);
    CHECK(r.converged);
    CHECK(r.final_loss <= noisy.measurements.size());
    CHECK(r.set == set);
}

TEST_CASE("initial state from planning data")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case3.json");
    const LoadProfile loads = generate_load_profile(net, 5, 1, 0.5);
    const Simulation sim = simulate_measurements(net, loads, full_plan(3, 5, {Quantity::P, Quantity::Q}, 1));
    const CandidateSet set = candidate_set(3);
    const StateVector x0 = initial_state_from_case(sim.measurements, sim.plan, set, net);
    VectorXd g, b;
    extract_branches(net, set, g, b);
    CHECK(x0.g() == g);
    CHECK(x0.b() == b);
    CHECK(x0.v() == MatrixXd::Ones(5, 3));
}

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "support/oracles.hpp"
#include "tae/powerflow.hpp"

using namespace tae;

namespace {

NetworkCase two_bus(double g, double b, double p2, double q2)
{
    NetworkCase net;
    net.buses = {{1, 0.0, 0.0}, {2, p2, q2}};
    net.branches = {{{1, 2}, g, b}};
    net.validate();
    return net;
}

/// Max |recomputed injection - specified net injection| at non-slack buses.
double injection_mismatch(const NetworkCase& net, const Snapshot& s, const Eigen::VectorXd& pd,
                          const Eigen::VectorXd& qd)
{
    const CandidateSet set = candidate_set(net.bus_count(), net.branch_pairs());
    Eigen::VectorXd g, b, p, q;
    extract_branches(net, set, g, b);
    oracle::injections(oracle::ybus(set, g, b), s.v, s.theta, p, q);
    double worst = 0.0;
    for (int i = 0; i < net.bus_count(); ++i) {
        worst = std::max({worst, std::abs(p[i] - s.p[i]), std::abs(q[i] - s.q[i])});
        if (i + 1 == net.slack_bus) continue;
        worst = std::max({worst, std::abs(p[i] + pd[i]), std::abs(q[i] + qd[i])});
    }
    return worst;
}

}  // namespace

TEST_CASE("no load gives the flat profile")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(33);
    const Snapshot s = solve_ac_power_flow(net, zero, zero);
    CHECK((s.v.array() - 1.0).abs().maxCoeff() <= 1e-12);
    CHECK(s.theta.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("two-bus lossless line matches the closed form")
{
    // P2 = 10 V2 sin(th2) = -0.1 and Q2 = 10 V2^2 - 10 V2 cos(th2) = 0.
    const Snapshot s = solve_ac_power_flow(two_bus(0.0, -10.0, 0.1, 0.0));
    const double th = -0.5 * std::asin(0.02);
    CHECK(s.theta[1] == doctest::Approx(th).epsilon(1e-10));
    CHECK(s.v[1] == doctest::Approx(std::cos(th)).epsilon(1e-10));
    CHECK(s.theta[0] == 0.0);
}

TEST_CASE("33-bus base case satisfies the power flow equations")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const Snapshot s = solve_ac_power_flow(net);
    Eigen::VectorXd pd(33), qd(33);
    for (int i = 0; i < 33; ++i) {
        pd[i] = net.buses[i].pd;
        qd[i] = net.buses[i].qd;
    }
    CHECK(injection_mismatch(net, s, pd, qd) <= 1e-9);
    CHECK(s.theta[0] == 0.0);
    CHECK(s.v.minCoeff() > 0.85);
}

TEST_CASE("disconnected network is reported")
{
    NetworkCase net;
    net.buses = {{1, 0, 0}, {2, 0.1, 0}, {3, 0.1, 0}};
    net.branches = {{{1, 2}, 1.0, -2.0}};
    CHECK_THROWS_AS(solve_ac_power_flow(net), PowerFlowError);
    CHECK_FALSE(is_connected(3, net.branch_pairs()));
    CHECK(is_connected(3, {{1, 2}, {2, 3}}));
}

TEST_CASE("extreme loading fails to converge with a mismatch")
{
    try {
        solve_ac_power_flow(two_bus(0.0, -1.0, 5.0, 0.0));
        FAIL("expected PowerFlowError");
    } catch (const PowerFlowError& e) {
        CHECK(e.mismatch() > 0.0);
    }
}

TEST_CASE("load profiles")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const LoadProfile flat = generate_load_profile(net, 10, 1, 0.0);
    CHECK((flat.p_mult.array() == 1.0).all());
    CHECK((flat.q_mult.array() == 1.0).all());

    const LoadProfile a = generate_load_profile(net, 120, 7, 0.5);
    const LoadProfile b = generate_load_profile(net, 120, 7, 0.5);
    CHECK(a.p_mult == b.p_mult);
    CHECK(a.q_mult == b.q_mult);
    CHECK(a.p_mult.minCoeff() >= 0.5);
    CHECK(a.p_mult.maxCoeff() <= 1.5);
    CHECK(a.p_mult.maxCoeff() - a.p_mult.minCoeff() > 0.9);

    // Per-snapshot streams: a longer profile extends a shorter one.
    const LoadProfile c = generate_load_profile(net, 60, 7, 0.5);
    CHECK(c.p_mult == a.p_mult.leftCols(60));

    const LoadProfile shared = generate_load_profile(net, 50, 7, 0.0, 0.3);
    for (int t = 0; t < 50; ++t) CHECK(shared.p_mult.col(t).maxCoeff() == shared.p_mult.col(t).minCoeff());

    CHECK_THROWS_AS(generate_load_profile(net, 0, 1, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(generate_load_profile(net, 5, 1, 1.0), std::invalid_argument);
}

TEST_CASE("measurement counts and stacking order")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const MeasurementPlan full = full_plan(33, 120, {Quantity::P, Quantity::Q, Quantity::V, Quantity::Theta});
    CHECK(full.measurement_count() == 15840);
    const MeasurementPlan pqv = full_plan(33, 4, {Quantity::P, Quantity::Q, Quantity::V});
    CHECK(pqv.measurement_count() == 4 * 99);

    MeasurementPlan plan;
    plan.bus_count = 4;
    plan.snapshots = 2;
    plan.buses = {std::vector<int>{2}, {}, {1, 3}, {4}};
    const auto layout = stacking_layout(plan);
    REQUIRE(layout.size() == 8);
    CHECK(layout[0].quantity == Quantity::P);
    CHECK(layout[1].bus == 1);
    CHECK(layout[2].bus == 3);
    CHECK(layout[3].quantity == Quantity::Theta);
    CHECK(layout[4].snapshot == 1);
    CHECK(layout[4].bus == 2);

    plan.buses[0] = {3, 2};
    CHECK_THROWS_AS(plan.validate(), std::invalid_argument);
    plan.buses[0] = {5};
    CHECK_THROWS_AS(plan.validate(), std::invalid_argument);
}

TEST_CASE("simulation without noise reproduces the operating points")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const LoadProfile loads = generate_load_profile(net, 6, 2, 0.5);
    MeasurementPlan plan = full_plan(33, 6, {Quantity::P, Quantity::Q, Quantity::V});
    const Simulation sim = simulate_measurements(net, loads, plan, NoiseSpec{1e-13, NoiseMode::Absolute, 1e-15});
    CHECK(sim.measurements.size() == 6 * 99);
    for (const auto& e : sim.measurements.layout) CHECK(e.quantity != Quantity::Theta);
    CHECK((sim.measurements.z - stack_measurements(sim.plan, sim.truth)).cwiseAbs().maxCoeff() <= 1e-12);

    for (int t = 0; t < 6; ++t) {
        Eigen::VectorXd pd(33), qd(33);
        for (int i = 0; i < 33; ++i) {
            pd[i] = net.buses[i].pd * loads.p_mult(i, t);
            qd[i] = net.buses[i].qd * loads.q_mult(i, t);
        }
        CHECK(injection_mismatch(net, sim.truth[t], pd, qd) <= 1e-9);
    }
}

TEST_CASE("noise sigma follows the RMS convention")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const LoadProfile loads = generate_load_profile(net, 20, 2, 0.5);
    const Simulation sim = simulate_measurements(net, loads, full_plan(33, 20, {Quantity::P, Quantity::V, Quantity::Theta}),
                                                 NoiseSpec{0.5, NoiseMode::RelativeRms, 1e-8});
    // Bus 5 P channel.
    double acc = 0.0;
    for (const auto& s : sim.truth) acc += s.p[4] * s.p[4];
    CHECK(sim.plan.sigma[0][4] == doctest::Approx(0.005 * std::sqrt(acc / 20.0)).epsilon(1e-12));
    // Slack angle is identically zero, so it sits on the floor.
    CHECK(sim.plan.sigma[3][0] == 1e-8);
}

TEST_CASE("empirical noise std matches sigma within 5 percent")
{
    MeasurementPlan plan;
    plan.bus_count = 3;
    plan.snapshots = 20000;
    plan.buses = {std::vector<int>{1, 2}, {3}, {1}, {}};
    MeasurementTensor shape;
    shape.layout = stacking_layout(plan);
    shape.per_snapshot = plan.per_snapshot();
    const Eigen::Vector4d per(0.01, 2.0, 1e-4, 0.3);
    shape.sigma = per.replicate(plan.snapshots, 1);
    const Eigen::VectorXd clean = Eigen::VectorXd::Constant(shape.sigma.size(), 0.7);
    const Eigen::VectorXd z = add_noise(clean, shape, 11);
    for (int c = 0; c < 4; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int t = 0; t < plan.snapshots; ++t) {
            const double e = z[t * 4 + c] - 0.7;
            sum += e;
            sq += e * e;
        }
        const double mean = sum / plan.snapshots;
        const double sd = std::sqrt(sq / plan.snapshots - mean * mean);
        CHECK(std::abs(sd / per[c] - 1.0) <= 0.05);
    }
    CHECK(add_noise(clean, shape, 11) == z);
    CHECK(add_noise(clean, shape, 12) != z);
}

TEST_CASE("measurement CSV round trip")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const LoadProfile loads = generate_load_profile(net, 3, 2, 0.5);
    MeasurementPlan plan = full_plan(33, 3, {Quantity::P, Quantity::Q, Quantity::V, Quantity::Theta}, 5);
    plan.buses[3] = {1, 7, 20};
    const Simulation sim = simulate_measurements(net, loads, plan);
    std::stringstream csv;
    write_measurements_csv(csv, sim.measurements);
    MeasurementPlan back_plan;
    const MeasurementTensor back = read_measurements_csv(csv, &back_plan);
    CHECK(back.z == sim.measurements.z);
    CHECK(back.sigma == sim.measurements.sigma);
    CHECK(back.per_snapshot == sim.measurements.per_snapshot);
    CHECK(back_plan.buses == sim.plan.buses);
    REQUIRE(back.layout.size() == sim.measurements.layout.size());
    for (std::size_t m = 0; m < back.layout.size(); ++m) {
        CHECK(back.layout[m].snapshot == sim.measurements.layout[m].snapshot);
        CHECK(back.layout[m].quantity == sim.measurements.layout[m].quantity);
        CHECK(back.layout[m].bus == sim.measurements.layout[m].bus);
    }
    std::stringstream again;
    write_measurements_csv(again, back);
    std::stringstream first;
    write_measurements_csv(first, sim.measurements);
    CHECK(again.str() == first.str());

    std::stringstream bad("t,quantity,bus,value,sigma\n1,X,1,0.1,0.1\n");
    CHECK_THROWS(read_measurements_csv(bad));
}

TEST_CASE("simulation is deterministic in the seed")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const LoadProfile loads = generate_load_profile(net, 4, 2, 0.5);
    const MeasurementPlan plan = full_plan(33, 4, {Quantity::P, Quantity::Q, Quantity::V}, 9);
    CHECK(simulate_measurements(net, loads, plan).measurements.z == simulate_measurements(net, loads, plan).measurements.z);
}

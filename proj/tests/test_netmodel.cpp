#include <doctest.h>

#include <random>
#include <string>

#include "tae/netmodel.hpp"

using namespace tae;

namespace {

const char* kTwoBus = R"(mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 1 0;
  2 1 10 5 1 0;
];
mpc.branch = [
  1 2 0 0.5 0;
];
)";

std::string with_branches(const std::string& rows)
{
    return "mpc.baseMVA = 1;\nmpc.bus = [\n 1 3 0 0 1 0;\n 2 1 0 0 1 0;\n 3 1 0 0 1 0;\n];\nmpc.branch = [\n" + rows +
           "];\n";
}

int error_line(const std::string& text)
{
    try {
        parse_case(text, CaseFormat::MatpowerSubset);
    } catch (const CaseError& e) {
        return e.line();
    }
    return -1;
}

}  // namespace

TEST_CASE("bundled 33-bus feeder parses")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    CHECK(net.bus_count() == 33);
    CHECK(net.branches.size() == 32);
    CHECK(net.tie_lines.size() == 5);
    CHECK(net.slack_bus == 1);
    for (const auto& br : net.branches) {
        CHECK(br.pair.from < br.pair.to);
        CHECK(br.g >= 0.0);
    }
}

TEST_CASE("impedance inversion and per-unit loads")
{
    const NetworkCase net = parse_case(kTwoBus, CaseFormat::MatpowerSubset);
    REQUIRE(net.branches.size() == 1);
    CHECK(net.branches[0].g == 0.0);
    CHECK(net.branches[0].b == doctest::Approx(-2.0).epsilon(1e-15));
    CHECK(net.buses[1].pd == doctest::Approx(0.1));
    CHECK(net.buses[1].qd == doctest::Approx(0.05));

    const Branch br = branch_from_impedance(1, 2, 3.0, 4.0);
    CHECK(br.g == doctest::Approx(3.0 / 25.0));
    CHECK(br.b == doctest::Approx(-4.0 / 25.0));
    CHECK_THROWS_AS(branch_from_impedance(1, 2, 0.0, 0.0), CaseError);
}

TEST_CASE("malformed cases are rejected with a line number")
{
    CHECK(error_line(with_branches(" 2 2 0.1 0.1 0;\n")) == 8);                        // self-loop
    CHECK(error_line(with_branches(" 1 2 0.1 0.1 0;\n 2 1 0.1 0.2 0;\n")) == 9);      // duplicate
    CHECK(error_line(with_branches(" 1 4 0.1 0.1 0;\n")) == 8);                        // dangling bus
    CHECK(error_line(with_branches(" 1 2 0 0 0;\n")) == 8);                            // zero impedance
    CHECK(error_line(with_branches(" 1 2 0.1 abc 0;\n")) == 8);                        // syntax
    CHECK_THROWS_AS(parse_case("{\"buses\": [", CaseFormat::NativeJson), CaseError);
}

TEST_CASE("admittance matrices from branches")
{
    const CandidateSet one(2, {{1, 2}});
    const auto y = build_admittance(one, Eigen::Vector<double, 1>(1.0), Eigen::Vector<double, 1>(-2.0));
    CHECK(y.G.isApprox((Eigen::Matrix2d() << 1, -1, -1, 1).finished()));
    CHECK(y.B.isApprox((Eigen::Matrix2d() << -2, 2, 2, -2).finished()));

    const auto empty = build_admittance(CandidateSet(3, {}), Eigen::VectorXd(), Eigen::VectorXd());
    CHECK(empty.G.isZero(0.0));
    CHECK(empty.B.isZero(0.0));

    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const auto y33 = build_admittance(net);
    CHECK(y33.G.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(y33.B.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("random admittances on all pairs give symmetric zero-row-sum matrices")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    const CandidateSet set = candidate_set(6);
    Eigen::VectorXd g(set.size()), b(set.size());
    for (Eigen::Index k = 0; k < g.size(); ++k) {
        g[k] = std::abs(n01(rng));
        b[k] = n01(rng);
    }
    const auto y = build_admittance(set, g, b);
    CHECK((y.G - y.G.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((y.B - y.B.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(y.G.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(y.B.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-14);
    for (std::size_t k = 0; k < set.size(); ++k) {
        CHECK(y.G(set[k].from - 1, set[k].to - 1) == -g[static_cast<Eigen::Index>(k)]);
        CHECK(y.B(set[k].from - 1, set[k].to - 1) == -b[static_cast<Eigen::Index>(k)]);
    }
}

TEST_CASE("extract then build recovers branch values")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const CandidateSet set = candidate_set(net.bus_count(), net.branch_pairs());
    Eigen::VectorXd g, b;
    extract_branches(net, set, g, b);
    const auto direct = build_admittance(net);
    const auto rebuilt = build_admittance(set, g, b);
    CHECK((direct.G - rebuilt.G).cwiseAbs().maxCoeff() == 0.0);
    CHECK((direct.B - rebuilt.B).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t k = 0; k < set.size(); ++k) {
        CHECK(g[static_cast<Eigen::Index>(k)] == net.branches[k].g);
        CHECK(b[static_cast<Eigen::Index>(k)] == net.branches[k].b);
    }

    // Pairs that are not branches read as zero.
    const CandidateSet all = candidate_set(net.bus_count());
    extract_branches(net, all, g, b);
    CHECK((g.array() != 0.0).count() == 32);
}

TEST_CASE("candidate sets")
{
    CHECK(candidate_set(33).size() == 528);
    CHECK(candidate_set(2).pairs() == std::vector<BusPair>{{1, 2}});
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    CHECK(candidate_set(33, net.branch_pairs()).size() == 32);
    CHECK_THROWS_AS(candidate_set(3, std::vector<BusPair>{{1, 4}}), CaseError);
    CHECK_THROWS_AS(candidate_set(3, std::vector<BusPair>{{1, 2}, {2, 1}}), CaseError);
    CHECK(BusPair(5, 2) == BusPair(2, 5));
}

TEST_CASE("native JSON round trip")
{
    const NetworkCase net = load_case_file(TAE_DATA_DIR "/case33bw.m");
    const NetworkCase back = parse_case(to_json_text(net), CaseFormat::NativeJson);
    CHECK(back.base_mva == net.base_mva);
    CHECK(back.slack_bus == net.slack_bus);
    REQUIRE(back.buses.size() == net.buses.size());
    for (std::size_t i = 0; i < net.buses.size(); ++i) {
        CHECK(back.buses[i].pd == net.buses[i].pd);
        CHECK(back.buses[i].qd == net.buses[i].qd);
    }
    REQUIRE(back.branches.size() == net.branches.size());
    for (std::size_t k = 0; k < net.branches.size(); ++k) {
        CHECK(back.branches[k].pair == net.branches[k].pair);
        CHECK(back.branches[k].g == net.branches[k].g);
        CHECK(back.branches[k].b == net.branches[k].b);
    }
    CHECK(back.tie_lines == net.tie_lines);
    CHECK(to_json_text(back) == to_json_text(net));
}

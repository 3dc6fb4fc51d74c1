#include "tae/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tae/log.hpp"

namespace tae {

BusPair::BusPair(int a, int b) : from(std::min(a, b)), to(std::max(a, b)) {}

CaseError::CaseError(const std::string& what, int line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line)
{
}

void NetworkCase::validate() const
{
    const int n = bus_count();
    if (n < 1) throw CaseError("case has no buses");
    if (!(base_mva > 0.0)) throw CaseError("baseMVA must be positive");
    for (int i = 0; i < n; ++i)
        if (buses[i].id != i + 1) throw CaseError("bus ids must be 1..N, found " + std::to_string(buses[i].id));
    if (slack_bus < 1 || slack_bus > n) throw CaseError("slack bus " + std::to_string(slack_bus) + " does not exist");

    std::set<BusPair> seen;
    auto check_pair = [&](const BusPair& p) {
        if (p.from == p.to) throw CaseError("self-loop branch at bus " + std::to_string(p.from));
        if (p.from < 1 || p.to > n)
            throw CaseError("branch (" + std::to_string(p.from) + "," + std::to_string(p.to) + ") references a missing bus");
        if (!seen.insert(p).second)
            throw CaseError("duplicate branch (" + std::to_string(p.from) + "," + std::to_string(p.to) + ")");
    };
    for (const auto& br : branches) {
        check_pair(br.pair);
        if (br.g < 0.0) throw CaseError("negative conductance on branch");
    }
    for (const auto& p : tie_lines) check_pair(p);
}

std::vector<BusPair> NetworkCase::branch_pairs() const
{
    std::vector<BusPair> out;
    out.reserve(branches.size());
    for (const auto& br : branches) out.push_back(br.pair);
    return out;
}

Branch branch_from_impedance(int from, int to, double r, double x)
{
    const double z2 = r * r + x * x;
    if (z2 == 0.0)
        throw CaseError("zero-impedance branch (" + std::to_string(from) + "," + std::to_string(to) + ")");
    return Branch{BusPair(from, to), r / z2, -x / z2};
}

namespace {

struct RawBranch {
    int from, to;
    double r, x;
    bool in_service;
    int line;
};

void finish_case(NetworkCase& net, std::vector<RawBranch>& raw)
{
    std::set<BusPair> seen;
    for (const auto& rb : raw) {
        if (rb.from == rb.to) throw CaseError("self-loop branch at bus " + std::to_string(rb.from), rb.line);
        const BusPair p(rb.from, rb.to);
        if (p.from < 1 || p.to > net.bus_count())
            throw CaseError("branch (" + std::to_string(rb.from) + "," + std::to_string(rb.to) + ") references a missing bus",
                            rb.line);
        if (!seen.insert(p).second)
            throw CaseError("duplicate branch (" + std::to_string(p.from) + "," + std::to_string(p.to) + ")", rb.line);
        if (rb.in_service) {
            try {
                net.branches.push_back(branch_from_impedance(rb.from, rb.to, rb.r, rb.x));
            } catch (const CaseError& e) {
                throw CaseError(e.what(), rb.line);
            }
        } else {
            net.tie_lines.push_back(p);
        }
    }
    std::sort(net.branches.begin(), net.branches.end(), [](const Branch& a, const Branch& b) { return a.pair < b.pair; });
    std::sort(net.tie_lines.begin(), net.tie_lines.end());
    net.validate();
}

std::string strip_comment(const std::string& line)
{
    const auto pos = line.find('%');
    return pos == std::string::npos ? line : line.substr(0, pos);
}

std::vector<double> parse_row(const std::string& text, int line)
{
    std::vector<double> row;
    std::string token;
    std::istringstream in(text);
    while (in >> token) {
        // MATPOWER allows comma separators.
        std::replace(token.begin(), token.end(), ',', ' ');
        std::istringstream sub(token);
        std::string piece;
        while (sub >> piece) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(piece, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != piece.size()) throw CaseError("cannot parse number '" + piece + "'", line);
            row.push_back(v);
        }
    }
    return row;
}

NetworkCase parse_matpower(std::string_view text)
{
    NetworkCase net;
    bool have_base = false, have_bus = false, have_branch = false;
    std::string current;  // matrix being read, empty outside
    std::vector<std::pair<std::vector<double>, int>> bus_rows, branch_rows;
    int matrix_start = 0;

    std::istringstream in{std::string(text)};
    std::string raw_line;
    int lineno = 0;
    while (std::getline(in, raw_line)) {
        ++lineno;
        std::string line = strip_comment(raw_line);
        if (current.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string lhs = line.substr(0, eq);
            lhs.erase(std::remove_if(lhs.begin(), lhs.end(), ::isspace), lhs.end());
            std::string rhs = line.substr(eq + 1);
            if (lhs == "mpc.baseMVA") {
                rhs.erase(std::remove(rhs.begin(), rhs.end(), ';'), rhs.end());
                auto vals = parse_row(rhs, lineno);
                if (vals.size() != 1) throw CaseError("malformed baseMVA", lineno);
                net.base_mva = vals[0];
                have_base = true;
                continue;
            }
            const auto open = rhs.find('[');
            if (open == std::string::npos) continue;
            if (lhs.rfind("mpc.", 0) != 0) continue;
            current = lhs.substr(4);
            matrix_start = lineno;
            line = rhs.substr(open + 1);
        }
        // Inside a matrix: rows are ';' or newline separated, ']' closes.
        bool closes = false;
        const auto close = line.find(']');
        if (close != std::string::npos) {
            line = line.substr(0, close);
            closes = true;
        }
        std::istringstream rows(line);
        std::string row_text;
        while (std::getline(rows, row_text, ';')) {
            auto row = parse_row(row_text, lineno);
            if (row.empty()) continue;
            if (current == "bus") bus_rows.emplace_back(std::move(row), lineno);
            else if (current == "branch") branch_rows.emplace_back(std::move(row), lineno);
        }
        if (closes) {
            if (current == "bus") have_bus = true;
            if (current == "branch") have_branch = true;
            current.clear();
        }
    }
    if (!current.empty()) throw CaseError("unterminated matrix mpc." + current, matrix_start);
    if (!have_base) throw CaseError("missing mpc.baseMVA");
    if (!have_bus) throw CaseError("missing mpc.bus");
    if (!have_branch) throw CaseError("missing mpc.branch");

    // Compact rows: id type Pd Qd Vm Va. Full MATPOWER rows: id type Pd Qd Gs Bs area Vm Va ...
    std::map<int, std::pair<std::vector<double>, int>> by_id;
    int slack = 0;
    for (auto& [row, line] : bus_rows) {
        if (row.size() < 4) throw CaseError("bus row needs at least 4 columns", line);
        const int id = static_cast<int>(row[0]);
        if (id != row[0]) throw CaseError("non-integer bus id", line);
        if (!by_id.emplace(id, std::make_pair(row, line)).second)
            throw CaseError("duplicate bus " + std::to_string(id), line);
        if (static_cast<int>(row[1]) == 3) {
            if (slack != 0) throw CaseError("more than one slack bus", line);
            slack = id;
        }
        if (row.size() >= 9 && (row[4] != 0.0 || row[5] != 0.0))
            warn("bus " + std::to_string(id) + " shunt ignored");
    }
    if (slack == 0) throw CaseError("no slack (type 3) bus");
    int expect = 1;
    for (const auto& [id, entry] : by_id) {
        if (id != expect) throw CaseError("bus ids must be 1..N; missing bus " + std::to_string(expect), entry.second);
        net.buses.push_back(Bus{id, entry.first[2] / net.base_mva, entry.first[3] / net.base_mva});
        ++expect;
    }
    net.slack_bus = slack;

    std::vector<RawBranch> raw;
    for (auto& [row, line] : branch_rows) {
        if (row.size() < 4) throw CaseError("branch row needs at least 4 columns", line);
        bool in_service = true;
        if (row.size() >= 11) in_service = row[10] != 0.0;
        else if (row.size() == 6) in_service = row[5] != 0.0;
        if (row.size() >= 5 && row[4] != 0.0)
            warn("line charging on branch (" + std::to_string(static_cast<int>(row[0])) + "," +
                 std::to_string(static_cast<int>(row[1])) + ") ignored");
        if (row.size() >= 9 && row[8] != 0.0 && row[8] != 1.0) warn("transformer tap ratio ignored");
        raw.push_back({static_cast<int>(row[0]), static_cast<int>(row[1]), row[2], row[3], in_service, line});
    }
    finish_case(net, raw);
    return net;
}

NetworkCase parse_native_json(std::string_view text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // byte offset -> line number
        const auto upto = text.substr(0, std::min<std::size_t>(e.byte, text.size()));
        const int line = 1 + static_cast<int>(std::count(upto.begin(), upto.end(), '\n'));
        throw CaseError(std::string("JSON syntax error: ") + e.what(), line);
    }
    try {
        NetworkCase net;
        net.base_mva = j.value("base_mva", 1.0);
        net.slack_bus = j.at("slack_bus").get<int>();
        for (const auto& jb : j.at("buses"))
            net.buses.push_back(Bus{jb.at("id").get<int>(), jb.value("pd", 0.0), jb.value("qd", 0.0)});
        std::sort(net.buses.begin(), net.buses.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
        for (std::size_t i = 0; i < net.buses.size(); ++i)
            if (net.buses[i].id != static_cast<int>(i) + 1)
                throw CaseError("bus ids must be 1..N, found " + std::to_string(net.buses[i].id));

        std::vector<RawBranch> raw;
        std::vector<Branch> exact;
        for (const auto& jb : j.at("branches")) {
            const int f = jb.at("from").get<int>(), t = jb.at("to").get<int>();
            if (jb.contains("g") && jb.contains("b")) {
                // exact admittance takes precedence over r/x
                exact.push_back(Branch{BusPair(f, t), jb.at("g").get<double>(), jb.at("b").get<double>()});
                raw.push_back({f, t, 1.0, 0.0, true, 0});
            } else {
                raw.push_back({f, t, jb.at("r").get<double>(), jb.at("x").get<double>(), true, 0});
            }
        }
        if (j.contains("tie_lines"))
            for (const auto& jt : j.at("tie_lines"))
                raw.push_back({jt.at("from").get<int>(), jt.at("to").get<int>(), 1.0, 0.0, false, 0});
        finish_case(net, raw);
        for (const auto& e : exact) {
            auto it = std::find_if(net.branches.begin(), net.branches.end(),
                                   [&](const Branch& br) { return br.pair == e.pair; });
            it->g = e.g;
            it->b = e.b;
        }
        net.validate();
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw CaseError(std::string("malformed case JSON: ") + e.what());
    }
}

}  // namespace

NetworkCase parse_case(std::string_view text, CaseFormat format)
{
    return format == CaseFormat::MatpowerSubset ? parse_matpower(text) : parse_native_json(text);
}

NetworkCase load_case_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw CaseError("cannot open case file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const bool json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
    return parse_case(ss.str(), json ? CaseFormat::NativeJson : CaseFormat::MatpowerSubset);
}

std::string to_json_text(const NetworkCase& net)
{
    nlohmann::json j;
    j["base_mva"] = net.base_mva;
    j["slack_bus"] = net.slack_bus;
    j["buses"] = nlohmann::json::array();
    for (const auto& b : net.buses) j["buses"].push_back({{"id", b.id}, {"pd", b.pd}, {"qd", b.qd}});
    j["branches"] = nlohmann::json::array();
    for (const auto& br : net.branches) {
        const double y2 = br.g * br.g + br.b * br.b;
        j["branches"].push_back({{"from", br.pair.from},
                                 {"to", br.pair.to},
                                 {"r", br.g / y2},
                                 {"x", -br.b / y2},
                                 {"g", br.g},
                                 {"b", br.b}});
    }
    if (!net.tie_lines.empty()) {
        j["tie_lines"] = nlohmann::json::array();
        for (const auto& p : net.tie_lines) j["tie_lines"].push_back({{"from", p.from}, {"to", p.to}});
    }
    return j.dump(2);
}

CandidateSet::CandidateSet(int bus_count, std::vector<BusPair> pairs) : bus_count_(bus_count), pairs_(std::move(pairs))
{
    std::set<BusPair> seen;
    for (const auto& p : pairs_) {
        if (p.from == p.to) throw CaseError("candidate self-pair at bus " + std::to_string(p.from));
        if (p.from < 1 || p.to > bus_count_)
            throw CaseError("candidate pair (" + std::to_string(p.from) + "," + std::to_string(p.to) +
                            ") references a missing bus");
        if (!seen.insert(p).second) throw CaseError("duplicate candidate pair");
    }
}

std::optional<std::size_t> CandidateSet::index_of(const BusPair& p) const
{
    const auto it = std::find(pairs_.begin(), pairs_.end(), p);
    if (it == pairs_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - pairs_.begin());
}

CandidateSet candidate_set(int bus_count, const std::optional<std::vector<BusPair>>& prior)
{
    if (prior) return CandidateSet(bus_count, *prior);
    std::vector<BusPair> all;
    all.reserve(static_cast<std::size_t>(bus_count) * (bus_count - 1) / 2);
    for (int i = 1; i <= bus_count; ++i)
        for (int j = i + 1; j <= bus_count; ++j) all.emplace_back(i, j);
    return CandidateSet(bus_count, std::move(all));
}

AdmittanceMatrices build_admittance(const CandidateSet& set, const Eigen::VectorXd& g, const Eigen::VectorXd& b)
{
    const int n = set.bus_count();
    AdmittanceMatrices y{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
    for (std::size_t k = 0; k < set.size(); ++k) {
        const int i = set[k].from - 1, j = set[k].to - 1;
        y.G(i, j) -= g[k];
        y.G(j, i) -= g[k];
        y.G(i, i) += g[k];
        y.G(j, j) += g[k];
        y.B(i, j) -= b[k];
        y.B(j, i) -= b[k];
        y.B(i, i) += b[k];
        y.B(j, j) += b[k];
    }
    return y;
}

AdmittanceMatrices build_admittance(const NetworkCase& net)
{
    const CandidateSet set(net.bus_count(), net.branch_pairs());
    Eigen::VectorXd g(set.size()), b(set.size());
    for (std::size_t k = 0; k < set.size(); ++k) {
        g[k] = net.branches[k].g;
        b[k] = net.branches[k].b;
    }
    return build_admittance(set, g, b);
}

void extract_branches(const NetworkCase& net, const CandidateSet& set, Eigen::VectorXd& g, Eigen::VectorXd& b)
{
    g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(set.size()));
    b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(set.size()));
    for (const auto& br : net.branches) {
        if (auto k = set.index_of(br.pair)) {
            g[static_cast<Eigen::Index>(*k)] = br.g;
            b[static_cast<Eigen::Index>(*k)] = br.b;
        }
    }
}

}  // namespace tae

// Network case representation, case-file parsing and admittance matrices.
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tae {

/// Unordered bus pair stored with `from < to`. Buses are 1-based.
struct BusPair {
    int from = 0;
    int to = 0;

    BusPair() = default;
    BusPair(int a, int b);

    friend bool operator==(const BusPair&, const BusPair&) = default;
    friend auto operator<=>(const BusPair&, const BusPair&) = default;
};

struct Bus {
    int id = 0;
    double pd = 0.0;  // p.u. load
    double qd = 0.0;
};

struct Branch {
    BusPair pair;
    double g = 0.0;  // p.u.
    double b = 0.0;  // p.u.
};

class CaseError : public std::runtime_error {
public:
    CaseError(const std::string& what, int line = 0);
    int line() const { return line_; }

private:
    int line_;
};

/// A balanced, shunt-free network in per-unit. Immutable once validated.
struct NetworkCase {
    double base_mva = 1.0;
    int slack_bus = 1;
    std::vector<Bus> buses;          // buses[i].id == i + 1
    std::vector<Branch> branches;    // in-service lines, sorted by pair
    std::vector<BusPair> tie_lines;  // normally-open switches (known to exist, not energised)

    int bus_count() const { return static_cast<int>(buses.size()); }

    /// Throws CaseError on any broken invariant.
    void validate() const;

    std::vector<BusPair> branch_pairs() const;
};

enum class CaseFormat { MatpowerSubset, NativeJson };

/// `r + jx` in p.u. to series admittance `g + jb`. Throws on zero impedance.
Branch branch_from_impedance(int from, int to, double r, double x);

NetworkCase parse_case(std::string_view text, CaseFormat format);
NetworkCase load_case_file(const std::string& path);

/// Native JSON representation; parse_case(to_json_text(c), NativeJson) == c.
std::string to_json_text(const NetworkCase& net);

/// Ordered set of bus pairs the estimator may connect.
class CandidateSet {
public:
    CandidateSet() = default;
    CandidateSet(int bus_count, std::vector<BusPair> pairs);

    int bus_count() const { return bus_count_; }
    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }
    const std::vector<BusPair>& pairs() const { return pairs_; }
    const BusPair& operator[](std::size_t k) const { return pairs_[k]; }

    /// Position of `p`, if present.
    std::optional<std::size_t> index_of(const BusPair& p) const;
    bool contains(const BusPair& p) const { return index_of(p).has_value(); }

    friend bool operator==(const CandidateSet&, const CandidateSet&) = default;

private:
    int bus_count_ = 0;
    std::vector<BusPair> pairs_;
};

/// All N(N-1)/2 pairs when `prior` is absent, otherwise exactly the prior pairs.
CandidateSet candidate_set(int bus_count, const std::optional<std::vector<BusPair>>& prior = std::nullopt);

struct AdmittanceMatrices {
    Eigen::MatrixXd G;
    Eigen::MatrixXd B;
};

AdmittanceMatrices build_admittance(const NetworkCase& net);
AdmittanceMatrices build_admittance(const CandidateSet& set, const Eigen::VectorXd& g, const Eigen::VectorXd& b);

/// Per-pair admittance values of `set` taken from the case (0 for non-branches).
void extract_branches(const NetworkCase& net, const CandidateSet& set, Eigen::VectorXd& g, Eigen::VectorXd& b);

}  // namespace tae

// Starting point for CPS from P, Q, V data alone: a voltage-correlation tree,
// angle-free admittance estimates on its edges and DC power flow angles.
#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "tae/mlmodel.hpp"
#include "tae/netmodel.hpp"
#include "tae/powerflow.hpp"

namespace tae {

enum class FlowProxy {
    SubtreeSum,  // branch flow = downstream consumption accumulated through the tree
    Nodal        // branch flow = consumption at the receiving bus only
};

struct InitConfig {
    int window = 5;  // moving-average length l
    bool assume_radial = true;
    FlowProxy flow = FlowProxy::SubtreeSum;
    /// Keeps snapshot t (zero-based) when set, e.g. night hours only.
    std::function<bool(int)> snapshot_filter;
};

/// Trailing moving average of each column of `series` (T x N). Output is (T - l + 1) x N.
Eigen::MatrixXd moving_average(const Eigen::MatrixXd& series, int l);

/// Tree over all buses from V (T x N). Buses are taken by descending mean smoothed
/// magnitude; each attaches to the earlier bus with the highest correlation. When
/// `allowed` is nonempty only its pairs may be used, if any reaches an earlier bus.
std::vector<BusPair> build_tree_topology(const Eigen::MatrixXd& v, const InitConfig& cfg,
                                         const std::vector<BusPair>& allowed = {});

struct BranchFit {
    double g = 0.0;
    double b = 0.0;
    bool degenerate = false;
};

/// Least squares of P/V and Q/V on the voltage drop for one line. `p`, `q` are flows
/// leaving the sending bus, `v_send`/`v_recv` the endpoint magnitudes. The returned b
/// carries the sign of a series susceptance (negative for inductive lines).
BranchFit fit_phasor_free(const Eigen::VectorXd& p, const Eigen::VectorXd& q, const Eigen::VectorXd& v_send,
                          const Eigen::VectorXd& v_recv);

inline constexpr double kFlatStartG = 1.0;
inline constexpr double kFlatStartB = -3.0;

/// Fits every tree edge from nodal injections (T x N, generation positive) and
/// magnitudes. `root` is the bus the tree hangs from. Result is parallel to `tree`.
std::vector<BranchFit> phasor_free_admittance(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q,
                                              const Eigen::MatrixXd& v, const std::vector<BusPair>& tree, int root,
                                              const InitConfig& cfg = {});

/// DC power flow angles for each row of `p` (T x N): L theta = P with L the
/// Laplacian weighted by -b and theta_slack = 0.
Eigen::MatrixXd dc_angle_seed(const Eigen::MatrixXd& p, const CandidateSet& set, const Eigen::VectorXd& b,
                              int slack_bus);

/// Measured P, Q, V, theta as T x N matrices; NaN where unmeasured.
struct MeasuredSeries {
    Eigen::MatrixXd p, q, v, theta;
};
MeasuredSeries measured_series(const MeasurementTensor& z, const MeasurementPlan& plan);

/// x0 over `set` from measurements: V measured, tree edges fitted, other pairs 0,
/// angles measured where available and from DC power flow elsewhere. Requires P, Q and V at every bus; throws otherwise.
StateVector make_initial_state(const MeasurementTensor& z, const MeasurementPlan& plan, const CandidateSet& set,
                               int slack_bus, const InitConfig& cfg = {});

/// x0 from planning data: admittances taken from `planning` (0 for absent pairs),
/// V and angles from measurements where available, otherwise flat V and DC angles.
StateVector initial_state_from_case(const MeasurementTensor& z, const MeasurementPlan& plan, const CandidateSet& set,
                                    const NetworkCase& planning);

}  // namespace tae

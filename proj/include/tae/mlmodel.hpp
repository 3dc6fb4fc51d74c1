// The estimation problem: state vector layout, forward model h(x), weighted loss
// and the analytic measurement Jacobian.
#pragma once

#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "tae/netmodel.hpp"
#include "tae/powerflow.hpp"

namespace tae {

/// Flat ordering: all g, all b, then per snapshot [V_1..V_N, th_1..th_N].
/// With slack pinning the slack angle is dropped from every snapshot block.
class StateLayout {
public:
    StateLayout() = default;
    StateLayout(int bus_count, int snapshots, int pair_count, int slack_bus, bool pin_slack = true);

    int bus_count() const { return n_; }
    int snapshots() const { return t_; }
    int pair_count() const { return k_; }
    int slack_bus() const { return slack_; }
    bool pin_slack() const { return pin_; }

    Eigen::Index admittance_size() const { return 2 * k_; }
    /// Width of one snapshot block (2N or 2N - 1).
    Eigen::Index block_width() const { return pin_ ? 2 * n_ - 1 : 2 * n_; }
    Eigen::Index size() const { return admittance_size() + t_ * block_width(); }
    Eigen::Index block_offset(int t) const { return admittance_size() + t * block_width(); }

    Eigen::Index g(int k) const { return k; }
    Eigen::Index b(int k) const { return k_ + k; }
    /// Index of V_bus within a snapshot block (bus 1-based).
    Eigen::Index local_v(int bus) const { return bus - 1; }
    /// Index of th_bus within a snapshot block, -1 when pinned.
    Eigen::Index local_theta(int bus) const;
    Eigen::Index v(int t, int bus) const { return block_offset(t) + local_v(bus); }
    Eigen::Index theta(int t, int bus) const;

    /// 0 admittance, 1 voltage magnitude, 2 voltage angle.
    std::vector<int> groups() const;

    friend bool operator==(const StateLayout&, const StateLayout&) = default;

private:
    int n_ = 0, t_ = 0, k_ = 0, slack_ = 1;
    bool pin_ = true;
};

struct StateVector {
    StateLayout layout;
    Eigen::VectorXd x;

    Eigen::VectorXd g() const;
    Eigen::VectorXd b() const;
    /// T x N matrices.
    Eigen::MatrixXd v() const;
    Eigen::MatrixXd theta() const;
};

/// Pack components into the flat vector. `v`, `theta` are T x N.
StateVector pack_state(const StateLayout& layout, const Eigen::VectorXd& g, const Eigen::VectorXd& b,
                       const Eigen::MatrixXd& v, const Eigen::MatrixXd& theta);
/// Throws std::invalid_argument on length mismatch.
StateVector unpack_state(const StateLayout& layout, const Eigen::VectorXd& flat);

/// Ground-truth state for a candidate set (0 admittance on non-branches).
StateVector true_state(const NetworkCase& net, const CandidateSet& set, const std::vector<Snapshot>& truth,
                       bool pin_slack = true);

/// The measurement model for one (plan, candidate set) pair.
class MeasurementModel {
public:
    MeasurementModel(const MeasurementPlan& plan, CandidateSet set, StateLayout layout);

    const MeasurementPlan& plan() const { return plan_; }
    const CandidateSet& set() const { return set_; }
    const StateLayout& layout() const { return layout_; }
    int rows_per_snapshot() const { return plan_.per_snapshot(); }
    Eigen::Index measurement_count() const { return plan_.measurement_count(); }

    /// Stacked h(x) in measurement order.
    Eigen::VectorXd eval_h(const Eigen::VectorXd& x) const;
    void eval_h_snapshot(const Eigen::VectorXd& x, int t, Eigen::Ref<Eigen::VectorXd> out) const;

    /// Per-snapshot Jacobian blocks. Rows of snapshot t only touch the admittance
    /// columns and the state columns of block t.
    struct SnapshotJacobian {
        Eigen::SparseMatrix<double, Eigen::RowMajor> admittance;  // rows x 2K
        Eigen::MatrixXd state;                                     // rows x block_width
    };
    SnapshotJacobian eval_jacobian_snapshot(const Eigen::VectorXd& x, int t) const;

    /// Full M x S Jacobian, assembled densely. For small problems and tests.
    Eigen::MatrixXd eval_jacobian_dense(const Eigen::VectorXd& x) const;

private:
    MeasurementPlan plan_;
    CandidateSet set_;
    StateLayout layout_;
    std::vector<std::vector<int>> incident_;  // pairs touching each bus (0-based bus)
};

struct Residuals {
    Eigen::VectorXd r;  // z - h(x)
    double weighted_loss = 0.0;
};

Residuals eval_residuals(const MeasurementModel& model, const Eigen::VectorXd& x, const MeasurementTensor& z);
double eval_loss(const MeasurementModel& model, const Eigen::VectorXd& x, const MeasurementTensor& z);
/// Gradient of the weighted loss: 2 H^T diag(sigma^-2) (h(x) - z).
Eigen::VectorXd eval_loss_gradient(const MeasurementModel& model, const Eigen::VectorXd& x, const MeasurementTensor& z);

}  // namespace tae

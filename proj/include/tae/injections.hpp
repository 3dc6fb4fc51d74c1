// Per-line contributions to nodal power injections and their partial derivatives.
//
// With zero shunts the injection at bus i decomposes into line terms:
//   P_i = sum_j  g_ij (V_i^2 - V_i V_j cos th_ij) - b_ij V_i V_j sin th_ij
//   Q_i = sum_j -b_ij (V_i^2 - V_i V_j cos th_ij) - g_ij V_i V_j sin th_ij
// which is the polar power-flow equation with G, B assembled from (g, b).
#pragma once

#include <array>

#include <Eigen/Dense>

#include "tae/netmodel.hpp"

namespace tae {

/// Contribution of one line to the injection at its near end `a`.
/// Derivatives w.r.t. the line (g, b) and the endpoint states (V_a, V_b, th_a, th_b).
struct LineEnd {
    double p = 0.0, q = 0.0;
    double dp_dg = 0.0, dp_db = 0.0, dq_dg = 0.0, dq_db = 0.0;
    std::array<double, 4> dp{};  // d/dV_a, d/dV_b, d/dth_a, d/dth_b
    std::array<double, 4> dq{};
};

LineEnd line_end(double g, double b, double va, double vb, double ta, double tb);

/// Nodal injections for one operating point. `v`, `theta` indexed 0..N-1.
void injections(const CandidateSet& set, const Eigen::VectorXd& g, const Eigen::VectorXd& b, const Eigen::VectorXd& v,
                const Eigen::VectorXd& theta, Eigen::VectorXd& p, Eigen::VectorXd& q);

/// Dense N x N blocks dP/dV, dP/dth, dQ/dV, dQ/dth.
struct StateJacobian {
    Eigen::MatrixXd dp_dv, dp_dth, dq_dv, dq_dth;
};

StateJacobian injection_state_jacobian(const CandidateSet& set, const Eigen::VectorXd& g, const Eigen::VectorXd& b,
                                       const Eigen::VectorXd& v, const Eigen::VectorXd& theta);

}  // namespace tae

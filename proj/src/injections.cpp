#include "tae/injections.hpp"

#include <cmath>

namespace tae {

LineEnd line_end(double g, double b, double va, double vb, double ta, double tb)
{
    const double c = std::cos(ta - tb), s = std::sin(ta - tb);
    const double vv = va * vb;
    const double drop = va * va - vv * c;  // V_a^2 - V_a V_b cos

    LineEnd e;
    e.p = g * drop - b * vv * s;
    e.q = -b * drop - g * vv * s;

    e.dp_dg = drop;
    e.dp_db = -vv * s;
    e.dq_dg = -vv * s;
    e.dq_db = -drop;

    e.dp[0] = g * (2.0 * va - vb * c) - b * vb * s;
    e.dp[1] = -g * va * c - b * va * s;
    e.dp[2] = g * vv * s - b * vv * c;
    e.dp[3] = -e.dp[2];

    e.dq[0] = -b * (2.0 * va - vb * c) - g * vb * s;
    e.dq[1] = b * va * c - g * va * s;
    e.dq[2] = -b * vv * s - g * vv * c;
    e.dq[3] = -e.dq[2];
    return e;
}

void injections(const CandidateSet& set, const Eigen::VectorXd& g, const Eigen::VectorXd& b, const Eigen::VectorXd& v,
                const Eigen::VectorXd& theta, Eigen::VectorXd& p, Eigen::VectorXd& q)
{
    const int n = set.bus_count();
    p.setZero(n);
    q.setZero(n);
    for (std::size_t k = 0; k < set.size(); ++k) {
        const int i = set[k].from - 1, j = set[k].to - 1;
        const auto ki = static_cast<Eigen::Index>(k);
        if (g[ki] == 0.0 && b[ki] == 0.0) continue;
        const double c = std::cos(theta[i] - theta[j]), s = std::sin(theta[i] - theta[j]);
        const double vv = v[i] * v[j];
        const double di = v[i] * v[i] - vv * c, dj = v[j] * v[j] - vv * c;
        p[i] += g[ki] * di - b[ki] * vv * s;
        q[i] += -b[ki] * di - g[ki] * vv * s;
        p[j] += g[ki] * dj + b[ki] * vv * s;
        q[j] += -b[ki] * dj + g[ki] * vv * s;
    }
}

StateJacobian injection_state_jacobian(const CandidateSet& set, const Eigen::VectorXd& g, const Eigen::VectorXd& b,
                                       const Eigen::VectorXd& v, const Eigen::VectorXd& theta)
{
    const int n = set.bus_count();
    StateJacobian jac{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n),
                      Eigen::MatrixXd::Zero(n, n)};
    for (std::size_t k = 0; k < set.size(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        if (g[ki] == 0.0 && b[ki] == 0.0) continue;
        const int i = set[k].from - 1, j = set[k].to - 1;
        for (const auto& [a, o] : {std::pair{i, j}, std::pair{j, i}}) {
            const LineEnd e = line_end(g[ki], b[ki], v[a], v[o], theta[a], theta[o]);
            jac.dp_dv(a, a) += e.dp[0];
            jac.dp_dv(a, o) += e.dp[1];
            jac.dp_dth(a, a) += e.dp[2];
            jac.dp_dth(a, o) += e.dp[3];
            jac.dq_dv(a, a) += e.dq[0];
            jac.dq_dv(a, o) += e.dq[1];
            jac.dq_dth(a, a) += e.dq[2];
            jac.dq_dth(a, o) += e.dq[3];
        }
    }
    return jac;
}

}  // namespace tae

#include "tae/mlmodel.hpp"

#include <cmath>
#include <stdexcept>

#include "tae/injections.hpp"

namespace tae {

StateLayout::StateLayout(int bus_count, int snapshots, int pair_count, int slack_bus, bool pin_slack)
    : n_(bus_count), t_(snapshots), k_(pair_count), slack_(slack_bus), pin_(pin_slack)
{
    if (slack_ < 1 || slack_ > n_) throw std::invalid_argument("slack bus outside 1..N");
}

Eigen::Index StateLayout::local_theta(int bus) const
{
    if (!pin_) return n_ + bus - 1;
    if (bus == slack_) return -1;
    return n_ + (bus < slack_ ? bus - 1 : bus - 2);
}

Eigen::Index StateLayout::theta(int t, int bus) const
{
    const auto local = local_theta(bus);
    return local < 0 ? -1 : block_offset(t) + local;
}

std::vector<int> StateLayout::groups() const
{
    std::vector<int> out(static_cast<std::size_t>(size()), 0);
    for (int t = 0; t < t_; ++t) {
        const auto off = block_offset(t);
        for (Eigen::Index i = 0; i < block_width(); ++i) out[off + i] = i < n_ ? 1 : 2;
    }
    return out;
}

Eigen::VectorXd StateVector::g() const { return x.head(layout.pair_count()); }
Eigen::VectorXd StateVector::b() const { return x.segment(layout.pair_count(), layout.pair_count()); }

Eigen::MatrixXd StateVector::v() const
{
    Eigen::MatrixXd out(layout.snapshots(), layout.bus_count());
    for (int t = 0; t < layout.snapshots(); ++t)
        for (int i = 1; i <= layout.bus_count(); ++i) out(t, i - 1) = x[layout.v(t, i)];
    return out;
}

Eigen::MatrixXd StateVector::theta() const
{
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(layout.snapshots(), layout.bus_count());
    for (int t = 0; t < layout.snapshots(); ++t)
        for (int i = 1; i <= layout.bus_count(); ++i) {
            const auto idx = layout.theta(t, i);
            if (idx >= 0) out(t, i - 1) = x[idx];
        }
    return out;
}

StateVector pack_state(const StateLayout& layout, const Eigen::VectorXd& g, const Eigen::VectorXd& b,
                       const Eigen::MatrixXd& v, const Eigen::MatrixXd& theta)
{
    if (g.size() != layout.pair_count() || b.size() != layout.pair_count() || v.rows() != layout.snapshots() ||
        v.cols() != layout.bus_count() || theta.rows() != layout.snapshots() || theta.cols() != layout.bus_count())
        throw std::invalid_argument("state component sizes do not match layout");
    StateVector s{layout, Eigen::VectorXd::Zero(layout.size())};
    s.x.head(layout.pair_count()) = g;
    s.x.segment(layout.pair_count(), layout.pair_count()) = b;
    for (int t = 0; t < layout.snapshots(); ++t)
        for (int i = 1; i <= layout.bus_count(); ++i) {
            s.x[layout.v(t, i)] = v(t, i - 1);
            const auto idx = layout.theta(t, i);
            if (idx >= 0) s.x[idx] = theta(t, i - 1);
        }
    return s;
}

StateVector unpack_state(const StateLayout& layout, const Eigen::VectorXd& flat)
{
    if (flat.size() != layout.size())
        throw std::invalid_argument("state vector length " + std::to_string(flat.size()) + " does not match layout size " +
                                    std::to_string(layout.size()));
    return StateVector{layout, flat};
}

StateVector true_state(const NetworkCase& net, const CandidateSet& set, const std::vector<Snapshot>& truth,
                       bool pin_slack)
{
    const int n = net.bus_count(), T = static_cast<int>(truth.size());
    const StateLayout layout(n, T, static_cast<int>(set.size()), net.slack_bus, pin_slack);
    Eigen::VectorXd g, b;
    extract_branches(net, set, g, b);
    Eigen::MatrixXd v(T, n), th(T, n);
    for (int t = 0; t < T; ++t) {
        v.row(t) = truth[t].v.transpose();
        th.row(t) = truth[t].theta.transpose();
    }
    return pack_state(layout, g, b, v, th);
}

MeasurementModel::MeasurementModel(const MeasurementPlan& plan, CandidateSet set, StateLayout layout)
    : plan_(plan), set_(std::move(set)), layout_(layout), incident_(static_cast<std::size_t>(layout.bus_count()))
{
    if (plan_.bus_count != layout_.bus_count() || plan_.snapshots != layout_.snapshots() ||
        static_cast<int>(set_.size()) != layout_.pair_count() || set_.bus_count() != layout_.bus_count())
        throw std::invalid_argument("plan, candidate set and state layout disagree");
    for (std::size_t k = 0; k < set_.size(); ++k) {
        incident_[set_[k].from - 1].push_back(static_cast<int>(k));
        incident_[set_[k].to - 1].push_back(static_cast<int>(k));
    }
}

namespace {

struct SnapshotView {
    Eigen::VectorXd v, theta;
};

SnapshotView snapshot_view(const StateLayout& layout, const Eigen::VectorXd& x, int t)
{
    SnapshotView s{Eigen::VectorXd(layout.bus_count()), Eigen::VectorXd::Zero(layout.bus_count())};
    for (int i = 1; i <= layout.bus_count(); ++i) {
        s.v[i - 1] = x[layout.v(t, i)];
        const auto idx = layout.theta(t, i);
        if (idx >= 0) s.theta[i - 1] = x[idx];
    }
    return s;
}

}  // namespace

void MeasurementModel::eval_h_snapshot(const Eigen::VectorXd& x, int t, Eigen::Ref<Eigen::VectorXd> out) const
{
    const auto s = snapshot_view(layout_, x, t);
    const int K = layout_.pair_count();
    Eigen::VectorXd p, q;
    const bool need_pq = !plan_.buses[0].empty() || !plan_.buses[1].empty();
    if (need_pq) injections(set_, x.head(K), x.segment(K, K), s.v, s.theta, p, q);
    Eigen::Index r = 0;
    for (int bus : plan_.buses[0]) out[r++] = p[bus - 1];
    for (int bus : plan_.buses[1]) out[r++] = q[bus - 1];
    for (int bus : plan_.buses[2]) out[r++] = s.v[bus - 1];
    for (int bus : plan_.buses[3]) out[r++] = s.theta[bus - 1];
}

Eigen::VectorXd MeasurementModel::eval_h(const Eigen::VectorXd& x) const
{
    const int per = rows_per_snapshot();
    Eigen::VectorXd h(measurement_count());
    for (int t = 0; t < layout_.snapshots(); ++t) eval_h_snapshot(x, t, h.segment(static_cast<Eigen::Index>(t) * per, per));
    return h;
}

MeasurementModel::SnapshotJacobian MeasurementModel::eval_jacobian_snapshot(const Eigen::VectorXd& x, int t) const
{
    const auto s = snapshot_view(layout_, x, t);
    const int K = layout_.pair_count();
    const int rows = rows_per_snapshot();
    SnapshotJacobian jac;
    jac.state = Eigen::MatrixXd::Zero(rows, layout_.block_width());
    jac.admittance.resize(rows, 2 * K);

    std::vector<Eigen::Triplet<double>> trip;
    std::size_t reserve = 0;
    for (int q = 0; q < 2; ++q)
        for (int bus : plan_.buses[q]) reserve += 2 * incident_[bus - 1].size();
    trip.reserve(reserve);

    auto put_state = [&](Eigen::Index row, Eigen::Index local, double value) {
        if (local >= 0) jac.state(row, local) += value;
    };

    Eigen::Index r = 0;
    for (int q = 0; q < 2; ++q) {
        for (int bus : plan_.buses[q]) {
            const int a = bus - 1;
            for (int k : incident_[a]) {
                const int o = (set_[k].from - 1 == a) ? set_[k].to - 1 : set_[k].from - 1;
                const LineEnd e = line_end(x[k], x[K + k], s.v[a], s.v[o], s.theta[a], s.theta[o]);
                const auto& d = q == 0 ? e.dp : e.dq;
                trip.emplace_back(r, k, q == 0 ? e.dp_dg : e.dq_dg);
                trip.emplace_back(r, K + k, q == 0 ? e.dp_db : e.dq_db);
                put_state(r, layout_.local_v(a + 1), d[0]);
                put_state(r, layout_.local_v(o + 1), d[1]);
                put_state(r, layout_.local_theta(a + 1), d[2]);
                put_state(r, layout_.local_theta(o + 1), d[3]);
            }
            ++r;
        }
    }
    for (int bus : plan_.buses[2]) put_state(r++, layout_.local_v(bus), 1.0);
    for (int bus : plan_.buses[3]) put_state(r++, layout_.local_theta(bus), 1.0);
    jac.admittance.setFromTriplets(trip.begin(), trip.end());
    return jac;
}

Eigen::MatrixXd MeasurementModel::eval_jacobian_dense(const Eigen::VectorXd& x) const
{
    const int per = rows_per_snapshot();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(measurement_count(), layout_.size());
    for (int t = 0; t < layout_.snapshots(); ++t) {
        const auto jac = eval_jacobian_snapshot(x, t);
        const Eigen::Index row0 = static_cast<Eigen::Index>(t) * per;
        H.block(row0, 0, per, layout_.admittance_size()) = Eigen::MatrixXd(jac.admittance);
        H.block(row0, layout_.block_offset(t), per, layout_.block_width()) = jac.state;
    }
    return H;
}

Residuals eval_residuals(const MeasurementModel& model, const Eigen::VectorXd& x, const MeasurementTensor& z)
{
    Residuals res;
    res.r = z.z - model.eval_h(x);
    res.weighted_loss = res.r.cwiseQuotient(z.sigma).squaredNorm();
    return res;
}

double eval_loss(const MeasurementModel& model, const Eigen::VectorXd& x, const MeasurementTensor& z)
{
    const int per = model.rows_per_snapshot();
    Eigen::VectorXd h(per);
    double loss = 0.0;
    for (int t = 0; t < model.layout().snapshots(); ++t) {
        model.eval_h_snapshot(x, t, h);
        const Eigen::Index off = static_cast<Eigen::Index>(t) * per;
        loss += (z.z.segment(off, per) - h).cwiseQuotient(z.sigma.segment(off, per)).squaredNorm();
    }
    return loss;
}

Eigen::VectorXd eval_loss_gradient(const MeasurementModel& model, const Eigen::VectorXd& x, const MeasurementTensor& z)
{
    const auto& layout = model.layout();
    const int per = model.rows_per_snapshot();
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.size());
    Eigen::VectorXd h(per);
    for (int t = 0; t < layout.snapshots(); ++t) {
        const Eigen::Index off = static_cast<Eigen::Index>(t) * per;
        model.eval_h_snapshot(x, t, h);
        const Eigen::VectorXd wr =
            2.0 * (h - z.z.segment(off, per)).cwiseQuotient(z.sigma.segment(off, per).cwiseAbs2());
        const auto jac = model.eval_jacobian_snapshot(x, t);
        grad.head(layout.admittance_size()) += jac.admittance.transpose() * wr;
        grad.segment(layout.block_offset(t), layout.block_width()) += jac.state.transpose() * wr;
    }
    return grad;
}

}  // namespace tae

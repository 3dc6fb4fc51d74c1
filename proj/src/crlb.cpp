#include "tae/crlb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <json.hpp>

namespace tae {

namespace {

// Adds H_t^T W H_t for one snapshot; optionally the loss gradient contribution.
void accumulate_snapshot(const MeasurementModel& model, const Eigen::VectorXd& x, int t, const Eigen::VectorXd& weight,
                         FisherBlocks& blocks, const Eigen::VectorXd* weighted_residual, Eigen::VectorXd* grad)
{
    const auto& layout = model.layout();
    const auto jac = model.eval_jacobian_snapshot(x, t);
    const auto& ha = jac.admittance;
    const auto& hs = jac.state;
    const Eigen::Index w = layout.block_width();

    Eigen::MatrixXd at = Eigen::MatrixXd::Zero(layout.admittance_size(), w);
    for (Eigen::Index r = 0; r < ha.outerSize(); ++r) {
        const double wr = weight[r];
        if (wr == 0.0) continue;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator a(ha, r); a; ++a) {
            const double va = wr * a.value();
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator c(ha, r); c; ++c)
                blocks.aa(a.col(), c.col()) += va * c.value();
            at.row(a.col()) += va * hs.row(r);
        }
    }
    blocks.at.push_back(std::move(at));
    blocks.tt.push_back(hs.transpose() * weight.asDiagonal() * hs);

    if (grad) {
        grad->head(layout.admittance_size()) += ha.transpose() * (*weighted_residual);
        grad->segment(layout.block_offset(t), w) += hs.transpose() * (*weighted_residual);
    }
}

}  // namespace

FisherBlocks assemble_fisher_blocks(const MeasurementModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& sigma)
{
    const auto& layout = model.layout();
    const int per = model.rows_per_snapshot();
    FisherBlocks blocks;
    blocks.aa = Eigen::MatrixXd::Zero(layout.admittance_size(), layout.admittance_size());
    blocks.at.reserve(static_cast<std::size_t>(layout.snapshots()));
    blocks.tt.reserve(static_cast<std::size_t>(layout.snapshots()));
    for (int t = 0; t < layout.snapshots(); ++t) {
        const Eigen::VectorXd weight = sigma.segment(static_cast<Eigen::Index>(t) * per, per).cwiseAbs2().cwiseInverse();
        accumulate_snapshot(model, x, t, weight, blocks, nullptr, nullptr);
    }
    return blocks;
}

FisherBlocks assemble_fisher_blocks(const MeasurementModel& model, const Eigen::VectorXd& x,
                                    const MeasurementTensor& z, Eigen::VectorXd& loss_gradient)
{
    const auto& layout = model.layout();
    const int per = model.rows_per_snapshot();
    FisherBlocks blocks;
    blocks.aa = Eigen::MatrixXd::Zero(layout.admittance_size(), layout.admittance_size());
    loss_gradient = Eigen::VectorXd::Zero(layout.size());
    Eigen::VectorXd h(per);
    for (int t = 0; t < layout.snapshots(); ++t) {
        const Eigen::Index off = static_cast<Eigen::Index>(t) * per;
        const Eigen::VectorXd weight = z.sigma.segment(off, per).cwiseAbs2().cwiseInverse();
        model.eval_h_snapshot(x, t, h);
        const Eigen::VectorXd wres = 2.0 * weight.cwiseProduct(h - z.z.segment(off, per));
        accumulate_snapshot(model, x, t, weight, blocks, &wres, &loss_gradient);
    }
    return blocks;
}

ArrowheadSolver::ArrowheadSolver(const FisherBlocks& blocks, double rel_cutoff) : blocks_(&blocks), schur_(blocks.aa)
{
    const int T = blocks.snapshots();
    tt_pinv_.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) tt_pinv_.emplace_back(blocks.tt[t], rel_cutoff);

    // F_a = F_aa - sum_t (F_at W_t)(F_at W_t)^T with F_tt^+ = W_t W_t^T; snapshots batched
    // into one rank update per chunk, in fixed order.
    const Eigen::Index A = blocks.aa.rows();
    constexpr int kChunk = 16;
    for (int t0 = 0; t0 < T; t0 += kChunk) {
        const int t1 = std::min(T, t0 + kChunk);
        std::vector<Eigen::MatrixXd> parts;
        Eigen::Index cols = 0;
        for (int t = t0; t < t1; ++t) {
            parts.push_back(blocks.at[t] * tt_pinv_[t].half());
            cols += parts.back().cols();
        }
        Eigen::MatrixXd c(A, cols);
        Eigen::Index pos = 0;
        for (auto& p : parts) {
            c.middleCols(pos, p.cols()) = p;
            pos += p.cols();
        }
        schur_.selfadjointView<Eigen::Lower>().rankUpdate(c, -1.0);
    }
    schur_ = schur_.selfadjointView<Eigen::Lower>();
    schur_pinv_ = SymmetricPinv(schur_, rel_cutoff);
}

Eigen::VectorXd ArrowheadSolver::solve(const Eigen::VectorXd& rhs) const
{
    const auto& b = *blocks_;
    const Eigen::Index A = b.aa.rows();
    const int T = b.snapshots();
    const Eigen::Index w = T > 0 ? b.tt[0].rows() : 0;

    Eigen::VectorXd out(rhs.size());
    Eigen::VectorXd reduced = rhs.head(A);
    for (int t = 0; t < T; ++t) reduced -= b.at[t] * tt_pinv_[t].solve(Eigen::VectorXd(rhs.segment(A + t * w, w)));
    out.head(A) = schur_pinv_.solve(reduced);
    for (int t = 0; t < T; ++t) {
        const Eigen::VectorXd local = rhs.segment(A + t * w, w) - b.at[t].transpose() * out.head(A);
        out.segment(A + t * w, w) = tt_pinv_[t].solve(local);
    }
    return out;
}

Eigen::VectorXd ArrowheadSolver::state_sigma() const
{
    const auto& b = *blocks_;
    const Eigen::Index A = b.aa.rows();
    const int T = b.snapshots();
    const Eigen::Index w = T > 0 ? b.tt[0].rows() : 0;
    Eigen::VectorXd var(A + T * w);
    var.head(A) = schur_pinv_.diagonal();
    // Block t of F^-1: F_tt^+ + X_t F_a^+ X_t^T with X_t = F_tt^+ F_at^T.
    const Eigen::MatrixXd fa_half = schur_pinv_.half();
    for (int t = 0; t < T; ++t) {
        const Eigen::MatrixXd x = tt_pinv_[t].solve(Eigen::MatrixXd(b.at[t].transpose()));
        var.segment(A + t * w, w) = tt_pinv_[t].diagonal() + (x * fa_half).rowwise().squaredNorm();
    }
    return var.cwiseMax(0.0).cwiseSqrt();
}

AdmittanceCrlb crlb_admittance(const FisherBlocks& blocks, double rel_cutoff)
{
    const ArrowheadSolver solver(blocks, rel_cutoff);
    AdmittanceCrlb out;
    out.covariance = solver.schur_pinv().matrix();
    out.sigma = solver.schur_pinv().diagonal().cwiseMax(0.0).cwiseSqrt();
    out.rank = solver.schur_pinv().rank();
    out.null_dominant = solver.schur_pinv().null_dominant();
    return out;
}

CrlbReport precision_limits(const Eigen::VectorXd& sigma_cr, const NetworkCase& net, const CandidateSet& set)
{
    constexpr double kZero = 1e-9;
    const auto K = static_cast<Eigen::Index>(set.size());
    CrlbReport rep;
    rep.admittance_dim = 2 * K;
    double log_sum = 0.0;
    int log_count = 0;
    for (const auto& br : net.branches) {
        const auto k = set.index_of(br.pair);
        bool unidentifiable = !k.has_value();
        if (k) {
            const auto ki = static_cast<Eigen::Index>(*k);
            for (const auto& [param, value, sig] :
                 {std::tuple{'g', br.g, sigma_cr[ki]}, std::tuple{'b', br.b, sigma_cr[K + ki]}}) {
                rep.bounds.push_back({br.pair, param, value, sig});
                if (std::abs(value) < kZero) continue;
                if (sig >= std::abs(value)) unidentifiable = true;
                log_sum += std::log(sig / std::abs(value));
                ++log_count;
            }
        }
        if (unidentifiable) rep.unidentifiable_branches.push_back(br.pair);
    }
    const auto branches = static_cast<double>(net.branches.size());
    rep.topology_limit_pct = branches > 0 ? 100.0 * static_cast<double>(rep.unidentifiable_branches.size()) / branches : 0.0;
    rep.admittance_limit_pct = log_count > 0 ? 100.0 * std::exp(log_sum / log_count) : 0.0;
    return rep;
}

std::string to_json_text(const CrlbReport& report)
{
    nlohmann::json j;
    j["topology_limit_pct"] = report.topology_limit_pct;
    j["admittance_limit_pct"] = report.admittance_limit_pct;
    j["fisher_rank"] = report.fisher_rank;
    j["admittance_dim"] = report.admittance_dim;
    j["unidentifiable_branches"] = nlohmann::json::array();
    for (const auto& p : report.unidentifiable_branches) j["unidentifiable_branches"].push_back({p.from, p.to});
    j["bounds"] = nlohmann::json::array();
    for (const auto& b : report.bounds)
        j["bounds"].push_back({{"from", b.pair.from},
                               {"to", b.pair.to},
                               {"param", std::string(1, b.param)},
                               {"true_value", b.true_value},
                               {"sigma_cr", b.sigma_cr}});
    return j.dump(2);
}

void write_bounds_csv(std::ostream& out, const CrlbReport& report)
{
    out << "branch,param,true_value,sigma_cr\n";
    char buf[160];
    for (const auto& b : report.bounds) {
        std::snprintf(buf, sizeof buf, "%d-%d,%c,%.17g,%.17g\n", b.pair.from, b.pair.to, b.param, b.true_value,
                      b.sigma_cr);
        out << buf;
    }
}

}  // namespace tae

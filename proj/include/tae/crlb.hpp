// Precision limits of joint topology and admittance estimation.
//
// The Fisher matrix F = H^T diag(sigma^-2) H has an arrowhead structure: one
// admittance block coupled to per-snapshot state blocks that never couple to
// each other. The admittance bound is the pseudo-inverse of the Schur complement
//   F_a = F_aa - sum_t F_at F_tt^+ F_at^T
// accumulated one snapshot at a time, so memory does not grow with T.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tae/linalg.hpp"
#include "tae/mlmodel.hpp"
#include "tae/netmodel.hpp"

namespace tae {

struct FisherBlocks {
    Eigen::MatrixXd aa;               // A x A, A = 2K
    std::vector<Eigen::MatrixXd> at;  // per snapshot, A x w
    std::vector<Eigen::MatrixXd> tt;  // per snapshot, w x w

    int snapshots() const { return static_cast<int>(tt.size()); }
};

/// Blocks of H^T diag(sigma^-2) H at `x`. `sigma` is the stacked noise std.
FisherBlocks assemble_fisher_blocks(const MeasurementModel& model, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& sigma);

/// As above, also returning the loss gradient 2 H^T diag(sigma^-2) (h(x) - z) from the same pass.
FisherBlocks assemble_fisher_blocks(const MeasurementModel& model, const Eigen::VectorXd& x,
                                    const MeasurementTensor& z, Eigen::VectorXd& loss_gradient);

/// Relative eigenvalue cutoff shared by every pseudo-inverse in this module.
inline constexpr double kPinvCutoff = 1e-12;

/// Factorised arrowhead Fisher matrix: per-snapshot state pseudo-inverses and the
/// pseudo-inverse of the admittance Schur complement.
class ArrowheadSolver {
public:
    /// Keeps a reference to `blocks`, which must outlive the solver.
    explicit ArrowheadSolver(const FisherBlocks& blocks, double rel_cutoff = kPinvCutoff);
    ArrowheadSolver(FisherBlocks&&, double = kPinvCutoff) = delete;

    const Eigen::MatrixXd& schur() const { return schur_; }
    const SymmetricPinv& schur_pinv() const { return schur_pinv_; }

    /// x = F^+ rhs evaluated block-wise (exact when F is nonsingular). `rhs` uses the state layout.
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;

    /// Standard deviations sqrt(diag(F^-1)) of every state-vector entry.
    Eigen::VectorXd state_sigma() const;

private:
    const FisherBlocks* blocks_;
    std::vector<SymmetricPinv> tt_pinv_;
    Eigen::MatrixXd schur_;
    SymmetricPinv schur_pinv_;
};

struct AdmittanceCrlb {
    Eigen::MatrixXd covariance;  // pinv(F_a), A x A
    Eigen::VectorXd sigma;       // sqrt of its diagonal
    Eigen::Index rank = 0;
    std::vector<Eigen::Index> null_dominant;  // admittance indices lost to rank deficiency
};

AdmittanceCrlb crlb_admittance(const FisherBlocks& blocks, double rel_cutoff = kPinvCutoff);

struct BranchBound {
    BusPair pair;
    char param;  // 'g' or 'b'
    double true_value;
    double sigma_cr;
};

struct CrlbReport {
    std::vector<BranchBound> bounds;  // true-branch parameters
    double topology_limit_pct = 0.0;
    double admittance_limit_pct = 0.0;
    std::vector<BusPair> unidentifiable_branches;
    Eigen::Index fisher_rank = 0;
    Eigen::Index admittance_dim = 0;
};

/// `sigma_cr` is the admittance std (length 2K over `set`). A true branch is
/// unidentifiable when either of its parameters has sigma_cr >= |true value|;
/// branches missing from `set` count as unidentifiable.
CrlbReport precision_limits(const Eigen::VectorXd& sigma_cr, const NetworkCase& net, const CandidateSet& set);

std::string to_json_text(const CrlbReport& report);
/// Columns: branch,param,true_value,sigma_cr
void write_bounds_csv(std::ostream& out, const CrlbReport& report);

}  // namespace tae

#pragma once

#include <vector>

#include <Eigen/Dense>

namespace tae {

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `rel_cutoff * max eigenvalue` are treated as zero. A Cholesky
/// factorisation is used instead of the eigendecomposition when it succeeds with a
/// reciprocal condition estimate well above the cutoff; both give the same inverse then.
class SymmetricPinv {
public:
    SymmetricPinv() = default;
    explicit SymmetricPinv(const Eigen::MatrixXd& a, double rel_cutoff = 1e-12, bool allow_cholesky = true);

    Eigen::Index dim() const { return dim_; }
    Eigen::Index rank() const { return rank_; }
    bool full_rank() const { return rank_ == dim_; }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
    Eigen::MatrixXd matrix() const;
    Eigen::VectorXd diagonal() const;
    /// W with pinv = W W^T (dim x rank).
    Eigen::MatrixXd half() const;

    /// Coordinates whose weight in the discarded eigenspace exceeds `share`.
    std::vector<Eigen::Index> null_dominant(double share = 0.5) const;

private:
    Eigen::Index dim_ = 0, rank_ = 0;
    bool cholesky_ = false;
    Eigen::MatrixXd l_inv_;      // Cholesky path: inverse of the lower factor
    Eigen::MatrixXd vectors_;    // eigen path: kept eigenvectors
    Eigen::VectorXd inv_values_;
    Eigen::MatrixXd null_vectors_;
};

}  // namespace tae

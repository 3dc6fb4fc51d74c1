#include "tae/linalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace tae {

namespace {
// Cholesky is only trusted when it cannot have hidden a truncated eigenvalue.
constexpr double kCholeskyRcond = 1e-8;
}  // namespace

SymmetricPinv::SymmetricPinv(const Eigen::MatrixXd& a, double rel_cutoff, bool allow_cholesky) : dim_(a.rows())
{
    if (dim_ == 0) return;
    if (allow_cholesky) {
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() == Eigen::Success && llt.rcond() > std::max(kCholeskyRcond, rel_cutoff)) {
            cholesky_ = true;
            rank_ = dim_;
            l_inv_ = llt.matrixL().solve(Eigen::MatrixXd::Identity(dim_, dim_));
            return;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
    const double top = values.cwiseAbs().maxCoeff();
    const double cut = rel_cutoff * top;
    Eigen::Index first = 0;
    while (first < dim_ && !(values[first] > cut)) ++first;
    rank_ = dim_ - first;
    vectors_ = eig.eigenvectors().rightCols(rank_);
    inv_values_ = values.tail(rank_).cwiseInverse();
    null_vectors_ = eig.eigenvectors().leftCols(first);
}

Eigen::VectorXd SymmetricPinv::solve(const Eigen::VectorXd& rhs) const
{
    if (dim_ == 0) return rhs;
    if (cholesky_) return l_inv_.transpose() * (l_inv_ * rhs);
    return vectors_ * inv_values_.cwiseProduct(vectors_.transpose() * rhs);
}

Eigen::MatrixXd SymmetricPinv::solve(const Eigen::MatrixXd& rhs) const
{
    if (dim_ == 0) return rhs;
    if (cholesky_) return l_inv_.transpose() * (l_inv_ * rhs);
    return vectors_ * (inv_values_.asDiagonal() * (vectors_.transpose() * rhs));
}

Eigen::MatrixXd SymmetricPinv::matrix() const
{
    if (cholesky_) return l_inv_.transpose() * l_inv_;
    return vectors_ * inv_values_.asDiagonal() * vectors_.transpose();
}

Eigen::VectorXd SymmetricPinv::diagonal() const
{
    if (cholesky_) return l_inv_.colwise().squaredNorm().transpose();
    return (vectors_ * inv_values_.cwiseSqrt().asDiagonal()).rowwise().squaredNorm();
}

Eigen::MatrixXd SymmetricPinv::half() const
{
    if (cholesky_) return l_inv_.transpose();
    return vectors_ * inv_values_.cwiseSqrt().asDiagonal();
}

std::vector<Eigen::Index> SymmetricPinv::null_dominant(double share) const
{
    std::vector<Eigen::Index> out;
    if (null_vectors_.cols() == 0) return out;
    const Eigen::VectorXd weight = null_vectors_.rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < weight.size(); ++i)
        if (weight[i] > share) out.push_back(i);
    return out;
}

}  // namespace tae

// CPS estimator: CRLB-rescaled momentum steps, a Fisher-based second-order
// direction, a hybrid line search blending the two, and an outer loop that
// prunes small admittances once the inner iteration has converged.
#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "tae/mlmodel.hpp"
#include "tae/netmodel.hpp"

namespace tae {

struct PruneRule {
    bool enabled = true;
    double tau_abs = 1e-3;  // p.u.
    double tau_rel = 1e-3;  // times the median nonzero |y|
    /// Also prune when sqrt((g/sigma_g)^2 + (b/sigma_b)^2) falls below this, with the
    /// sigmas taken from the CRLB at the converged point. 0 disables the test.
    double min_significance = 4.0;
    bool expect_radial = false;  // warn when pruning disconnects the network
};

struct CpsConfig {
    double alpha = 0.9;
    int r0 = -5;
    int r_max = 20;
    double beta = 5.0;
    double eta = 0.01;
    double gamma = 1e-5;
    int max_inner_iters = 500;
    int max_outer_rounds = 10;
    PruneRule prune;

    bool phase1 = true;
    bool second_order = true;          // false: d = 0, pure first-order iterates
    bool phase2_ascending = false;     // scan w2 small to large instead of large to small
    std::optional<double> fixed_blend;  // fixed w2, accepted without a decrease test
    bool stop_on_small_step = true;    // the max|dx| <= gamma termination
    /// Also stop once an accepted step lowers the loss by at most this fraction
    /// (0 disables). Ill-conditioned directions can otherwise crawl below gamma's reach.
    double loss_rtol = 1e-9;
    double max_seconds = 0.0;  // wall-time cap per run, all outer rounds together; 0 for none

    /// Throws std::invalid_argument.
    void validate() const;
};

/// Something CPS can minimise. Entries are grouped (0 admittance, 1 V, 2 theta)
/// for the per-group gradient rescaling.
class Objective {
public:
    virtual ~Objective() = default;

    virtual Eigen::Index size() const = 0;
    virtual const std::vector<int>& groups() const = 0;
    virtual double loss(const Eigen::VectorXd& x) const = 0;

    struct Local {
        Eigen::VectorXd gradient;
        Eigen::VectorXd direction;  // empty when not requested
    };
    /// Loss gradient and, on request, the second-order direction -F^+ (gradient / 2).
    virtual Local local(const Eigen::VectorXd& x, bool with_direction) const = 0;

    /// Lower-bound std of every entry at `x`.
    virtual Eigen::VectorXd crlb_sigma(const Eigen::VectorXd& x) const = 0;
};

/// Weighted least squares over a measurement model.
class TaeObjective final : public Objective {
public:
    /// Both arguments must outlive the objective.
    TaeObjective(const MeasurementModel& model, const MeasurementTensor& z);

    Eigen::Index size() const override { return model_->layout().size(); }
    const std::vector<int>& groups() const override { return groups_; }
    double loss(const Eigen::VectorXd& x) const override;
    Local local(const Eigen::VectorXd& x, bool with_direction) const override;
    Eigen::VectorXd crlb_sigma(const Eigen::VectorXd& x) const override;

private:
    const MeasurementModel* model_;
    const MeasurementTensor* z_;
    std::vector<int> groups_;
};

/// Loss (x - c)^T A (x - c) with A symmetric positive definite.
class QuadraticObjective final : public Objective {
public:
    QuadraticObjective(Eigen::MatrixXd a, Eigen::VectorXd center, std::vector<int> groups);

    Eigen::Index size() const override { return center_.size(); }
    const std::vector<int>& groups() const override { return groups_; }
    double loss(const Eigen::VectorXd& x) const override;
    Local local(const Eigen::VectorXd& x, bool with_direction) const override;
    Eigen::VectorXd crlb_sigma(const Eigen::VectorXd& x) const override;

private:
    Eigen::MatrixXd a_;
    Eigen::VectorXd center_;
    std::vector<int> groups_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

struct OptimizerState {
    Eigen::VectorXd x;
    Eigen::VectorXd m;  // descent-direction accumulator
    double loss = 0.0;
    std::vector<double> loss_history;
    std::array<double, 3> w_cr{};
    std::array<double, 3> w_g{};
};

/// x = x0, m = 0, w_cr from the CRLB group means at x0.
OptimizerState init_optimizer_state(const Objective& f, const Eigen::VectorXd& x0);

/// Rescales `gradient` per group to the CRLB scale and folds it into the moment:
/// m <- alpha m - (1 - alpha) g_hat. Returns g_hat.
Eigen::VectorXd first_order_step(OptimizerState& s, const std::vector<int>& groups, const Eigen::VectorXd& gradient,
                                 const CpsConfig& cfg);

struct LineSearchResult {
    bool improved = false;
    double w2 = 0.0;          // accepted blend weight, 0 for a phase-1 point
    double step_scale = 0.0;  // 1 / beta^r of the accepted phase-1 step
    double max_dx = 0.0;
    int evaluations = 0;
};

/// One hybrid search from s.x. Updates s.x, s.loss, s.m. An empty or non-finite
/// `d` skips the second phase.
LineSearchResult hybrid_line_search(const Objective& f, OptimizerState& s, const Eigen::VectorXd& gradient,
                                    const Eigen::VectorXd& d, const CpsConfig& cfg);

struct TraceRow {
    int round;
    int iter;
    double loss;
    double w2;
    double step_scale;
    double max_dx;
};

struct InnerRun {
    Eigen::VectorXd x;
    std::vector<double> loss_history;  // includes the starting loss
    std::vector<TraceRow> trace;
    int iterations = 0;  // accepted steps
    bool converged = false;
    bool stalled = false;
    bool diverged = false;
    bool timed_out = false;
    double max_loss = 0.0;
};

/// Inner iteration until max|dx| <= gamma (or a negligible loss change), a stall,
/// the iteration cap or the time cap.
InnerRun run_cps_inner(const Objective& f, const Eigen::VectorXd& x0, const CpsConfig& cfg, int round = 0);

/// Pure Newton iterates x <- x + d, no line search.
InnerRun run_newton_inner(const Objective& f, const Eigen::VectorXd& x0, const CpsConfig& cfg);

struct TopologyUpdate {
    CandidateSet set;
    StateVector x;
    std::vector<BusPair> removed;
};

/// Drops pairs whose |y| is below the rule's thresholds. `sigma_adm` (length 2K, may be
/// empty) enables the significance test.
TopologyUpdate topology_update(const StateVector& x, const CandidateSet& set, const PruneRule& rule,
                               const Eigen::VectorXd& sigma_adm = {});

struct EstimationResult {
    CandidateSet set;
    Eigen::VectorXd g, b;
    Eigen::MatrixXd v, theta;  // T x N
    std::vector<double> loss_history;
    std::vector<TraceRow> trace;
    std::vector<int> inner_iterations;  // per round
    int rounds = 0;
    bool converged = false;
    bool stalled = false;
    bool diverged = false;
    bool timed_out = false;
    double final_loss = 0.0;
    double max_loss = 0.0;
};

EstimationResult cps_estimate(const MeasurementTensor& z, const MeasurementPlan& plan, const CandidateSet& set,
                              const StateVector& x0, const CpsConfig& cfg);

/// Phase-1-only iterates on a fixed candidate set.
EstimationResult baseline_first_order(const MeasurementTensor& z, const MeasurementPlan& plan, const CandidateSet& set,
                                      const StateVector& x0, const CpsConfig& cfg);
/// x <- x + d on a fixed candidate set.
EstimationResult baseline_second_order(const MeasurementTensor& z, const MeasurementPlan& plan,
                                       const CandidateSet& set, const StateVector& x0, const CpsConfig& cfg);

/// Columns: round,iter,loss,w2,step_scale,max_dx
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace tae

#include "tae/cps.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "tae/crlb.hpp"
#include "tae/log.hpp"
#include "tae/powerflow.hpp"

namespace tae {

void CpsConfig::validate() const
{
    auto fail = [](const std::string& what) { throw std::invalid_argument("cps config: " + what); };
    if (!(alpha >= 0.0 && alpha < 1.0)) fail("alpha must lie in [0, 1)");
    if (!(beta > 1.0)) fail("beta must exceed 1");
    if (!(eta > 0.0 && eta < 1.0)) fail("eta must lie in (0, 1)");
    if (!(gamma > 0.0)) fail("gamma must be positive");
    if (r0 >= r_max) fail("r0 must be below r_max");
    if (max_seconds < 0.0) fail("max_seconds must be nonnegative");
    if (max_inner_iters < 1 || max_outer_rounds < 1) fail("iteration caps must be positive");
    if (fixed_blend && !(*fixed_blend >= 0.0 && *fixed_blend <= 1.0)) fail("fixed_blend must lie in [0, 1]");
    if (loss_rtol < 0.0) fail("loss_rtol must be nonnegative");
    if (prune.tau_abs < 0.0 || prune.tau_rel < 0.0 || prune.min_significance < 0.0)
        fail("prune thresholds must be nonnegative");
}

TaeObjective::TaeObjective(const MeasurementModel& model, const MeasurementTensor& z)
    : model_(&model), z_(&z), groups_(model.layout().groups())
{
    if (z.size() != model.measurement_count())
        throw std::invalid_argument("measurement vector does not match the model");
}

double TaeObjective::loss(const Eigen::VectorXd& x) const { return eval_loss(*model_, x, *z_); }

Objective::Local TaeObjective::local(const Eigen::VectorXd& x, bool with_direction) const
{
    Local out;
    if (!with_direction) {
        out.gradient = eval_loss_gradient(*model_, x, *z_);
        return out;
    }
    const FisherBlocks blocks = assemble_fisher_blocks(*model_, x, *z_, out.gradient);
    const ArrowheadSolver solver(blocks);
    out.direction = -solver.solve(0.5 * out.gradient);
    return out;
}

Eigen::VectorXd TaeObjective::crlb_sigma(const Eigen::VectorXd& x) const
{
    const FisherBlocks blocks = assemble_fisher_blocks(*model_, x, z_->sigma);
    return ArrowheadSolver(blocks).state_sigma();
}

QuadraticObjective::QuadraticObjective(Eigen::MatrixXd a, Eigen::VectorXd center, std::vector<int> groups)
    : a_(std::move(a)), center_(std::move(center)), groups_(std::move(groups)), llt_(a_)
{
    if (a_.rows() != center_.size() || a_.cols() != center_.size() ||
        static_cast<Eigen::Index>(groups_.size()) != center_.size())
        throw std::invalid_argument("quadratic objective: size mismatch");
    if (llt_.info() != Eigen::Success) throw std::invalid_argument("quadratic objective: matrix not positive definite");
}

double QuadraticObjective::loss(const Eigen::VectorXd& x) const
{
    const Eigen::VectorXd e = x - center_;
    return e.dot(a_ * e);
}

Objective::Local QuadraticObjective::local(const Eigen::VectorXd& x, bool with_direction) const
{
    Local out;
    out.gradient = 2.0 * a_ * (x - center_);
    if (with_direction) out.direction = -llt_.solve(0.5 * out.gradient);
    return out;
}

Eigen::VectorXd QuadraticObjective::crlb_sigma(const Eigen::VectorXd&) const
{
    const Eigen::MatrixXd inv = llt_.solve(Eigen::MatrixXd::Identity(a_.rows(), a_.cols()));
    return inv.diagonal().cwiseSqrt();
}

namespace {

std::array<double, 3> group_means(const std::vector<int>& groups, const Eigen::VectorXd& v)
{
    std::array<double, 3> sum{}, count{};
    for (std::size_t i = 0; i < groups.size(); ++i) {
        sum[groups[i]] += std::abs(v[static_cast<Eigen::Index>(i)]);
        count[groups[i]] += 1.0;
    }
    for (int k = 0; k < 3; ++k) sum[k] = count[k] > 0 ? sum[k] / count[k] : 0.0;
    return sum;
}

bool usable_direction(const Eigen::VectorXd& d)
{
    return d.size() > 0 && d.allFinite() && d.cwiseAbs().maxCoeff() > 0.0;
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

bool past_deadline(std::chrono::steady_clock::time_point start, const CpsConfig& cfg)
{
    return cfg.max_seconds > 0.0 &&
           std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > cfg.max_seconds;
}

}  // namespace

OptimizerState init_optimizer_state(const Objective& f, const Eigen::VectorXd& x0)
{
    OptimizerState s;
    s.x = x0;
    s.m = Eigen::VectorXd::Zero(x0.size());
    s.loss = f.loss(x0);
    s.loss_history.push_back(s.loss);
    s.w_cr = group_means(f.groups(), f.crlb_sigma(x0));
    return s;
}

Eigen::VectorXd first_order_step(OptimizerState& s, const std::vector<int>& groups, const Eigen::VectorXd& gradient,
                                 const CpsConfig& cfg)
{
    s.w_g = group_means(groups, gradient);
    std::array<double, 3> factor{};
    for (int k = 0; k < 3; ++k) factor[k] = s.w_g[k] > 0.0 ? s.w_cr[k] / s.w_g[k] : 0.0;
    Eigen::VectorXd g_hat(gradient.size());
    for (Eigen::Index i = 0; i < gradient.size(); ++i) g_hat[i] = gradient[i] * factor[groups[i]];
    s.m = cfg.alpha * s.m - (1.0 - cfg.alpha) * g_hat;
    return g_hat;
}

LineSearchResult hybrid_line_search(const Objective& f, OptimizerState& s, const Eigen::VectorXd& gradient,
                                    const Eigen::VectorXd& d, const CpsConfig& cfg)
{
    LineSearchResult res;
    const Eigen::VectorXd x_prev = s.x;
    const double l_prev = s.loss;
    const bool have_d = cfg.second_order && usable_direction(d);

    auto finish = [&](const Eigen::VectorXd& step, double loss) {
        s.x = x_prev + step;
        s.loss = loss;
        s.loss_history.push_back(loss);
        res.improved = true;
        res.max_dx = inf_norm(step);
    };

    if (cfg.fixed_blend) {
        const double w2 = have_d ? *cfg.fixed_blend : 0.0;
        Eigen::VectorXd step = (1.0 - w2) * s.m;
        if (have_d) step += w2 * d;
        const double loss = f.loss(x_prev + step);
        ++res.evaluations;
        res.w2 = w2;
        if (std::isfinite(loss)) finish(step, loss);
        return res;
    }

    Eigen::VectorXd best_step;
    double best_loss = l_prev;
    double best_w2 = 0.0;
    auto evaluate = [&](const Eigen::VectorXd& step, double w2) {
        const double loss = f.loss(x_prev + step);
        ++res.evaluations;
        if (std::isfinite(loss) && loss < best_loss) {
            best_loss = loss;
            best_step = step;
            best_w2 = w2;
        }
        return loss;
    };
    auto sufficient = [&](const Eigen::VectorXd& step, double loss) {
        const double decrease = l_prev - loss;
        return std::isfinite(loss) && decrease > 0.0 && decrease >= cfg.eta * std::abs(gradient.dot(step));
    };

    // Phase 1: largest moment step passing the decrease test.
    bool phase1_ok = false;
    Eigen::VectorXd accepted_step;
    double accepted_loss = l_prev;
    if (cfg.phase1) {
        for (int r = cfg.r0; r <= cfg.r_max; ++r) {
            const double scale = std::pow(cfg.beta, -r);
            const Eigen::VectorXd step = scale * s.m;
            const double loss = evaluate(step, 0.0);
            if (sufficient(step, loss)) {
                phase1_ok = true;
                accepted_step = step;
                accepted_loss = loss;
                res.step_scale = scale;
                s.m = step;
                break;
            }
        }
        if (!phase1_ok) s.m = best_step.size() ? best_step : Eigen::VectorXd::Zero(s.m.size());
    }

    // Phase 2: blends of the moment step and the second-order direction.
    if (have_d) {
        const int count = cfg.r_max - cfg.r0 + 1;
        for (int i = 0; i < count; ++i) {
            const int r = cfg.phase2_ascending ? cfg.r0 + i : cfg.r_max - i;
            const double br = std::pow(cfg.beta, r);
            const double w1 = 1.0 / (1.0 + br), w2 = br / (1.0 + br);
            const Eigen::VectorXd step = w1 * s.m + w2 * d;
            const double loss = evaluate(step, w2);
            if (sufficient(step, loss)) {
                res.w2 = w2;
                finish(step, loss);
                return res;
            }
        }
    }

    if (phase1_ok) {
        finish(accepted_step, accepted_loss);
    } else if (best_step.size()) {
        res.w2 = best_w2;
        finish(best_step, best_loss);
    }
    return res;
}

InnerRun run_cps_inner(const Objective& f, const Eigen::VectorXd& x0, const CpsConfig& cfg, int round)
{
    cfg.validate();
    OptimizerState s = init_optimizer_state(f, x0);
    InnerRun run;
    run.max_loss = s.loss;
    const auto& groups = f.groups();
    const auto start = std::chrono::steady_clock::now();
    for (int it = 0; it < cfg.max_inner_iters; ++it) {
        if (past_deadline(start, cfg)) {
            run.timed_out = true;
            break;
        }
        const bool fresh = s.m.cwiseAbs().maxCoeff() == 0.0;
        const Objective::Local local = f.local(s.x, cfg.second_order);
        first_order_step(s, groups, local.gradient, cfg);
        const Eigen::VectorXd& d = local.direction;
        const LineSearchResult ls = hybrid_line_search(f, s, local.gradient, d, cfg);
        if (!ls.improved && !fresh) {
            // Momentum pointed uphill: restart from the plain rescaled gradient.
            s.m.setZero();
            continue;
        }
        if (!ls.improved) {
            run.stalled = true;
            const double d_norm = usable_direction(d) ? inf_norm(d) : 0.0;
            run.converged = std::max(inf_norm(s.m), d_norm) <= cfg.gamma;
            break;
        }
        ++run.iterations;
        run.max_loss = std::max(run.max_loss, s.loss);
        run.trace.push_back({round, run.iterations, s.loss, ls.w2, ls.step_scale, ls.max_dx});
        const double previous = s.loss_history[s.loss_history.size() - 2];
        if (cfg.stop_on_small_step &&
            (ls.max_dx <= cfg.gamma ||
             (!cfg.fixed_blend && previous - s.loss <= cfg.loss_rtol * std::abs(previous)))) {
            run.converged = true;
            break;
        }
    }
    run.x = std::move(s.x);
    run.loss_history = std::move(s.loss_history);
    return run;
}

InnerRun run_newton_inner(const Objective& f, const Eigen::VectorXd& x0, const CpsConfig& cfg)
{
    cfg.validate();
    InnerRun run;
    run.x = x0;
    double loss = f.loss(x0);
    run.loss_history.push_back(loss);
    run.max_loss = loss;
    const auto start = std::chrono::steady_clock::now();
    for (int it = 0; it < cfg.max_inner_iters; ++it) {
        if (past_deadline(start, cfg)) {
            run.timed_out = true;
            break;
        }
        const Eigen::VectorXd d = f.local(run.x, true).direction;
        if (!d.allFinite()) {
            run.diverged = true;
            break;
        }
        run.x += d;
        loss = f.loss(run.x);
        ++run.iterations;
        const double max_dx = inf_norm(d);
        run.trace.push_back({0, run.iterations, loss, 1.0, 1.0, max_dx});
        run.loss_history.push_back(loss);
        if (!std::isfinite(loss)) {
            run.diverged = true;
            run.max_loss = std::numeric_limits<double>::infinity();
            break;
        }
        run.max_loss = std::max(run.max_loss, loss);
        if (max_dx <= cfg.gamma) {
            run.converged = true;
            break;
        }
    }
    return run;
}

TopologyUpdate topology_update(const StateVector& x, const CandidateSet& set, const PruneRule& rule,
                               const Eigen::VectorXd& sigma_adm)
{
    const auto K = static_cast<Eigen::Index>(set.size());
    const Eigen::VectorXd g = x.g(), b = x.b();
    const Eigen::VectorXd mag = (g.cwiseAbs2() + b.cwiseAbs2()).cwiseSqrt();

    std::vector<double> nonzero;
    for (Eigen::Index k = 0; k < K; ++k)
        if (mag[k] > 0.0) nonzero.push_back(mag[k]);
    double median = 0.0;
    if (!nonzero.empty()) {
        const auto mid = nonzero.begin() + static_cast<std::ptrdiff_t>(nonzero.size() / 2);
        std::nth_element(nonzero.begin(), mid, nonzero.end());
        median = *mid;
    }
    const bool significance = rule.min_significance > 0.0 && sigma_adm.size() == 2 * K;

    std::vector<Eigen::Index> keep;
    TopologyUpdate out;
    for (Eigen::Index k = 0; k < K; ++k) {
        bool drop = rule.enabled && (mag[k] < rule.tau_abs || mag[k] < rule.tau_rel * median);
        if (rule.enabled && !drop && significance) {
            double z2 = 0.0;
            bool finite = true;
            for (const auto& [value, sig] : {std::pair{g[k], sigma_adm[k]}, std::pair{b[k], sigma_adm[K + k]}}) {
                if (sig > 0.0)
                    z2 += (value / sig) * (value / sig);
                else if (value != 0.0)
                    finite = false;
            }
            drop = finite && std::sqrt(z2) < rule.min_significance;
        }
        if (drop)
            out.removed.push_back(set[static_cast<std::size_t>(k)]);
        else
            keep.push_back(k);
    }
    if (out.removed.empty()) {
        out.set = set;
        out.x = x;
        return out;
    }

    std::vector<BusPair> pairs;
    for (auto k : keep) pairs.push_back(set[static_cast<std::size_t>(k)]);
    if (rule.expect_radial && !is_connected(set.bus_count(), pairs))
        warn("topology update disconnects the network (" + std::to_string(out.removed.size()) + " pairs removed)");
    out.set = CandidateSet(set.bus_count(), pairs);

    const StateLayout& old = x.layout;
    const auto K2 = static_cast<int>(keep.size());
    const StateLayout layout(old.bus_count(), old.snapshots(), K2, old.slack_bus(), old.pin_slack());
    out.x.layout = layout;
    out.x.x.resize(layout.size());
    for (int k = 0; k < K2; ++k) {
        out.x.x[layout.g(k)] = g[keep[k]];
        out.x.x[layout.b(k)] = b[keep[k]];
    }
    const Eigen::Index states = old.size() - old.admittance_size();
    out.x.x.tail(states) = x.x.tail(states);
    return out;
}

namespace {

void fill_result(EstimationResult& res, const StateVector& x, const CandidateSet& set)
{
    res.set = set;
    res.g = x.g();
    res.b = x.b();
    res.v = x.v();
    res.theta = x.theta();
}

void append_run(EstimationResult& res, const InnerRun& run)
{
    res.loss_history.insert(res.loss_history.end(), run.loss_history.begin(), run.loss_history.end());
    res.trace.insert(res.trace.end(), run.trace.begin(), run.trace.end());
    res.inner_iterations.push_back(run.iterations);
    res.converged = run.converged;
    res.stalled = run.stalled;
    res.diverged = res.diverged || run.diverged;
    res.timed_out = res.timed_out || run.timed_out;
    res.max_loss = std::max(res.max_loss, run.max_loss);
    if (!run.loss_history.empty()) res.final_loss = run.loss_history.back();
    ++res.rounds;
}

void check_start(const MeasurementPlan& plan, const CandidateSet& set, const StateVector& x0)
{
    const auto& l = x0.layout;
    if (l.bus_count() != plan.bus_count || l.snapshots() != plan.snapshots ||
        l.pair_count() != static_cast<int>(set.size()) || x0.x.size() != l.size())
        throw std::invalid_argument("initial state does not match the plan and candidate set");
}

}  // namespace

EstimationResult cps_estimate(const MeasurementTensor& z, const MeasurementPlan& plan, const CandidateSet& set,
                              const StateVector& x0, const CpsConfig& cfg)
{
    cfg.validate();
    check_start(plan, set, x0);
    EstimationResult res;
    StateVector cur = x0;
    CandidateSet cur_set = set;
    const auto start = std::chrono::steady_clock::now();
    for (int round = 0; round < cfg.max_outer_rounds; ++round) {
        // The time cap covers all rounds together.
        CpsConfig round_cfg = cfg;
        if (cfg.max_seconds > 0.0) {
            round_cfg.max_seconds =
                cfg.max_seconds - std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (round_cfg.max_seconds <= 0.0) {
                res.timed_out = true;
                break;
            }
        }
        const MeasurementModel model(plan, cur_set, cur.layout);
        const TaeObjective f(model, z);
        const InnerRun run = run_cps_inner(f, cur.x, round_cfg, round);
        append_run(res, run);
        cur.x = run.x;
        if (!cfg.prune.enabled || cur_set.empty() || run.timed_out) break;

        Eigen::VectorXd sigma_adm;
        if (cfg.prune.min_significance > 0.0)
            sigma_adm = crlb_admittance(assemble_fisher_blocks(model, cur.x, z.sigma)).sigma;
        TopologyUpdate upd = topology_update(cur, cur_set, cfg.prune, sigma_adm);
        if (upd.removed.empty()) break;
        cur = std::move(upd.x);
        cur_set = std::move(upd.set);
        if (round + 1 == cfg.max_outer_rounds) {
            // Report the loss of the pruned state that is returned.
            res.final_loss = eval_loss(MeasurementModel(plan, cur_set, cur.layout), cur.x, z);
        }
    }
    fill_result(res, cur, cur_set);
    return res;
}

EstimationResult baseline_first_order(const MeasurementTensor& z, const MeasurementPlan& plan, const CandidateSet& set,
                                      const StateVector& x0, const CpsConfig& cfg)
{
    check_start(plan, set, x0);
    CpsConfig c = cfg;
    c.second_order = false;
    c.phase1 = true;
    c.fixed_blend.reset();
    const MeasurementModel model(plan, set, x0.layout);
    const TaeObjective f(model, z);
    EstimationResult res;
    const InnerRun run = run_cps_inner(f, x0.x, c);
    append_run(res, run);
    fill_result(res, unpack_state(x0.layout, run.x), set);
    return res;
}

EstimationResult baseline_second_order(const MeasurementTensor& z, const MeasurementPlan& plan,
                                       const CandidateSet& set, const StateVector& x0, const CpsConfig& cfg)
{
    check_start(plan, set, x0);
    const MeasurementModel model(plan, set, x0.layout);
    const TaeObjective f(model, z);
    EstimationResult res;
    const InnerRun run = run_newton_inner(f, x0.x, cfg);
    append_run(res, run);
    fill_result(res, unpack_state(x0.layout, run.x), set);
    return res;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace)
{
    out << "round,iter,loss,w2,step_scale,max_dx\n";
    char buf[200];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g\n", r.round, r.iter, r.loss, r.w2, r.step_scale,
                      r.max_dx);
        out << buf;
    }
}

}  // namespace tae

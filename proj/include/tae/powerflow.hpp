// Ground-truth operating points and noisy multi-snapshot measurements.
#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tae/netmodel.hpp"

namespace tae {

/// One solved operating point; vectors indexed by bus - 1.
struct Snapshot {
    Eigen::VectorXd v;
    Eigen::VectorXd theta;
    Eigen::VectorXd p;  // net injection (generation positive)
    Eigen::VectorXd q;
};

class PowerFlowError : public std::runtime_error {
public:
    PowerFlowError(const std::string& what, double mismatch = 0.0, int snapshot = -1)
        : std::runtime_error(what), mismatch_(mismatch), snapshot_(snapshot)
    {
    }
    double mismatch() const { return mismatch_; }
    /// Zero-based snapshot index, -1 when not applicable.
    int snapshot() const { return snapshot_; }

private:
    double mismatch_;
    int snapshot_;
};

struct PowerFlowOptions {
    double tolerance = 1e-10;  // max |mismatch|, p.u.
    int max_iterations = 50;
};

/// Polar Newton-Raphson from a flat start. `p_load`/`q_load` are consumptions (p.u.),
/// the slack bus entries are ignored. Throws PowerFlowError.
Snapshot solve_ac_power_flow(const NetworkCase& net, const Eigen::VectorXd& p_load, const Eigen::VectorXd& q_load,
                             const PowerFlowOptions& opts = {});

/// Solve at the case's nominal loads.
Snapshot solve_ac_power_flow(const NetworkCase& net, const PowerFlowOptions& opts = {});

bool is_connected(int bus_count, const std::vector<BusPair>& edges);

/// Per-bus, per-snapshot load multipliers (N x T).
struct LoadProfile {
    Eigen::MatrixXd p_mult;
    Eigen::MatrixXd q_mult;

    int snapshots() const { return static_cast<int>(p_mult.cols()); }
};

/// Multipliers uniform on [1 - spread, 1 + spread], optionally scaled by a shared
/// per-snapshot system factor uniform on [1 - shared_spread, 1 + shared_spread].
LoadProfile generate_load_profile(const NetworkCase& net, int snapshots, std::uint64_t seed, double spread,
                                  double shared_spread = 0.0);

enum class Quantity { P = 0, Q = 1, V = 2, Theta = 3 };

const char* quantity_name(Quantity q);  // "P", "Q", "V", "TH"
Quantity parse_quantity(const std::string& s);

/// Sensor sets with per-channel noise std. Bus lists are sorted, 1-based.
struct MeasurementPlan {
    int bus_count = 0;
    int snapshots = 1;
    std::uint64_t seed = 0;
    std::array<std::vector<int>, 4> buses;     // indexed by Quantity
    std::array<std::vector<double>, 4> sigma;  // parallel to buses; empty until resolved

    const std::vector<int>& sensors(Quantity q) const { return buses[static_cast<int>(q)]; }
    int per_snapshot() const;
    int measurement_count() const { return per_snapshot() * snapshots; }
    bool sigmas_resolved() const;
    void validate() const;
};

/// Plan with the listed quantities measured at every bus.
MeasurementPlan full_plan(int bus_count, int snapshots, std::initializer_list<Quantity> quantities,
                          std::uint64_t seed = 0);

enum class NoiseMode {
    RelativeRms,  // sigma = pct/100 * RMS of the channel's true values
    Absolute      // sigma = pct/100 (p.u. or rad)
};

struct NoiseSpec {
    double percent = 0.1;
    NoiseMode mode = NoiseMode::RelativeRms;
    double floor = 1e-8;
};

/// Fill plan.sigma from the true operating points.
void resolve_sigmas(MeasurementPlan& plan, const std::vector<Snapshot>& truth, const NoiseSpec& noise);

struct MeasurementEntry {
    int snapshot;  // zero-based
    Quantity quantity;
    int bus;  // 1-based
};

/// Stacking: per snapshot, P block, Q block, V block, theta block; snapshots in order.
struct MeasurementTensor {
    Eigen::VectorXd z;
    Eigen::VectorXd sigma;
    std::vector<MeasurementEntry> layout;
    int per_snapshot = 0;

    Eigen::Index size() const { return z.size(); }
};

std::vector<MeasurementEntry> stacking_layout(const MeasurementPlan& plan);

/// Noiseless stacked measurement of the given operating points.
Eigen::VectorXd stack_measurements(const MeasurementPlan& plan, const std::vector<Snapshot>& snaps);

struct Simulation {
    MeasurementTensor measurements;
    std::vector<Snapshot> truth;
    MeasurementPlan plan;  // with resolved sigmas
};

/// Solves every snapshot, resolves sigmas (if unset) and adds seeded Gaussian noise.
Simulation simulate_measurements(const NetworkCase& net, const LoadProfile& loads, const MeasurementPlan& plan,
                                 const NoiseSpec& noise = {});

/// Noise only: z = clean + eps, seeded per snapshot.
Eigen::VectorXd add_noise(const Eigen::VectorXd& clean, const MeasurementTensor& shape, std::uint64_t seed);

/// CSV columns: t,quantity,bus,value,sigma (t is 1-based).
void write_measurements_csv(std::ostream& out, const MeasurementTensor& m);
MeasurementTensor read_measurements_csv(std::istream& in, MeasurementPlan* plan_out = nullptr);

}  // namespace tae

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "formbo/parameters.hpp"
#include "formbo/result_store.hpp"

namespace formbo {

struct BackendCapabilities {
    bool supports_progress = false;
    bool reports_energy = false;
    bool deterministic = false;
};

struct ProgressSnapshot {
    double progress = 0.0;
    TargetVector targets;
    double walltime_s = 0.0;
    double energy_j = 0.0;
};

enum class WatchDecision { proceed, stop };

/// Called on the job's own thread after every progress step.
using Watcher = std::function<WatchDecision(const ProgressSnapshot&)>;

struct RunOutcome {
    TargetVector targets;
    JobMeta meta;  // walltime, energy, progress and terminated_early are filled in
};

class SimulationBackend {
public:
    virtual ~SimulationBackend() = default;
    virtual BackendCapabilities capabilities() const = 0;
    /// Throws BackendError when the simulation cannot produce targets.
    virtual RunOutcome run(const DesignPoint& x, const Watcher& watcher, std::uint64_t seed) = 0;
};

/// One fresh backend per job.
using BackendFactory = std::function<std::unique_ptr<SimulationBackend>()>;

struct PressParameter {
    std::string name;
    ParameterKind kind = ParameterKind::continuous;
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> values;  // discrete only
    double fixed_value = 0.0;    // used when a design point omits the parameter
};

/// Synthetic deep-drawing response. Inputs are normalised to z in [0, 1];
/// restraint r = w_r . (z_p, z_db * n_db / 100, z_Fr) and capacity
/// c = 0.6 z_D + 0.4 (1 - z_Rp) drive seven class scores:
///   safe (L4):          g4 (1 - d^2),  d = max(0, |r - r0| - plateau) / width,  r0 = 0.35 + 0.3 c
///   crack family (L5-7): g_j max(0, r - c - delta_j) / (1 - delta_j)
///   wrinkle family (L1-3): g_j max(0, theta_j - r) / theta_j
/// and L7 = 100 (1 - exp(-s_7)); L1..L6 split the remaining share by softmax(s_1..s_6).
struct PressModel {
    std::vector<PressParameter> schema;
    std::vector<std::string> variable;  // parameters exposed to the optimiser

    std::array<double, 3> restraint_weights{0.5, 0.3, 0.2};
    std::array<double, 2> capacity_weights{0.6, 0.4};
    std::array<double, 7> gains{4.0, 4.0, 4.0, 6.0, 5.0, 5.0, 6.0};
    std::array<double, 3> wrinkle_theta{0.30, 0.25, 0.35};  // L1, L2, L3
    std::array<double, 3> crack_delta{0.00, 0.10, 0.25};    // L5, L6, L7
    double safe_center = 0.35;
    double safe_slope = 0.3;
    double safe_width = 0.5;
    double safe_plateau = 0.0;
    double score_noise = 0.0;  // standard deviation of seeded score noise

    int steps = 100;
    double step_walltime_s = 0.05;
    double power_w = 200.0;
    double step_delay_s = 0.0;  // real sleep per step, for interrupt tests

    /// p, db, drawbead count %, Fr, D continuous and Rp discrete, all variable.
    static PressModel standard();
    /// Same response with only p, Fr and D variable.
    static PressModel three_input();

    void validate() const;
    const PressParameter& parameter(std::string_view name) const;
    std::vector<ParameterSpec> parameter_specs() const;
    double step_energy_j() const { return step_walltime_s * power_w; }

    /// Class scores s_1..s_7 before the softmax.
    Eigen::VectorXd scores(const DesignPoint& x) const;
};

/// Final L1..L7 of a completed run. Out-of-schema inputs throw DataError naming the parameter.
TargetVector evaluate_final(const PressModel& model, const DesignPoint& x);

class VirtualPress final : public SimulationBackend {
public:
    explicit VirtualPress(PressModel model);

    BackendCapabilities capabilities() const override { return {true, true, model_.score_noise == 0.0}; }
    /// Steps t = 0..T; the snapshot at q = t/T interpolates linearly from the
    /// safe initial state (L4 = 100) to the final targets.
    RunOutcome run(const DesignPoint& x, const Watcher& watcher, std::uint64_t seed) override;

    const PressModel& model() const { return model_; }

private:
    PressModel model_;
};

}  // namespace formbo

#include "formbo/virtual_press.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <thread>

namespace formbo {

PressModel PressModel::standard() {
    PressModel m;
    m.schema = {
        {"p", ParameterKind::continuous, 50.0, 300.0, {}, 175.0},
        {"db", ParameterKind::continuous, 0.0, 400.0, {}, 200.0},
        {"n_db", ParameterKind::continuous, 0.0, 100.0, {}, 100.0},
        {"Fr", ParameterKind::continuous, 0.05, 0.20, {}, 0.125},
        {"D", ParameterKind::continuous, 0.6, 2.0, {}, 1.3},
        {"Rp", ParameterKind::discrete, 160.0, 340.0, {160.0, 220.0, 280.0, 340.0}, 220.0},
    };
    m.variable = {"p", "db", "n_db", "Fr", "D", "Rp"};
    return m;
}

PressModel PressModel::three_input() {
    PressModel m = standard();
    m.variable = {"p", "Fr", "D"};
    return m;
}

void PressModel::validate() const {
    if (steps < 1) throw ConfigError("press: steps must be >= 1");
    for (const auto& p : schema) {
        if (!(p.hi > p.lo)) throw ConfigError("press: degenerate range for " + p.name);
        if (p.kind == ParameterKind::discrete && p.values.empty())
            throw ConfigError("press: no values for " + p.name);
    }
    for (double g : gains)
        if (!std::isfinite(g)) throw ConfigError("press: non-finite gain");
    if (!(safe_width > 0.0) || safe_plateau < 0.0) throw ConfigError("press: invalid safe peak shape");
    for (const auto& v : variable) parameter(v);
    for (const char* name : {"p", "db", "n_db", "Fr", "D", "Rp"}) parameter(name);
}

const PressParameter& PressModel::parameter(std::string_view name) const {
    for (const auto& p : schema)
        if (p.name == name) return p;
    throw DataError("unknown parameter " + std::string(name));
}

std::vector<ParameterSpec> PressModel::parameter_specs() const {
    std::vector<ParameterSpec> specs;
    for (const auto& name : variable) {
        const auto& p = parameter(name);
        ParameterSpec s;
        s.name = p.name;
        s.kind = p.kind;
        if (p.kind == ParameterKind::continuous) {
            s.lower = p.lo;
            s.upper = p.hi;
        } else {
            s.add_values = p.values;
        }
        specs.push_back(std::move(s));
    }
    return specs;
}

Eigen::VectorXd PressModel::scores(const DesignPoint& x) const {
    for (const auto& [name, value] : x) {
        const auto& p = parameter(name);
        if (!std::isfinite(value)) throw DataError("parameter " + name + " is not finite");
        if (p.kind == ParameterKind::discrete) {
            if (std::find(p.values.begin(), p.values.end(), value) == p.values.end())
                throw DataError("parameter " + name + " = " + format_number(value) + " is not an allowed value");
        } else if (value < p.lo - 1e-9 || value > p.hi + 1e-9) {
            throw DataError("parameter " + name + " = " + format_number(value) + " outside [" + format_number(p.lo) +
                            ", " + format_number(p.hi) + "]");
        }
    }
    auto z = [&](std::string_view name) {
        const auto& p = parameter(name);
        const double v = x.get(name).value_or(p.fixed_value);
        return std::clamp((v - p.lo) / (p.hi - p.lo), 0.0, 1.0);
    };
    const double z_db = z("db") * z("n_db");
    const double r = restraint_weights[0] * z("p") + restraint_weights[1] * z_db + restraint_weights[2] * z("Fr");
    const double c = capacity_weights[0] * z("D") + capacity_weights[1] * (1.0 - z("Rp"));

    Eigen::VectorXd s(kNumFeasibilityTargets);
    for (int j = 0; j < 3; ++j) s(j) = gains[j] * std::max(0.0, wrinkle_theta[j] - r) / wrinkle_theta[j];
    const double r0 = safe_center + safe_slope * c;
    const double d = std::max(0.0, std::abs(r - r0) - safe_plateau) / safe_width;
    s(3) = gains[3] * (1.0 - d * d);
    for (int j = 0; j < 3; ++j)
        s(4 + j) = gains[4 + j] * std::max(0.0, r - c - crack_delta[j]) / (1.0 - crack_delta[j]);
    return s;
}

namespace {

// Cracks claim their share first so L7 is monotone in the crack score; the
// other six classes split the remainder by softmax.
Eigen::VectorXd class_percent(const Eigen::VectorXd& s) {
    const double l7 = 100.0 * -std::expm1(-std::max(0.0, s(6)));
    const Eigen::ArrayXd head = s.head(6).array();
    const Eigen::ArrayXd e = (head - head.maxCoeff()).exp();
    Eigen::VectorXd l(kNumFeasibilityTargets);
    l.head(6) = (100.0 - l7) * e / e.sum();
    l(6) = l7;
    return l;
}

}  // namespace

TargetVector evaluate_final(const PressModel& model, const DesignPoint& x) {
    return make_feasibility_targets(class_percent(model.scores(x)));
}

VirtualPress::VirtualPress(PressModel model) : model_(std::move(model)) { model_.validate(); }

RunOutcome VirtualPress::run(const DesignPoint& x, const Watcher& watcher, std::uint64_t seed) {
    Eigen::VectorXd s = model_.scores(x);
    if (model_.score_noise > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, model_.score_noise);
        for (Index j = 0; j < s.size(); ++j) s(j) += normal(rng);
    }
    const Eigen::VectorXd final_l = class_percent(s);
    Eigen::VectorXd initial = Eigen::VectorXd::Zero(kNumFeasibilityTargets);
    initial(3) = 100.0;

    const int T = model_.steps;
    RunOutcome out;
    int t = 0;
    for (;; ++t) {
        const double q = static_cast<double>(t) / T;
        if (!watcher && t < T) continue;
        const Eigen::VectorXd l = t == T ? final_l : Eigen::VectorXd((1.0 - q) * initial + q * final_l);
        if (t > 0 && model_.step_delay_s > 0.0)
            std::this_thread::sleep_for(std::chrono::duration<double>(model_.step_delay_s));
        if (watcher) {
            ProgressSnapshot snap{q, make_feasibility_targets(l), t * model_.step_walltime_s, t * model_.step_energy_j()};
            if (watcher(snap) == WatchDecision::stop || t == T) {
                out.targets = std::move(snap.targets);
                break;
            }
        } else {
            out.targets = make_feasibility_targets(l);
            break;
        }
    }
    out.meta.progress = static_cast<double>(t) / T;
    out.meta.terminated_early = t < T;
    out.meta.walltime_s = t * model_.step_walltime_s;
    out.meta.energy_j = t * model_.step_energy_j();
    return out;
}

}  // namespace formbo

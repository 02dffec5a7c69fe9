#include "formbo/initial_predictor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "formbo/adam.hpp"

namespace formbo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double snap_to_values(double value, std::span<const double> values) {
    if (values.empty()) throw DataError("no allowed values to snap to");
    double best = values.front();
    for (double v : values)
        if (std::abs(v - value) < std::abs(best - value) ||
            (std::abs(v - value) == std::abs(best - value) && v < best))
            best = v;
    return best;
}

VectorXd InitialPredictor::features(const DesignPoint& fixed, const TargetSpec& target) const {
    VectorXd x(static_cast<Index>(options_.fixed_names.size() + options_.target_names.size()));
    Index k = 0;
    for (const auto& name : options_.fixed_names) {
        auto v = fixed.get(name);
        if (!v) throw DataError("fixed parameter " + name + ": missing");
        x(k++) = *v;
    }
    for (const auto& name : options_.target_names) {
        auto it = std::find(target.names.begin(), target.names.end(), name);
        if (it == target.names.end()) throw DataError("target " + name + ": missing from target spec");
        x(k++) = target.f_star(it - target.names.begin());
    }
    return (x - x_mean_).cwiseQuotient(x_scale_);
}

InitialPredictor InitialPredictor::train(std::span<const SimulationRecord> records,
                                         std::vector<ParameterRange> effective,
                                         const InitialPredictorOptions& options) {
    if (effective.empty()) throw ConfigError("initial predictor: no variable parameters");
    std::vector<const SimulationRecord*> rows;
    for (const auto& r : records) {
        if (!r.is_training_row()) continue;
        bool ok = true;
        for (const auto& n : options.fixed_names) ok = ok && r.inputs.contains(n);
        for (const auto& n : options.target_names) ok = ok && r.targets.contains(n);
        for (const auto& p : effective) ok = ok && r.inputs.contains(p.name);
        if (ok) rows.push_back(&r);
    }
    if (rows.size() < options.min_records)
        throw DataError("insufficient data for the initial predictor: " + std::to_string(rows.size()) +
                        " usable records, need " + std::to_string(options.min_records) +
                        "; start from a random initial sample instead");

    InitialPredictor ip;
    ip.options_ = options;
    ip.ranges_ = std::move(effective);
    const auto n = static_cast<Index>(rows.size());
    const auto d = static_cast<Index>(options.fixed_names.size() + options.target_names.size());
    MatrixXd x(n, d);
    for (Index i = 0; i < n; ++i) {
        Index k = 0;
        for (const auto& name : options.fixed_names) x(i, k++) = rows[static_cast<std::size_t>(i)]->inputs.at(name);
        for (const auto& name : options.target_names) x(i, k++) = rows[static_cast<std::size_t>(i)]->targets.at(name);
    }
    ip.x_mean_ = x.colwise().mean().transpose();
    ip.x_scale_.resize(d);
    for (Index j = 0; j < d; ++j) {
        const double sd = std::sqrt((x.col(j).array() - ip.x_mean_(j)).square().mean());
        ip.x_scale_(j) = sd > 1e-12 ? sd : 1.0;
    }
    const MatrixXd xs = (x.rowwise() - ip.x_mean_.transpose()).array().rowwise() / ip.x_scale_.transpose().array();

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Index h = options.hidden;
    for (const auto& range : ip.ranges_) {
        VectorXd y(n);
        for (Index i = 0; i < n; ++i) y(i) = rows[static_cast<std::size_t>(i)]->inputs.at(range.name);
        Net net;
        net.y_mean = y.mean();
        const double sd = std::sqrt((y.array() - net.y_mean).square().mean());
        net.y_scale = sd > 1e-12 ? sd : 1.0;
        const VectorXd ys = (y.array() - net.y_mean) / net.y_scale;

        net.w1 = MatrixXd(h, d);
        for (Index i = 0; i < net.w1.size(); ++i) net.w1.data()[i] = normal(rng) / std::sqrt(static_cast<double>(d));
        net.b1 = VectorXd::Zero(h);
        net.w2 = VectorXd(h);
        for (Index i = 0; i < h; ++i) net.w2(i) = normal(rng) / std::sqrt(static_cast<double>(h));

        const Index total = h * d + h + h + 1;
        Adam adam(total, options.learning_rate);
        VectorXd flat(total), grad(total);
        for (int step = 0; step < options.steps; ++step) {
            const MatrixXd a = ((xs * net.w1.transpose()).rowwise() + net.b1.transpose()).array().tanh();
            const VectorXd err = (a * net.w2).array() + net.b2 - ys.array();
            const VectorXd dout = err * (2.0 / static_cast<double>(n));
            const MatrixXd dpre = (dout * net.w2.transpose()).array() * (1.0 - a.array().square());
            const MatrixXd gw1 = dpre.transpose() * xs;
            grad << Eigen::Map<const VectorXd>(gw1.data(), gw1.size()), dpre.colwise().sum().transpose(),
                a.transpose() * dout, dout.sum();
            flat << Eigen::Map<const VectorXd>(net.w1.data(), net.w1.size()), net.b1, net.w2, net.b2;
            adam.step(flat, grad);
            net.w1 = Eigen::Map<const MatrixXd>(flat.data(), h, d);
            net.b1 = flat.segment(h * d, h);
            net.w2 = flat.segment(h * d + h, h);
            net.b2 = flat(total - 1);
        }
        ip.nets_.push_back(std::move(net));
    }
    return ip;
}

double InitialPredictor::raw_output(std::string_view parameter, const DesignPoint& fixed,
                                    const TargetSpec& target) const {
    const VectorXd x = features(fixed, target);
    for (std::size_t i = 0; i < ranges_.size(); ++i) {
        if (ranges_[i].name != parameter) continue;
        const Net& net = nets_[i];
        const VectorXd a = (net.w1 * x + net.b1).array().tanh();
        return (a.dot(net.w2) + net.b2) * net.y_scale + net.y_mean;
    }
    throw DataError("initial predictor has no regressor for " + std::string(parameter));
}

DesignPoint InitialPredictor::predict(const DesignPoint& fixed, const TargetSpec& target) const {
    DesignPoint out;
    for (const auto& range : ranges_) {
        const double raw = raw_output(range.name, fixed, target);
        out.set(range.name, range.kind == ParameterKind::discrete ? snap_to_values(raw, range.values)
                                                                  : std::clamp(raw, range.lo, range.hi));
    }
    return out;
}

}  // namespace formbo

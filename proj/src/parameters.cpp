#include "formbo/parameters.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace formbo {

void OrderedValues::set(std::string_view name, double value) {
    for (auto& [key, v] : entries_) {
        if (key == name) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(std::string(name), value);
}

std::optional<double> OrderedValues::get(std::string_view name) const {
    for (const auto& [key, v] : entries_)
        if (key == name) return v;
    return std::nullopt;
}

double OrderedValues::at(std::string_view name) const {
    auto v = get(name);
    if (!v) throw DataError("missing value for '" + std::string(name) + "'");
    return *v;
}

std::vector<std::string> OrderedValues::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
}

std::vector<std::string> feasibility_target_names() {
    return {kFeasibilityTargets.begin(), kFeasibilityTargets.end()};
}

Eigen::VectorXd feasibility_vector(const TargetVector& targets) {
    Eigen::VectorXd y(kNumFeasibilityTargets);
    for (Index j = 0; j < kNumFeasibilityTargets; ++j) y(j) = targets.at(kFeasibilityTargets[j]);
    return y;
}

TargetVector make_feasibility_targets(const Eigen::Ref<const Eigen::VectorXd>& values) {
    if (values.size() != kNumFeasibilityTargets)
        throw DataError("expected 7 feasibility values, got " + std::to_string(values.size()));
    TargetVector t;
    for (Index j = 0; j < kNumFeasibilityTargets; ++j) t.set(kFeasibilityTargets[j], values(j));
    return t;
}

std::string_view to_string(ParameterKind kind) {
    return kind == ParameterKind::continuous ? "continuous" : "discrete";
}

ParameterKind parameter_kind_from_string(std::string_view text) {
    if (text == "continuous") return ParameterKind::continuous;
    if (text == "discrete") return ParameterKind::discrete;
    throw ConfigError("unknown parameter kind '" + std::string(text) + "'");
}

void ParameterSpec::validate() const {
    if (name.empty()) throw ConfigError("parameter with empty name");
    if (lower && upper && *lower > *upper)
        throw ConfigError("parameter " + name + ": constraint lower > upper");
    if (precision && *precision < 0) throw ConfigError("parameter " + name + ": negative precision");
    for (double v : add_values)
        if (!std::isfinite(v)) throw ConfigError("parameter " + name + ": non-finite add value");
}

bool ParameterRange::contains(double x, double tol) const {
    if (!std::isfinite(x)) return false;
    if (kind == ParameterKind::continuous) return x >= lo - tol && x <= hi + tol;
    return std::any_of(values.begin(), values.end(),
                       [&](double v) { return std::abs(v - x) <= tol; });
}

ParameterRange ParameterRange::continuous(std::string name, double lo, double hi) {
    ParameterRange r;
    r.name = std::move(name);
    r.kind = ParameterKind::continuous;
    r.lo = lo;
    r.hi = hi;
    return r;
}

ParameterRange ParameterRange::discrete(std::string name, std::vector<double> values) {
    ParameterRange r;
    r.name = std::move(name);
    r.kind = ParameterKind::discrete;
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    r.values = std::move(values);
    if (!r.values.empty()) {
        r.lo = r.values.front();
        r.hi = r.values.back();
    }
    return r;
}

const ParameterRange* find_range(std::span<const ParameterRange> ranges, std::string_view name) {
    for (const auto& r : ranges)
        if (r.name == name) return &r;
    return nullptr;
}

std::string format_number(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

double round_to_precision(double value, int decimals) {
    const double scale = std::pow(10.0, decimals);
    // nearbyint honours the default round-to-nearest-even mode.
    return std::nearbyint(value * scale) / scale;
}

}  // namespace formbo

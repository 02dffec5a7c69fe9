#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace formbo {

using Eigen::Index;

// Error hierarchy. Callers that need to map failures onto exit codes or HTTP
// statuses catch the specific subclass.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ConfigError : public Error {
public:
    using Error::Error;
};
class DataError : public Error {
public:
    using Error::Error;
};
class NumericalError : public Error {
public:
    using Error::Error;
};
class BackendError : public Error {
public:
    using Error::Error;
};

/// Name/value pairs in insertion order. Used for design points and target vectors.
class OrderedValues {
public:
    OrderedValues() = default;
    OrderedValues(std::initializer_list<std::pair<std::string, double>> init) : entries_(init) {}

    void set(std::string_view name, double value);
    std::optional<double> get(std::string_view name) const;
    double at(std::string_view name) const;
    bool contains(std::string_view name) const { return get(name).has_value(); }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::vector<std::string> names() const;

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    bool operator==(const OrderedValues&) const = default;

private:
    std::vector<std::pair<std::string, double>> entries_;
};

using DesignPoint = OrderedValues;
using TargetVector = OrderedValues;

/// Feasibility classes, inadequate stretch through cracks.
inline constexpr std::array<std::string_view, 7> kFeasibilityTargets = {"L1", "L2", "L3", "L4",
                                                                        "L5", "L6", "L7"};
inline constexpr Index kNumFeasibilityTargets = 7;

std::vector<std::string> feasibility_target_names();
Eigen::VectorXd feasibility_vector(const TargetVector& targets);
TargetVector make_feasibility_targets(const Eigen::Ref<const Eigen::VectorXd>& values);

enum class ParameterKind { continuous, discrete };

std::string_view to_string(ParameterKind kind);
ParameterKind parameter_kind_from_string(std::string_view text);

/// Declared variable design parameter. Constraint bounds replace the
/// corresponding side of the observed range; discrete edits add or discard
/// values from the observed value set.
struct ParameterSpec {
    std::string name;
    ParameterKind kind = ParameterKind::continuous;
    std::optional<double> lower;
    std::optional<double> upper;
    std::vector<double> add_values;
    std::vector<double> discard_values;
    std::optional<int> precision;

    void validate() const;
};

/// Range (continuous) or value set (discrete) for one parameter.
struct ParameterRange {
    std::string name;
    ParameterKind kind = ParameterKind::continuous;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> values;
    std::optional<int> precision;

    bool contains(double x, double tol = 0.0) const;
    static ParameterRange continuous(std::string name, double lo, double hi);
    static ParameterRange discrete(std::string name, std::vector<double> values);
};

const ParameterRange* find_range(std::span<const ParameterRange> ranges, std::string_view name);

/// Shortest decimal text that round-trips to the same double.
std::string format_number(double value);

/// Round half to even at the given number of decimal places.
double round_to_precision(double value, int decimals);

}  // namespace formbo

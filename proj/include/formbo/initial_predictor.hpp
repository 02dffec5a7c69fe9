#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "formbo/acquisition.hpp"
#include "formbo/parameters.hpp"
#include "formbo/result_store.hpp"

namespace formbo {

struct InitialPredictorOptions {
    std::vector<std::string> fixed_names;  // fixed design parameters fed to every regressor
    std::vector<std::string> target_names = feasibility_target_names();
    Index hidden = 16;
    int steps = 3000;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
    std::size_t min_records = 20;
};

/// One tanh regressor per variable parameter: (fixed params, targets) -> parameter.
class InitialPredictor {
public:
    /// Trains on completed records. Fewer than `min_records` usable rows
    /// throws DataError("insufficient data ...").
    static InitialPredictor train(std::span<const SimulationRecord> records, std::vector<ParameterRange> effective,
                                  const InitialPredictorOptions& options);

    /// Regressor outputs clipped to the effective ranges; discrete values are
    /// snapped to the nearest allowed value (ties go to the lower value).
    DesignPoint predict(const DesignPoint& fixed, const TargetSpec& target) const;

    /// Raw regressor output for one parameter, before clipping and snapping.
    double raw_output(std::string_view parameter, const DesignPoint& fixed, const TargetSpec& target) const;

    const std::vector<ParameterRange>& ranges() const { return ranges_; }

private:
    struct Net {
        Eigen::MatrixXd w1;
        Eigen::VectorXd b1, w2;
        double b2 = 0.0;
        double y_mean = 0.0, y_scale = 1.0;
    };

    Eigen::VectorXd features(const DesignPoint& fixed, const TargetSpec& target) const;

    InitialPredictorOptions options_;
    std::vector<ParameterRange> ranges_;
    Eigen::VectorXd x_mean_, x_scale_;
    std::vector<Net> nets_;
};

/// Nearest allowed value; exact ties resolve to the lower value.
double snap_to_values(double value, std::span<const double> sorted_values);

}  // namespace formbo

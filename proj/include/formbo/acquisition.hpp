#pragma once

#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "formbo/candidate_space.hpp"
#include "formbo/surrogate_gp.hpp"

namespace formbo {

/// Desired target values and signed attention per target. Minimisation
/// convention: a negative attention turns a maximised target into a minimised one.
struct TargetSpec {
    std::vector<std::string> names;
    Eigen::VectorXd f_star;
    Eigen::VectorXd attention;

    /// L1..L7 with f* = (0, 0, 0, 100, 0, 0, 0) and attention (2, 1, 1, -1, 1, 2, 2).
    static TargetSpec feasibility_default();
    void validate() const;

    /// Attention-weighted distance to f*, the loop's notion of "best".
    double scalarize(const Eigen::Ref<const Eigen::VectorXd>& y) const {
        return attention.dot(y - f_star);
    }
};

enum class AcquisitionMethod { marginal, monte_carlo };

std::string_view to_string(AcquisitionMethod method);
AcquisitionMethod acquisition_method_from_string(std::string_view text);

struct AcquisitionScores {
    Eigen::MatrixXd ei;   // n* x m, non-negative
    Eigen::VectorXd sum;  // row sums of ei
    AcquisitionMethod method = AcquisitionMethod::marginal;
    Index n_mc = 0;
};

template <typename Scalar>
Scalar normal_pdf(Scalar z) {
    return std::exp(Scalar(-0.5) * z * z) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Scalar>
Scalar normal_cdf(Scalar z) {
    return Scalar(0.5) * std::erfc(-z / std::numbers::sqrt2_v<Scalar>);
}

/// Closed-form expected improvement below `f_star` for one output.
template <typename Scalar>
Scalar expected_improvement(Scalar mean, Scalar sigma, Scalar f_star) {
    const Scalar gap = f_star - mean;
    if (sigma <= Scalar(0)) return gap > Scalar(0) ? gap : Scalar(0);
    const Scalar z = gap / sigma;
    const Scalar ei = gap * normal_cdf(z) + sigma * normal_pdf(z);
    return ei > Scalar(0) ? ei : Scalar(0);
}

/// Elementwise closed-form EI on attention-transformed moments:
/// mean' = a * mean, sigma' = |a| * sigma, f*' = a * f*.
template <typename DerivedMean, typename DerivedSigma, typename DerivedF, typename DerivedA>
Eigen::Matrix<typename DerivedMean::Scalar, Eigen::Dynamic, Eigen::Dynamic> expected_improvement_marginal(
    const Eigen::MatrixBase<DerivedMean>& mean, const Eigen::MatrixBase<DerivedSigma>& sigma,
    const Eigen::MatrixBase<DerivedF>& f_star, const Eigen::MatrixBase<DerivedA>& attention) {
    using Scalar = typename DerivedMean::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> ei(mean.rows(), mean.cols());
    for (Index j = 0; j < mean.cols(); ++j) {
        const Scalar a = attention(j);
        const Scalar f = a * f_star(j);
        for (Index i = 0; i < mean.rows(); ++i) {
            if (sigma(i, j) < Scalar(0)) throw DataError("negative standard deviation");
            ei(i, j) = expected_improvement<Scalar>(a * mean(i, j), std::abs(a) * sigma(i, j), f);
        }
    }
    return ei;
}

/// Crowding distance over the columns of `ei` (per-objective sorted order;
/// extremes get +inf, a degenerate column contributes 0 everywhere).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> crowding_distance(
    const Eigen::MatrixBase<Derived>& ei);

AcquisitionScores ei_marginal(const PosteriorPrediction& pred, const TargetSpec& target);

/// Joint Monte-Carlo EI. One seeded block of standard normals is shared by
/// all candidates, so results do not depend on how candidates are batched.
AcquisitionScores ei_monte_carlo(const PosteriorPrediction& pred, const TargetSpec& target, Index n_mc,
                                 std::uint64_t seed);

struct Selection {
    Index index = 0;
    DesignPoint point;
};

Selection select_best(const AcquisitionScores& scores, const CandidateSet& candidates);

enum class ParallelStrategy { highest_sum, peak_based, crowding_distance };

std::string_view to_string(ParallelStrategy s);
ParallelStrategy parallel_strategy_from_string(std::string_view text);

std::vector<Selection> select_parallel(const AcquisitionScores& scores, const CandidateSet& candidates,
                                       Index p, ParallelStrategy strategy);

/// Strict local maxima of `values` in index order; endpoints compare against
/// their single neighbour.
std::vector<Index> local_peaks(const Eigen::Ref<const Eigen::VectorXd>& values);

}  // namespace formbo

#include "formbo/crowding_distance.ipp"

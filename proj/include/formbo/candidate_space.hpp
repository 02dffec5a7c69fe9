#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "formbo/parameters.hpp"

namespace formbo {

enum class Generation { linear, combination };

std::string_view to_string(Generation g);
Generation generation_from_string(std::string_view text);

/// Candidate input space: n rows x d columns, column order = `names`.
struct CandidateSet {
    std::vector<std::string> names;
    Eigen::MatrixXd points;
    Generation generation = Generation::linear;
    std::uint64_t seed = 0;

    Index size() const { return points.rows(); }
    Index dim() const { return points.cols(); }
    DesignPoint row(Index i) const;

    /// Single-row set holding `point` in `names` order.
    static CandidateSet from_point(std::vector<std::string> names, const DesignPoint& point);
};

/// Grows each observed continuous range by `factor` of its span (half per side),
/// then applies the ParameterSpec constraint bounds, which replace the corresponding
/// side. Discrete sets receive the ParameterSpec add/discard edits. A parameter with
/// no observations needs both constraint bounds (or add values).
std::vector<ParameterRange> expand_ranges(std::span<const ParameterRange> observed,
                                          std::span<const ParameterSpec> specs, double factor);

/// Evenly spaced columns stacked into `n` rows. With `permute` each column is
/// shuffled by a seed-derived permutation; without it the rows sweep the
/// diagonal of the box.
CandidateSet generate_linear(std::span<const ParameterRange> effective, Index n, std::uint64_t seed,
                             bool permute = true);

inline constexpr std::uint64_t kDefaultCombinationBound = 100'000'000;

/// Cartesian product of per-dimension grids (first dimension varies slowest).
/// `steps` is parallel to `effective` and ignored for discrete dimensions.
CandidateSet generate_combination(std::span<const ParameterRange> effective,
                                  std::span<const int> steps, std::optional<Index> cap,
                                  std::uint64_t seed,
                                  std::uint64_t safety_bound = kDefaultCombinationBound);

/// Value rounded to the range's precision and kept inside the range.
double round_within(double value, const ParameterRange& range);

}  // namespace formbo

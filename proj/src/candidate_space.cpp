#include "formbo/candidate_space.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

namespace formbo {

std::string_view to_string(Generation g) { return g == Generation::linear ? "linear" : "combination"; }

Generation generation_from_string(std::string_view text) {
    if (text == "linear") return Generation::linear;
    if (text == "combination") return Generation::combination;
    throw ConfigError("unknown candidate generation '" + std::string(text) + "'");
}

DesignPoint CandidateSet::row(Index i) const {
    DesignPoint p;
    for (Index j = 0; j < dim(); ++j) p.set(names[static_cast<std::size_t>(j)], points(i, j));
    return p;
}

CandidateSet CandidateSet::from_point(std::vector<std::string> names, const DesignPoint& point) {
    CandidateSet set;
    set.points.resize(1, static_cast<Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) set.points(0, static_cast<Index>(j)) = point.at(names[j]);
    set.names = std::move(names);
    return set;
}

double round_within(double value, const ParameterRange& range) {
    if (!range.precision) return value;
    const int p = *range.precision;
    const double step = std::pow(10.0, -p);
    double v = round_to_precision(value, p);
    if (v < range.lo) v = round_to_precision(v + step, p);
    if (v > range.hi) v = round_to_precision(v - step, p);
    return std::clamp(v, range.lo, range.hi);
}

std::vector<ParameterRange> expand_ranges(std::span<const ParameterRange> observed,
                                          std::span<const ParameterSpec> specs, double factor) {
    if (!(factor >= 0.0)) throw ConfigError("expansion factor must be >= 0");
    std::vector<ParameterRange> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) {
        spec.validate();
        const ParameterRange* obs = find_range(observed, spec.name);
        if (spec.kind == ParameterKind::continuous) {
            double lo = 0.0, hi = 0.0;
            if (obs) {
                const double span = obs->hi - obs->lo;
                lo = obs->lo - factor * span / 2.0;
                hi = obs->hi + factor * span / 2.0;
            } else if (!spec.lower || !spec.upper) {
                throw ConfigError("no range for parameter " + spec.name +
                                  ": no observations and no lower/upper constraint");
            }
            if (spec.lower) lo = *spec.lower;
            if (spec.upper) hi = *spec.upper;
            if (lo > hi) throw ConfigError("infeasible parameter " + spec.name);
            auto range = ParameterRange::continuous(spec.name, lo, hi);
            range.precision = spec.precision;
            out.push_back(std::move(range));
        } else {
            std::vector<double> values = obs ? obs->values : std::vector<double>{};
            values.insert(values.end(), spec.add_values.begin(), spec.add_values.end());
            std::erase_if(values, [&](double v) {
                return std::find(spec.discard_values.begin(), spec.discard_values.end(), v) !=
                       spec.discard_values.end();
            });
            if (values.empty()) {
                if (!obs && spec.add_values.empty())
                    throw ConfigError("no range for parameter " + spec.name +
                                      ": no observations and no allowed values");
                throw ConfigError("infeasible parameter " + spec.name);
            }
            auto range = ParameterRange::discrete(spec.name, std::move(values));
            range.precision = spec.precision;
            out.push_back(std::move(range));
        }
    }
    return out;
}

namespace {

std::vector<double> grid(const ParameterRange& r, Index steps) {
    std::vector<double> g;
    if (r.kind == ParameterKind::discrete) {
        for (double v : r.values) g.push_back(round_within(v, r));
        return g;
    }
    if (steps == 1) {
        g.push_back(round_within(r.lo, r));
        return g;
    }
    g.reserve(static_cast<std::size_t>(steps));
    for (Index i = 0; i < steps; ++i) {
        // Endpoints are exact; interior points by affine interpolation.
        double t = static_cast<double>(i) / static_cast<double>(steps - 1);
        double v = i == steps - 1 ? r.hi : r.lo + t * (r.hi - r.lo);
        g.push_back(round_within(v, r));
    }
    return g;
}

void check_feasible(std::span<const ParameterRange> effective) {
    for (const auto& r : effective) {
        if (r.kind == ParameterKind::continuous && !(r.lo <= r.hi))
            throw ConfigError("infeasible parameter " + r.name);
        if (r.kind == ParameterKind::discrete && r.values.empty())
            throw ConfigError("infeasible parameter " + r.name);
    }
}

std::vector<std::string> names_of(std::span<const ParameterRange> effective) {
    std::vector<std::string> names;
    for (const auto& r : effective) names.push_back(r.name);
    return names;
}

}  // namespace

CandidateSet generate_linear(std::span<const ParameterRange> effective, Index n, std::uint64_t seed,
                             bool permute) {
    if (n < 2) throw ConfigError("linear generation needs at least 2 steps");
    check_feasible(effective);
    CandidateSet set;
    set.names = names_of(effective);
    set.generation = Generation::linear;
    set.seed = seed;
    set.points.resize(n, static_cast<Index>(effective.size()));

    std::mt19937_64 rng(seed);
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (std::size_t j = 0; j < effective.size(); ++j) {
        const auto& r = effective[j];
        std::vector<double> column;
        if (r.kind == ParameterKind::continuous) {
            column = grid(r, n);
        } else {
            column.resize(static_cast<std::size_t>(n));
            for (Index i = 0; i < n; ++i)
                column[static_cast<std::size_t>(i)] =
                    round_within(r.values[static_cast<std::size_t>(i) % r.values.size()], r);
        }
        std::iota(order.begin(), order.end(), Index{0});
        if (permute) std::shuffle(order.begin(), order.end(), rng);
        for (Index i = 0; i < n; ++i)
            set.points(i, static_cast<Index>(j)) =
                column[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    }
    return set;
}

CandidateSet generate_combination(std::span<const ParameterRange> effective,
                                  std::span<const int> steps, std::optional<Index> cap,
                                  std::uint64_t seed, std::uint64_t safety_bound) {
    if (steps.size() != effective.size())
        throw ConfigError("combination generation needs one step count per parameter");
    check_feasible(effective);
    std::vector<std::vector<double>> grids;
    unsigned __int128 product = 1;
    const unsigned __int128 saturate = static_cast<unsigned __int128>(1) << 100;
    for (std::size_t j = 0; j < effective.size(); ++j) {
        if (effective[j].kind == ParameterKind::continuous && steps[j] < 1)
            throw ConfigError("parameter " + effective[j].name + ": steps must be >= 1");
        grids.push_back(grid(effective[j], steps[j]));
        product = std::min(product * grids.back().size(), saturate);
    }
    if (cap && *cap < 1) throw ConfigError("combination cap must be >= 1");

    std::vector<std::uint64_t> indices;
    if (cap && product > static_cast<unsigned __int128>(*cap)) {
        if (product >= saturate) throw ConfigError("combination space too large to subsample");
        // Floyd's algorithm: uniform subset of size cap without replacement.
        const auto total = static_cast<std::uint64_t>(product);
        const auto k = static_cast<std::uint64_t>(*cap);
        std::mt19937_64 rng(seed);
        std::unordered_set<std::uint64_t> chosen;
        for (std::uint64_t i = total - k; i < total; ++i) {
            std::uniform_int_distribution<std::uint64_t> dist(0, i);
            std::uint64_t t = dist(rng);
            chosen.insert(chosen.count(t) ? i : t);
        }
        indices.assign(chosen.begin(), chosen.end());
        std::sort(indices.begin(), indices.end());
    } else {
        if (product > safety_bound)
            throw ConfigError("combination space exceeds the safety bound of " +
                              std::to_string(safety_bound) + " rows; set a cap or fewer steps");
        indices.resize(static_cast<std::size_t>(product));
        std::iota(indices.begin(), indices.end(), std::uint64_t{0});
    }

    CandidateSet set;
    set.names = names_of(effective);
    set.generation = Generation::combination;
    set.seed = seed;
    set.points.resize(static_cast<Index>(indices.size()), static_cast<Index>(effective.size()));
    for (std::size_t row = 0; row < indices.size(); ++row) {
        std::uint64_t rest = indices[row];
        for (std::size_t j = effective.size(); j-- > 0;) {
            const auto& g = grids[j];
            set.points(static_cast<Index>(row), static_cast<Index>(j)) = g[rest % g.size()];
            rest /= g.size();
        }
    }
    return set;
}

}  // namespace formbo

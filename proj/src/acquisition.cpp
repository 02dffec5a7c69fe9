#include "formbo/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

namespace formbo {

TargetSpec TargetSpec::feasibility_default() {
    TargetSpec t;
    t.names = feasibility_target_names();
    t.f_star = Eigen::VectorXd::Zero(kNumFeasibilityTargets);
    t.f_star(3) = 100.0;
    t.attention.resize(kNumFeasibilityTargets);
    t.attention << 2.0, 1.0, 1.0, -1.0, 1.0, 2.0, 2.0;
    return t;
}

void TargetSpec::validate() const {
    const auto m = static_cast<Index>(names.size());
    if (m == 0) throw ConfigError("targets: no target names");
    if (f_star.size() != m) throw ConfigError("targets.f_star: expected one value per target");
    if (attention.size() != m) throw ConfigError("targets.attention: expected one value per target");
    if (!f_star.allFinite() || !attention.allFinite()) throw ConfigError("targets: non-finite value");
}

std::string_view to_string(AcquisitionMethod method) {
    return method == AcquisitionMethod::marginal ? "marginal" : "monte_carlo";
}

AcquisitionMethod acquisition_method_from_string(std::string_view text) {
    if (text == "marginal") return AcquisitionMethod::marginal;
    if (text == "monte_carlo") return AcquisitionMethod::monte_carlo;
    throw ConfigError("unknown acquisition method '" + std::string(text) + "'");
}

std::string_view to_string(ParallelStrategy s) {
    switch (s) {
        case ParallelStrategy::highest_sum: return "highest_sum";
        case ParallelStrategy::peak_based: return "peak_based";
        case ParallelStrategy::crowding_distance: return "crowding_distance";
    }
    return "highest_sum";
}

ParallelStrategy parallel_strategy_from_string(std::string_view text) {
    if (text == "highest_sum") return ParallelStrategy::highest_sum;
    if (text == "peak_based") return ParallelStrategy::peak_based;
    if (text == "crowding_distance") return ParallelStrategy::crowding_distance;
    throw ConfigError("unknown parallel strategy '" + std::string(text) + "'");
}

namespace {

void check_target(const PosteriorPrediction& pred, const TargetSpec& target) {
    target.validate();
    if (pred.mean.cols() != target.f_star.size())
        throw DataError("prediction has " + std::to_string(pred.mean.cols()) + " outputs, target spec has " +
                        std::to_string(target.f_star.size()));
}

AcquisitionScores finish(Eigen::MatrixXd ei, AcquisitionMethod method, Index n_mc) {
    AcquisitionScores s;
    s.sum = ei.rowwise().sum();
    s.ei = std::move(ei);
    s.method = method;
    s.n_mc = n_mc;
    return s;
}

}  // namespace

AcquisitionScores ei_marginal(const PosteriorPrediction& pred, const TargetSpec& target) {
    check_target(pred, target);
    if ((pred.variance.array() < 0.0).any()) throw DataError("negative standard deviation");
    const Eigen::MatrixXd sigma = pred.variance.cwiseSqrt();
    return finish(expected_improvement_marginal(pred.mean, sigma, target.f_star, target.attention),
                  AcquisitionMethod::marginal, 0);
}

AcquisitionScores ei_monte_carlo(const PosteriorPrediction& pred, const TargetSpec& target, Index n_mc,
                                 std::uint64_t seed) {
    check_target(pred, target);
    if (!pred.full) throw DataError("Monte-Carlo EI needs full covariance blocks");
    if (n_mc < 1) throw ConfigError("n_mc must be >= 1");
    const Index n = pred.mean.rows();
    const Index m = pred.mean.cols();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd z(n_mc, m);
    for (Index i = 0; i < n_mc; ++i)
        for (Index j = 0; j < m; ++j) z(i, j) = normal(rng);

    const Eigen::VectorXd& a = target.attention;
    const Eigen::RowVectorXd f = a.cwiseProduct(target.f_star).transpose();
    Eigen::MatrixXd ei(n, m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
    for (Index c = 0; c < n; ++c) {
        const Eigen::MatrixXd cov = a.asDiagonal() * pred.covariance[static_cast<std::size_t>(c)] * a.asDiagonal();
        eig.compute(cov);
        if (eig.info() != Eigen::Success) throw NumericalError("covariance decomposition failed");
        const Eigen::VectorXd lambda = eig.eigenvalues();
        if (lambda.minCoeff() + 1e-9 < 0.0) throw NumericalError("covariance block is not positive semidefinite");
        const Eigen::MatrixXd root = eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();
        const Eigen::RowVectorXd mu = a.cwiseProduct(pred.mean.row(c).transpose()).transpose();
        const Eigen::MatrixXd samples = (z * root.transpose()).rowwise() + mu;
        ei.row(c) = ((-samples).rowwise() + f).cwiseMax(0.0).colwise().mean();
    }
    return finish(std::move(ei), AcquisitionMethod::monte_carlo, n_mc);
}

Selection select_best(const AcquisitionScores& scores, const CandidateSet& candidates) {
    if (scores.sum.size() == 0 || candidates.size() == 0) throw DataError("empty candidate set");
    if (scores.sum.size() != candidates.size()) throw DataError("scores and candidates differ in length");
    Index best = 0;
    for (Index i = 1; i < scores.sum.size(); ++i)
        if (scores.sum(i) > scores.sum(best)) best = i;
    return {best, candidates.row(best)};
}

std::vector<Index> local_peaks(const Eigen::Ref<const Eigen::VectorXd>& v) {
    std::vector<Index> peaks;
    const Index n = v.size();
    if (n == 1) return {0};
    for (Index i = 0; i < n; ++i) {
        const bool left = i == 0 || v(i) > v(i - 1);
        const bool right = i == n - 1 || v(i) > v(i + 1);
        if (left && right) peaks.push_back(i);
    }
    return peaks;
}

std::vector<Selection> select_parallel(const AcquisitionScores& scores, const CandidateSet& candidates,
                                       Index p, ParallelStrategy strategy) {
    const Index n = candidates.size();
    if (p < 1) throw ConfigError("parallel samples must be >= 1");
    if (p > n) throw DataError("requested " + std::to_string(p) + " samples from " + std::to_string(n) +
                               " candidates");
    std::vector<Selection> out{select_best(scores, candidates)};
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    taken[static_cast<std::size_t>(out.front().index)] = 1;

    auto ranked = [&](const Eigen::VectorXd& key, std::vector<Index> pool) {
        std::stable_sort(pool.begin(), pool.end(), [&](Index a, Index b) { return key(a) > key(b); });
        return pool;
    };
    auto take_from = [&](const std::vector<Index>& order) {
        for (Index i : order) {
            if (static_cast<Index>(out.size()) >= p) return;
            if (taken[static_cast<std::size_t>(i)]) continue;
            taken[static_cast<std::size_t>(i)] = 1;
            out.push_back({i, candidates.row(i)});
        }
    };

    std::vector<Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index{0});
    switch (strategy) {
        case ParallelStrategy::highest_sum: take_from(ranked(scores.sum, all)); break;
        case ParallelStrategy::peak_based:
            take_from(ranked(scores.sum, local_peaks(scores.sum)));
            take_from(ranked(scores.sum, all));
            break;
        case ParallelStrategy::crowding_distance:
            if (p > 1) take_from(ranked(crowding_distance(scores.ei), all));
            break;
    }
    return out;
}

}  // namespace formbo

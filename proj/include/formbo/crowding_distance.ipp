#pragma once

#include <algorithm>
#include <numeric>

namespace formbo {

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> crowding_distance(
    const Eigen::MatrixBase<Derived>& ei) {
    using Scalar = typename Derived::Scalar;
    const Index n = ei.rows();
    if (n < 2) throw DataError("crowding distance needs at least 2 candidates");
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> cd = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index j = 0; j < ei.cols(); ++j) {
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return ei(a, j) < ei(b, j); });
        const Scalar lo = ei(order.front(), j);
        const Scalar hi = ei(order.back(), j);
        if (!(hi > lo)) continue;
        cd(order.front()) = std::numeric_limits<Scalar>::infinity();
        cd(order.back()) = std::numeric_limits<Scalar>::infinity();
        for (Index k = 1; k + 1 < n; ++k) {
            const Index i = order[static_cast<std::size_t>(k)];
            cd(i) += (ei(order[static_cast<std::size_t>(k + 1)], j) - ei(order[static_cast<std::size_t>(k - 1)], j)) /
                     (hi - lo);
        }
    }
    return cd;
}

}  // namespace formbo

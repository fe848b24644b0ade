#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace gridalign {

// Samples are rows; row-major keeps each sample contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Vector& v) {
    return {v.data(), v.data() + v.size()};
}

/// Pairwise (tree) summation in fixed index order.
template <typename Get>
double pairwise_sum(std::size_t begin, std::size_t end, const Get& get) {
    const std::size_t n = end - begin;
    if (n <= 16) {
        double acc = 0.0;
        for (std::size_t i = begin; i < end; ++i) acc += get(i);
        return acc;
    }
    const std::size_t mid = begin + n / 2;
    return pairwise_sum(begin, mid, get) + pairwise_sum(mid, end, get);
}

}  // namespace gridalign

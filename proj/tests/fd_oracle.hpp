#pragma once

// Central finite-difference oracles shared by the numeric test suites.

#include "gridalign/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace gridalign::testing {

/// Gradient of a scalar function of a matrix, entry by entry.
template <typename F>
Matrix fd_gradient(const Matrix& x, double step, const F& f) {
    Matrix g(x.rows(), x.cols());
    Matrix probe = x;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double keep = probe(r, c);
            probe(r, c) = keep + step;
            const double up = f(probe);
            probe(r, c) = keep - step;
            const double down = f(probe);
            probe(r, c) = keep;
            g(r, c) = (up - down) / (2.0 * step);
        }
    return g;
}

/// |a - b| / |b| in Frobenius norm, with an absolute floor for tiny references.
inline double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-12) {
    return (a - b).norm() / std::max(b.norm(), floor);
}

inline double relative_error(const Vector& a, const Vector& b, double floor = 1e-12) {
    return (a - b).norm() / std::max(b.norm(), floor);
}

}  // namespace gridalign::testing

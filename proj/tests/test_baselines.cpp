#include "gridalign/baselines.hpp"
#include "gridalign/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace gridalign;

namespace {

Matrix gaussian(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix x(n, d);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < d; ++c) x(r, c) = rng.normal();
    return x;
}

Matrix uniform_sources(Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix s(n, 2);
    for (Eigen::Index r = 0; r < n; ++r) s.row(r) << rng.uniform(-1, 1), rng.uniform(-1, 1);
    return s;
}

double max_abs_offdiag(const Matrix& m) {
    return (m - Matrix::Identity(m.rows(), m.cols())).cwiseAbs().maxCoeff();
}

double correlation(const Vector& a, const Vector& b) {
    const Vector ca = a.array() - a.mean(), cb = b.array() - b.mean();
    return ca.dot(cb) / (ca.norm() * cb.norm());
}

}  // namespace

TEST(Whiten, IdentityCovarianceOnTrainingData) {
    Matrix x = gaussian(5000, 3, 1);
    Matrix mix(3, 3);
    mix << 2.0, 0.5, 0.0, -1.0, 1.0, 0.3, 0.2, 0.0, 0.1;
    x = x * mix.transpose();
    const auto m = whiten_fit(x);
    const Matrix y = whiten_apply(m, x);
    EXPECT_LT(max_abs_offdiag(covariance(y, y.colwise().mean().transpose())), 1e-8);
    EXPECT_LT((dewhiten(m, y) - x).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Whiten, IsotropicGaussianNearRescaledRotation) {
    const Matrix x = 3.0 * gaussian(10000, 2, 2);
    const auto m = whiten_fit(x);
    // whitening matrix ~ (1/3) * orthogonal
    const Matrix q = 3.0 * m.matrix;
    EXPECT_LT((q * q.transpose() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.05);
    const Matrix fresh = whiten_apply(m, 3.0 * gaussian(10000, 2, 3));
    EXPECT_LT(max_abs_offdiag(covariance(fresh, fresh.colwise().mean().transpose())), 5e-2);
}

TEST(Whiten, AffineEquivariantCovariance) {
    const Matrix x = uniform_sources(4000, 4);
    const Matrix a = random_invertible_matrix(2, 5);
    const Matrix y1 = whiten_apply(whiten_fit(x), x);
    const Matrix xa = x * a.transpose();
    const Matrix y2 = whiten_apply(whiten_fit(xa), xa);
    EXPECT_LT(max_abs_offdiag(covariance(y1, Vector::Zero(2))), 1e-8);
    EXPECT_LT(max_abs_offdiag(covariance(y2, Vector::Zero(2))), 1e-8);
}

TEST(Whiten, RankDeficientAndShape) {
    Matrix x = gaussian(100, 3, 6);
    x.col(2) = x.col(0) + x.col(1);
    EXPECT_THROW(whiten_fit(x), Error);
    EXPECT_NO_THROW(whiten_fit(x, 2));
    EXPECT_THROW(whiten_fit(gaussian(3, 3, 7)), Error);
}

TEST(FastIca, RecoversRotatedUniformSources) {
    const Matrix s = uniform_sources(20000, 8);
    const double a = 0.6;
    Matrix r(2, 2);
    r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    const Matrix x = s * r.transpose();
    for (auto g : {IcaNonlinearity::tanh, IcaNonlinearity::cube}) {
        const auto wm = whiten_fit(x);
        const auto ica = fastica_fit(whiten_apply(wm, x), g, 1e-6, 500, 9);
        EXPECT_TRUE(ica.converged);
        const Matrix y = ica_unmixing(wm, ica).encode(x);
        // greedy correlation matching, both assignments
        const double keep = std::min(std::abs(correlation(y.col(0), s.col(0))), std::abs(correlation(y.col(1), s.col(1))));
        const double swap = std::min(std::abs(correlation(y.col(0), s.col(1))), std::abs(correlation(y.col(1), s.col(0))));
        EXPECT_GE(std::max(keep, swap), 0.99) << to_string(g);
    }
}

TEST(FastIca, AlignedInputGivesSignedPermutation) {
    // unit-variance independent sources are already white
    const Matrix s = std::sqrt(3.0) * uniform_sources(20000, 10);
    const auto ica = fastica_fit(s, IcaNonlinearity::tanh, 1e-6, 500, 11);
    for (Eigen::Index row = 0; row < 2; ++row) EXPECT_GE(ica.rotation.row(row).cwiseAbs().maxCoeff(), 0.99);
    EXPECT_LT(max_abs_offdiag(ica.rotation.transpose() * ica.rotation), 1e-8);
    // through the whitening step the composed map is a scaled signed permutation
    const auto wm = whiten_fit(s);
    const auto full = ica_unmixing(wm, fastica_fit(whiten_apply(wm, s), IcaNonlinearity::tanh, 1e-6, 500, 11));
    for (Eigen::Index row = 0; row < 2; ++row)
        EXPECT_GE(full.W.row(row).cwiseAbs().maxCoeff() / full.W.row(row).norm(), 0.99);
}

TEST(FastIca, GaussianSourcesStillReturnOrthogonalModel) {
    const Matrix x = gaussian(5000, 2, 12);
    const auto wm = whiten_fit(x);
    const auto ica = fastica_fit(whiten_apply(wm, x), IcaNonlinearity::tanh, 1e-6, 50, 13);
    EXPECT_LE(ica.iterations, 50);
    EXPECT_LT(max_abs_offdiag(ica.rotation.transpose() * ica.rotation), 1e-8);
}

TEST(FastIca, NonlinearityNames) {
    EXPECT_EQ(ica_nonlinearity_from_string("cube"), IcaNonlinearity::cube);
    EXPECT_EQ(to_string(IcaNonlinearity::tanh), "tanh");
    EXPECT_THROW(ica_nonlinearity_from_string("logcosh"), Error);
}

TEST(Hfs, DeterministicAndNearStartOnFactorizedSupport) {
    const Matrix x = uniform_sources(4000, 14);
    HfsConfig cfg;
    cfg.batch_size = 1000;
    cfg.max_epochs = 20;
    cfg.seed = 15;
    const auto a = hfs_fit(x, cfg);
    const auto b = hfs_fit(x, cfg);
    EXPECT_EQ(a.step_losses, b.step_losses);
    EXPECT_EQ(a.model.W, b.model.W);
    // initial weights are orthonormal; the small step size keeps them close
    const Matrix init = random_orthonormal_rows(2, 2, Rng::stream(15, 1).next());
    EXPECT_LT((a.model.W - init).cwiseAbs().maxCoeff(), 0.05);
}

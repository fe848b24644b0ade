#include "gridalign/criterion.hpp"
#include "gridalign/synth.hpp"

#include "fd_oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace gridalign;
using gridalign::testing::fd_gradient;
using gridalign::testing::relative_error;

namespace {

Matrix random_codes(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double spread = 1.0) {
    Rng rng(seed);
    Matrix z(n, d);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < d; ++c) z(r, c) = rng.uniform(-spread, spread);
    return z;
}

// Smallest gap, relative to |V_i|, between the largest and runner-up |component|.
double argmax_margin(const Matrix& codes, double sigma) {
    const Matrix v = self_kde(codes, sigma).gradients;
    double margin = INFINITY;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        Vector a = v.row(i).cwiseAbs().transpose();
        std::sort(a.data(), a.data() + a.size(), std::greater<>());
        margin = std::min(margin, (a(0) - a(1)) / v.row(i).norm());
    }
    return margin;
}

double argmin_margin(const Matrix& codes) {
    double margin = INFINITY;
    for (Eigen::Index i = 0; i < codes.rows(); ++i)
        for (Eigen::Index k = 0; k < codes.rows(); ++k) {
            if (i == k) continue;
            Vector a = (codes.row(i) - codes.row(k)).cwiseAbs().transpose();
            std::sort(a.data(), a.data() + a.size());
            margin = std::min(margin, (a(1) - a(0)) / a.norm());
        }
    return margin;
}

GradientField field_of(const Matrix& v) { return GradientField::from_vectors(v); }

Matrix grid_codes(long n, std::uint64_t seed) {
    auto spec = make_grid_spec({4, 4}, {{-1.5, 1.5}, {-1.5, 1.5}}, seed);
    return sample_latents(spec, n, seed + 1);
}

}  // namespace

TEST(GradAxis, AxisAlignedAndDiagonalFields) {
    // Codes on a horizontal line have purely horizontal gradients.
    Matrix line(20, 2);
    for (int i = 0; i < 20; ++i) line.row(i) << 0.05 * i * i, 0.0;
    EXPECT_NEAR(loss_grad_axis(line, 0.3).value, -1.0, 1e-12);
    Matrix diag(20, 2);
    for (int i = 0; i < 20; ++i) diag.row(i) << 0.05 * i * i, 0.05 * i * i;
    EXPECT_NEAR(loss_grad_axis(diag, 0.3).value, -1.0 / std::sqrt(2.0), 1e-12);
}

TEST(GradAxis, RatioIdentityAndBounds) {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto d = static_cast<Eigen::Index>(2 + rng.below(3));
        const Matrix z = random_codes(12, d, 1000 + trial);
        const double sigma = rng.uniform(0.1, 1.0);
        const double ratio = loss_grad_axis(z, sigma).value;
        EXPECT_NEAR(ratio, loss_grad_axis_weighted(z, sigma), 1e-12);
        EXPECT_GE(ratio, -1.0 - 1e-15);
        EXPECT_LE(ratio, -1.0 / std::sqrt(static_cast<double>(d)) + 1e-15);
    }
}

TEST(GradAxis, RotationIncreasesLossOnAxisAlignedCodes) {
    const Matrix z = grid_codes(600, 3);
    const Matrix rotated = DiffeoSpec::rotation2d(std::numbers::pi / 4).apply_forward(z);
    EXPECT_GT(loss_grad_axis(rotated, 0.1).value, loss_grad_axis(z, 0.1).value);
}

TEST(GradAxis, GradientMatchesFiniteDifferences) {
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 10 && seed < 100; ++seed) {
        const Matrix z = random_codes(30, 2 + static_cast<Eigen::Index>(seed % 2), seed);
        const double sigma = 0.3;
        if (argmax_margin(z, sigma) < 1e-3) continue;
        const auto got = loss_grad_axis(z, sigma);
        const Matrix fd = fd_gradient(z, 1e-6, [&](const Matrix& x) { return loss_grad_axis(x, sigma).value; });
        EXPECT_LT(relative_error(got.grad_wrt_codes, fd), 1e-4) << "seed " << seed;
        ++checked;
    }
    EXPECT_EQ(checked, 10);
    EXPECT_THROW(loss_grad_axis(Matrix::Zero(1, 2), 0.1), Error);
}

TEST(NeighborWeights, Properties) {
    Matrix two(2, 2);
    two << 0.0, 0.0, 0.1, 0.0;
    const Matrix b = neighbor_weights(two, field_of(Matrix::Ones(2, 2)), 0.5);
    EXPECT_DOUBLE_EQ(b(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(b(1, 0), 0.5);
    EXPECT_EQ(b(0, 0), 0.0);

    const Matrix z = random_codes(15, 2, 2);
    const Matrix bz = neighbor_weights(z, grad_log_density(KdeModel(z, 0.3), z), 0.4);
    EXPECT_LT((bz - bz.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(bz.sum(), 1.0, 1e-12);

    Matrix three(3, 2);
    three << 0.0, 0.0, 0.05, 0.0, 5.0, 0.0;
    const Matrix bf = neighbor_weights(three, field_of(Matrix::Ones(3, 2)), 0.1);
    EXPECT_LT(bf(0, 2), 1e-8 * bf(0, 1));

    // zero field: uniform off-diagonal fallback
    const Matrix bu = neighbor_weights(three, field_of(Matrix::Zero(3, 2)), 0.1);
    EXPECT_DOUBLE_EQ(bu(0, 1), 1.0 / 6.0);
    EXPECT_EQ(bu(1, 1), 0.0);
}

TEST(PairTerms, ConstructedFields) {
    Matrix z(3, 2);
    z << 0.0, 0.0, 0.1, 0.05, 0.2, -0.1;
    Matrix parallel(3, 2);
    parallel << 1.0, 2.0, 2.0, 4.0, 0.5, 1.0;
    EXPECT_NEAR(grad_local_value(z, field_of(parallel), 0.5), -1.0, 1e-12);

    Matrix two(2, 2);
    two << 0.0, 0.0, 0.1, 0.1;
    Matrix ortho(2, 2);
    ortho << 1.0, 0.0, 0.0, 3.0;
    EXPECT_NEAR(grad_local_value(two, field_of(ortho), 0.5), 0.0, 1e-15);

    Matrix horizontal(2, 2);
    horizontal << 0.0, 0.0, 0.3, 0.0;
    EXPECT_EQ(points_local_value(horizontal, field_of(Matrix::Ones(2, 2)), 0.5), 0.0);
    EXPECT_NEAR(points_local_value(two, field_of(Matrix::Ones(2, 2)), 0.5), 0.5, 1e-15);

    // gradient (0,1) at both points, displacement along x: orthogonal
    Matrix up(2, 2);
    up << 0.0, 1.0, 0.0, 1.0;
    EXPECT_NEAR(points_grad_value(horizontal, field_of(up), 0.5), 0.0, 1e-15);
    // gradient along the displacement: each ordered pair contributes its weight
    Matrix along(2, 2);
    along << 1.0, 0.0, 1.0, 0.0;
    EXPECT_NEAR(points_grad_value(horizontal, field_of(along), 0.5), 1.0, 1e-15);
}

TEST(PairTerms, PointsLocalOnCodes) {
    Matrix horizontal(2, 2);
    horizontal << 0.0, 0.0, 0.3, 0.0;
    EXPECT_EQ(loss_points_local(horizontal, 0.2, 0.5).value, 0.0);
}

TEST(PairTerms, GradientsMatchFiniteDifferences) {
    const double sigma = 0.3, sigma2 = 0.4;
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 6 && seed < 100; ++seed) {
        const Matrix z = random_codes(16, 2, 500 + seed, 0.7);
        if (argmin_margin(z) < 1e-3) continue;
        const auto gl = loss_grad_local(z, sigma, sigma2);
        const auto pl = loss_points_local(z, sigma, sigma2);
        const auto pg = loss_points_grad(z, sigma, sigma2);
        auto fd = [&](auto fn) { return fd_gradient(z, 1e-6, [&](const Matrix& x) { return fn(x).value; }); };
        EXPECT_LT(relative_error(gl.grad_wrt_codes, fd([&](const Matrix& x) { return loss_grad_local(x, sigma, sigma2); })),
                  1e-4);
        EXPECT_LT(
            relative_error(pl.grad_wrt_codes, fd([&](const Matrix& x) { return loss_points_local(x, sigma, sigma2); })),
            1e-4);
        EXPECT_LT(
            relative_error(pg.grad_wrt_codes, fd([&](const Matrix& x) { return loss_points_grad(x, sigma, sigma2); })),
            1e-4);
        ++checked;
    }
    EXPECT_EQ(checked, 6);
}

TEST(Reconstruction, ValuesAndGradient) {
    const Matrix z = random_codes(40, 2, 3);
    const auto h = DiffeoSpec::compose({DiffeoSpec::coordwise({MonotoneMap::cubic(1.0), MonotoneMap::affine(2, 1)}),
                                        DiffeoSpec::rotation2d(0.3)});
    const Matrix x = h.apply_forward(z);
    EXPECT_NEAR(loss_reconstruction(z, h, x).value, 0.0, 1e-20);

    const Vector c = (Vector(2) << 0.3, -0.4).finished();
    const Matrix shifted = z.rowwise() + c.transpose();
    EXPECT_NEAR(loss_reconstruction(z, Matrix(Matrix::Identity(2, 2)), shifted).value, c.squaredNorm(), 1e-15);

    const Matrix targets = random_codes(40, 3, 4);
    const Matrix dec = random_codes(3, 2, 5);
    const auto got = loss_reconstruction(z, dec, targets);
    const Matrix fd = fd_gradient(z, 1e-6, [&](const Matrix& q) { return loss_reconstruction(q, dec, targets).value; });
    EXPECT_LT(relative_error(got.grad_wrt_codes, fd), 1e-6);

    const auto got_h = loss_reconstruction(z, h, shifted);
    const Matrix fd_h = fd_gradient(z, 1e-6, [&](const Matrix& q) { return loss_reconstruction(q, h, shifted).value; });
    EXPECT_LT(relative_error(got_h.grad_wrt_codes, fd_h), 1e-6);

    EXPECT_THROW(loss_reconstruction(z, dec, random_codes(39, 3, 4)), Error);
}

TEST(Total, WeightedSum) {
    const Matrix z = random_codes(20, 2, 6);
    const Matrix targets = random_codes(20, 2, 7);
    const Decoder dec = Matrix(Matrix::Identity(2, 2));
    LossWeights none{0, 0, 0, 0, 0, 0.5};
    const auto zero = loss_total(z, none, 0.3, dec, &targets);
    EXPECT_EQ(zero.value, 0.0);
    EXPECT_EQ(zero.grad_wrt_codes, Matrix::Zero(20, 2));

    LossWeights axis_only{0, 1, 0, 0, 0, 0.5};
    const auto a = loss_total(z, axis_only, 0.3);
    const auto b = loss_grad_axis(z, 0.3);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.grad_wrt_codes, b.grad_wrt_codes);

    LossWeights all{0.3, 1.0, 0.2, 0.7, 0.1, 0.5};
    LossWeights twice{0.6, 2.0, 0.4, 1.4, 0.2, 0.5};
    const auto one = loss_total(z, all, 0.3, dec, &targets);
    const auto two = loss_total(z, twice, 0.3, dec, &targets);
    EXPECT_NEAR(two.value, 2 * one.value, 1e-12);
    EXPECT_LT((two.grad_wrt_codes - 2 * one.grad_wrt_codes).cwiseAbs().maxCoeff(), 1e-12);

    EXPECT_THROW(loss_total(z, LossWeights{-1, 0, 0, 0, 0, 0.5}, 0.3), Error);
    EXPECT_THROW(loss_total(z, all, 0.3), Error);  // reconstruction without decoder
}

TEST(Hfs, FactorizedSupportHasZeroDistance) {
    // Every combination of per-axis values is present.
    Matrix z(36, 2);
    for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b) z.row(a * 6 + b) << 0.3 * a, 0.5 * b * b;
    EXPECT_EQ(loss_hfs_hard(z, 1).value, 0.0);
}

TEST(Hfs, DiagonalSupportIsPenalized) {
    Matrix z(50, 2);
    for (int i = 0; i < 50; ++i) z.row(i) << 0.02 * i, 0.02 * i;
    EXPECT_GT(loss_hfs_hard(z, 2).value, 0.1);
}

TEST(Hfs, AppendingRecombinedPointsDoesNotIncrease) {
    const Matrix z = grid_codes(300, 8);
    const auto sources = recombination_sources(z.rows(), z.cols(), 5);
    const Matrix rec = recombine(z, sources);
    Matrix both(z.rows() + rec.rows(), 2);
    both << z, rec;
    const double before = directed_hausdorff(rec, z).distance;
    EXPECT_LE(directed_hausdorff(rec, both).distance, before);
    EXPECT_EQ(loss_hfs_hard(z, 5).value, before);
}

TEST(Hfs, GradientMatchesFiniteDifferences) {
    const Matrix z = random_codes(40, 2, 9);
    const auto got = loss_hfs_hard(z, 3);
    const Matrix fd = fd_gradient(z, 1e-7, [&](const Matrix& x) { return loss_hfs_hard(x, 3).value; });
    EXPECT_LT(relative_error(got.grad_wrt_codes, fd), 1e-4);
}

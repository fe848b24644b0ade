#include "gridalign/synth.hpp"
#include "gridalign/train.hpp"

#include "fd_oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace gridalign;
using gridalign::testing::relative_error;

namespace {

Matrix uniform_box(Eigen::Index n, std::uint64_t seed, double lo = 0.0, double hi = 4.0) {
    Rng rng(seed);
    Matrix z(n, 2);
    for (Eigen::Index r = 0; r < n; ++r) z.row(r) << rng.uniform(lo, hi), rng.uniform(lo, hi);
    return z;
}

Matrix grid_latents(Eigen::Index n, std::uint64_t seed) {
    const auto spec = make_grid_spec({4, 4}, {{0, 4}, {0, 4}}, seed);
    return sample_latents(spec, n, seed + 1);
}

Matrix rotated(const Matrix& z, double degrees) {
    const double a = degrees * std::numbers::pi / 180.0;
    Matrix r(2, 2);
    r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return z * r.transpose();
}

}  // namespace

TEST(Standardize, SmallColumn) {
    Matrix x(2, 1);
    x << 0.0, 2.0;
    const auto s = standardize(x);
    EXPECT_DOUBLE_EQ(s.data(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(s.data(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(s.mean(0), 1.0);
    EXPECT_DOUBLE_EQ(s.scale(0), 1.0);
    EXPECT_TRUE(s.constant_columns.empty());
}

TEST(Standardize, IdempotentAndRoundTrip) {
    Matrix x = uniform_box(500, 1, -3.0, 7.0);
    x.col(1) *= 1e3;
    const auto s = standardize(x);
    const auto again = standardize(s.data);
    EXPECT_LT((again.data - s.data).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((destandardize(s.data, s.mean, s.scale) - x).cwiseAbs().maxCoeff() / x.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Standardize, ConstantColumnAndEmpty) {
    Matrix x = Matrix::Ones(10, 2);
    x.col(0) = Vector::LinSpaced(10, 0, 9);
    const auto s = standardize(x);
    ASSERT_EQ(s.constant_columns.size(), 1u);
    EXPECT_EQ(s.constant_columns[0], 1);
    EXPECT_EQ(s.scale(1), 1.0);
    EXPECT_EQ(s.data.col(1), Vector::Zero(10));
    EXPECT_THROW(standardize(Matrix(0, 2)), Error);
}

TEST(SgdStep, ZeroGradientDecaysVelocity) {
    const Matrix W = Matrix::Identity(2, 2);
    Matrix v(2, 2);
    v << 0.5, -1.0, 0.25, 2.0;
    const BatchLoss zero = [](const Matrix& c, std::int64_t) { return LossValue{1.5, Matrix::Zero(c.rows(), c.cols())}; };
    const auto r = sgd_step(W, v, uniform_box(10, 2), 0.1, 0.9, zero);
    EXPECT_EQ(r.velocity, Matrix(0.9 * v));
    EXPECT_EQ(r.W, Matrix(W + 0.9 * v));
    EXPECT_EQ(r.loss, 1.5);
}

TEST(SgdStep, PlainGradientStepWithoutMomentum) {
    const Matrix batch = uniform_box(64, 3);
    Matrix W(2, 2);
    W << 1.0, 0.3, -0.2, 0.9;
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.learning_rate = 0.05;
    const auto r = sgd_step(W, Matrix::Zero(2, 2), batch, cfg);
    EXPECT_LT((r.W - (W - 0.05 * r.grad_W)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SgdStep, OneStepReducesGradAxisOnRotatedData) {
    const Matrix batch = rotated(grid_latents(1500, 4), 45.0);
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.learning_rate = 0.01;
    cfg.standardize_codes = false;
    const Matrix W = Matrix::Identity(2, 2);
    const auto r = sgd_step(W, Matrix::Zero(2, 2), batch, cfg);
    const double before = loss_grad_axis(batch * W.transpose(), cfg.bandwidth).value;
    const double after = loss_grad_axis(batch * r.W.transpose(), cfg.bandwidth).value;
    EXPECT_DOUBLE_EQ(r.loss, before);
    EXPECT_LT(after, before);
}

TEST(SgdStep, NonFiniteIsNumericErrorWithStep) {
    const BatchLoss bad = [](const Matrix& c, std::int64_t) { return LossValue{NAN, Matrix::Zero(c.rows(), c.cols())}; };
    try {
        sgd_step(Matrix::Identity(2, 2), Matrix::Zero(2, 2), uniform_box(4, 5), 0.1, 0.9, bad, 17);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
        EXPECT_NE(std::string(e.what()).find("step 17"), std::string::npos);
    }
}

TEST(SgdStep, WeightGradientMatchesFiniteDifferences) {
    // 64-point batch; argmax ties are measure-zero for random data, so the value is smooth around W.
    const Matrix batch = rotated(grid_latents(64, 6), 30.0);
    Matrix W(2, 2);
    W << 0.9, 0.2, -0.1, 1.1;
    for (bool stdz : {false, true}) {
        TrainConfig cfg;
        cfg.bandwidth = 0.3;
        cfg.standardize_codes = stdz;
        cfg.loss_weights.grad_local = 0.5;
        const auto loss = criterion_loss(cfg);
        const auto r = sgd_step(W, Matrix::Zero(2, 2), batch, 0.1, 0.0, loss);
        const Matrix fd = gridalign::testing::fd_gradient(
            W, 1e-6, [&](const Matrix& w) { return loss(batch * w.transpose(), 0).value; });
        EXPECT_LT(relative_error(r.grad_W, fd), 1e-3) << "standardized " << stdz;
    }
}

TEST(RandomOrthonormal, RowsAreOrthonormalAndSeeded) {
    const Matrix q = random_orthonormal_rows(3, 5, 7);
    EXPECT_LT((q * q.transpose() - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(q, random_orthonormal_rows(3, 5, 7));
    EXPECT_NE(q, random_orthonormal_rows(3, 5, 8));
}

TEST(TrainLinear, Deterministic) {
    const Matrix x = rotated(grid_latents(2000, 8), 20.0);
    TrainConfig cfg;
    cfg.batch_size = 500;
    cfg.max_epochs = 3;
    cfg.seed = 11;
    const auto a = train_linear(x, cfg);
    const auto b = train_linear(x, cfg);
    EXPECT_EQ(a.step_losses, b.step_losses);
    EXPECT_EQ(a.model.W, b.model.W);
    EXPECT_EQ(a.step_losses.size(), 12u);
    EXPECT_EQ(a.epoch_losses.size(), 3u);
    EXPECT_EQ(a.log.size(), a.step_losses.size());
    EXPECT_EQ(a.stop_reason, "max_epochs");
}

TEST(TrainLinear, AlignedDataPlateausNearStart) {
    const Matrix x = grid_latents(4000, 9);
    TrainConfig cfg;
    cfg.batch_size = 1000;
    cfg.max_epochs = 60;
    cfg.plateau_window = 5;
    cfg.seed = 3;
    const auto t = train_linear(x, cfg, {}, Matrix(Matrix::Identity(2, 2)));
    EXPECT_EQ(t.stop_reason, "plateau");
    EXPECT_LT(t.epochs_run, 60);
    EXPECT_NEAR(t.epoch_losses[static_cast<std::size_t>(t.best_epoch)], t.epoch_losses[0], 1e-2);
    EXPECT_EQ(t.epoch_losses.size(), static_cast<std::size_t>(t.epochs_run));
}

TEST(TrainLinear, Validation) {
    TrainConfig cfg;
    cfg.batch_size = 100;
    EXPECT_THROW(train_linear(uniform_box(50, 1), cfg), Error);
    cfg.momentum = 1.0;
    EXPECT_THROW(train_linear(uniform_box(500, 1), cfg), Error);
    cfg = {};
    cfg.learning_rate = 0.0;
    try {
        cfg.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
}

TEST(TrainLinear, DescentOverFirstEpochsOnCorrelatedGrid) {
    auto spec = make_grid_spec({4, 4}, {{0, 4}, {0, 4}}, 1);
    spec = boost_diagonal(spec, calibrate_diagonal_boost(spec, 0.61));
    const Matrix z = sample_latents(spec, 50000, 101);
    const Matrix m = random_invertible_matrix(2, 201);
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.max_epochs = cfg.plateau_window;
    cfg.plateau_window = 1000;
    const auto t = train_linear(z * m.transpose(), cfg);
    ASSERT_EQ(t.epoch_losses.size(), 10u);
    std::vector<double> smooth;
    for (std::size_t e = 1; e + 1 < t.epoch_losses.size(); ++e)
        smooth.push_back((t.epoch_losses[e - 1] + t.epoch_losses[e] + t.epoch_losses[e + 1]) / 3.0);
    // non-increasing up to the batch noise floor
    for (std::size_t e = 1; e < smooth.size(); ++e) EXPECT_LE(smooth[e], smooth[e - 1] + 1e-3) << "epoch " << e;
    EXPECT_LT(smooth.back(), smooth.front());
}

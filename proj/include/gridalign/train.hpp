#pragma once

// Linear unmixing map trained by minibatch SGD with momentum.

#include "gridalign/criterion.hpp"
#include "gridalign/error.hpp"
#include "gridalign/linalg.hpp"
#include "gridalign/rng.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gridalign {

struct Standardized {
    Matrix data;
    Vector mean;
    Vector scale;
    std::vector<Eigen::Index> constant_columns;  // given scale 1
};

/// Per-column zero mean and unit (population) standard deviation.
inline Standardized standardize(const Matrix& x) {
    require(x.rows() >= 2 && x.cols() >= 1, "standardize: need at least 2 rows and 1 column");
    require(x.allFinite(), "standardize: non-finite input");
    const auto n = x.rows(), D = x.cols();
    Standardized out;
    out.mean.resize(D);
    out.scale.resize(D);
    for (Eigen::Index c = 0; c < D; ++c) {
        const double mu = pairwise_sum(0, static_cast<std::size_t>(n), [&](std::size_t r) {
                              return x(static_cast<Eigen::Index>(r), c);
                          }) / static_cast<double>(n);
        const double var = pairwise_sum(0, static_cast<std::size_t>(n), [&](std::size_t r) {
                               const double t = x(static_cast<Eigen::Index>(r), c) - mu;
                               return t * t;
                           }) / static_cast<double>(n);
        out.mean(c) = mu;
        double s = std::sqrt(var);
        if (!(s > 1e-300) || s <= 1e-12 * std::max(1.0, std::abs(mu))) {
            s = 1.0;
            out.constant_columns.push_back(c);
        }
        out.scale(c) = s;
    }
    out.data = (x.rowwise() - out.mean.transpose()).array().rowwise() / out.scale.transpose().array();
    return out;
}

inline Matrix destandardize(const Matrix& z, const Vector& mean, const Vector& scale) {
    require(z.cols() == mean.size() && z.cols() == scale.size(), "destandardize: shape mismatch");
    return (z.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
}

/// codes = ((x - input_mean) / input_scale) W^T
struct UnmixingModel {
    Matrix W;  // d x D
    Vector input_mean;
    Vector input_scale;

    Eigen::Index latent_dim() const { return W.rows(); }
    Eigen::Index input_dim() const { return W.cols(); }

    Matrix encode(const Matrix& x) const {
        require(x.cols() == W.cols(), "encode: expected " + std::to_string(W.cols()) + " columns, got " +
                                          std::to_string(x.cols()));
        const Matrix s = (x.rowwise() - input_mean.transpose()).array().rowwise() / input_scale.transpose().array();
        return s * W.transpose();
    }

    /// The linear part acting on raw inputs: W diag(1/scale).
    Matrix effective_matrix() const { return W * input_scale.cwiseInverse().asDiagonal(); }

    bool full_row_rank() const {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
        const auto& s = svd.singularValues();
        return s.size() > 0 && s(s.size() - 1) > 1e-10 * s(0);
    }
};

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    Eigen::Index batch_size = 5000;
    int max_epochs = 200;
    int plateau_window = 10;
    double plateau_tol = 1e-3;
    double bandwidth = 0.1;
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    bool standardize_codes = true;  // criterion sees per-batch standardized code axes

    void validate() const {
        auto bad = [](const std::string& m) { fail(ErrorKind::config, "train config: " + m); };
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must be in [0, 1)");
        if (batch_size < 2) bad("batch_size must be >= 2");
        if (max_epochs < 1) bad("max_epochs must be >= 1");
        if (plateau_window < 1) bad("plateau_window must be >= 1");
        if (!(plateau_tol >= 0.0)) bad("plateau_tol must be >= 0");
        if (!(bandwidth > 0.0)) bad("bandwidth must be > 0");
        try {
            loss_weights.validate();
        } catch (const Error& e) {
            bad(e.what());
        }
    }
};

/// Loss on a batch of codes; the second argument is the global step index.
using BatchLoss = std::function<LossValue(const Matrix& codes, std::int64_t step)>;

/// Called after every epoch with the current weights and epoch-mean loss.
using EpochHook = std::function<void(int epoch, const Matrix& W, double mean_loss)>;

struct StepResult {
    Matrix W;
    Matrix velocity;
    double loss = 0.0;
    Matrix grad_W;
};

/// One momentum step on a standardized batch.
inline StepResult sgd_step(const Matrix& W, const Matrix& velocity, const Matrix& batch, double learning_rate,
                           double momentum, const BatchLoss& loss, std::int64_t step = 0) {
    require(batch.cols() == W.cols(), "sgd_step: batch width does not match W");
    require(velocity.rows() == W.rows() && velocity.cols() == W.cols(), "sgd_step: velocity shape mismatch");
    const Matrix codes = batch * W.transpose();
    const LossValue lv = loss(codes, step);
    StepResult out;
    out.loss = lv.value;
    out.grad_W = lv.grad_wrt_codes.transpose() * batch;
    if (!std::isfinite(lv.value) || !out.grad_W.allFinite())
        fail(ErrorKind::numeric, "non-finite loss or gradient at step " + std::to_string(step));
    out.velocity = momentum * velocity - learning_rate * out.grad_W;
    out.W = W + out.velocity;
    if (!out.W.allFinite()) fail(ErrorKind::numeric, "non-finite weights at step " + std::to_string(step));
    return out;
}

/// The training criterion of a config as a batch loss.
inline BatchLoss criterion_loss(const TrainConfig& cfg) {
    return [cfg](const Matrix& codes, std::int64_t) {
        auto inner = [&](const Matrix& c) { return loss_total(c, cfg.loss_weights, cfg.bandwidth); };
        return cfg.standardize_codes ? on_standardized_codes(codes, inner) : inner(codes);
    };
}

inline StepResult sgd_step(const Matrix& W, const Matrix& velocity, const Matrix& batch, const TrainConfig& cfg,
                           std::int64_t step = 0) {
    const BatchLoss loss = criterion_loss(cfg);
    return sgd_step(W, velocity, batch, cfg.learning_rate, cfg.momentum, loss, step);
}

/// Rows of a seeded random orthonormal d x D matrix.
inline Matrix random_orthonormal_rows(Eigen::Index d, Eigen::Index D, std::uint64_t seed) {
    require(d >= 1 && d <= D, "random_orthonormal_rows: need 1 <= d <= D");
    Rng rng(seed);
    Eigen::MatrixXd g(D, d);
    for (Eigen::Index r = 0; r < D; ++r)
        for (Eigen::Index c = 0; c < d; ++c) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(D, d);
    const Eigen::MatrixXd rr = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < d; ++c)
        if (rr(c, c) < 0) q.col(c) *= -1.0;
    return q.transpose();
}

struct LogRow {
    int epoch;
    std::int64_t step;
    double loss;
};

struct TrainTrace {
    std::vector<double> step_losses;
    std::vector<double> epoch_losses;
    std::vector<LogRow> log;
    UnmixingModel model;  // weights at the end of the best epoch
    int best_epoch = -1;
    int epochs_run = 0;
    std::string stop_reason;
    std::vector<Eigen::Index> constant_columns;
};

/// Generic minibatch loop: standardize, seeded orthonormal init, seeded
/// per-epoch shuffle (incomplete last batch dropped), plateau stopping.
inline TrainTrace train_with_loss(const Matrix& x, Eigen::Index latent_dim, double learning_rate, double momentum,
                                  Eigen::Index batch_size, int max_epochs, int plateau_window, double plateau_tol,
                                  std::uint64_t seed, const BatchLoss& loss,
                                  const std::optional<Matrix>& initial_W = std::nullopt,
                                  const EpochHook& on_epoch = {}) {
    require(x.rows() >= batch_size, "train: fewer rows (" + std::to_string(x.rows()) + ") than batch_size (" +
                                        std::to_string(batch_size) + ")");
    const Standardized st = standardize(x);
    const auto n = x.rows(), D = x.cols();
    Matrix W = initial_W ? *initial_W : random_orthonormal_rows(latent_dim, D, Rng::stream(seed, 1).next());
    require(W.rows() == latent_dim && W.cols() == D, "train: initial W has the wrong shape");
    Matrix velocity = Matrix::Zero(W.rows(), W.cols());

    TrainTrace trace;
    trace.constant_columns = st.constant_columns;
    trace.model = {W, st.mean, st.scale};
    double best = INFINITY;
    int since = 0;
    std::int64_t step = 0;
    Rng shuffler = Rng::stream(seed, 2);
    const Eigen::Index batches = n / batch_size;
    Matrix batch(batch_size, D);
    trace.stop_reason = "max_epochs";
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        const auto perm = shuffler.permutation(static_cast<std::size_t>(n));
        std::vector<double> losses;
        for (Eigen::Index b = 0; b < batches; ++b) {
            for (Eigen::Index r = 0; r < batch_size; ++r)
                batch.row(r) = st.data.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(b * batch_size + r)]));
            auto res = sgd_step(W, velocity, batch, learning_rate, momentum, loss, step);
            W = std::move(res.W);
            velocity = std::move(res.velocity);
            trace.step_losses.push_back(res.loss);
            trace.log.push_back({epoch, step, res.loss});
            losses.push_back(res.loss);
            ++step;
        }
        const double mean = pairwise_sum(0, losses.size(), [&](std::size_t i) { return losses[i]; }) /
                            static_cast<double>(losses.size());
        trace.epoch_losses.push_back(mean);
        trace.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(epoch, W, mean);
        if (mean < best - plateau_tol * std::abs(best) || !std::isfinite(best)) {
            best = mean;
            trace.best_epoch = epoch;
            trace.model.W = W;
            since = 0;
        } else if (++since >= plateau_window) {
            trace.stop_reason = "plateau";
            break;
        }
    }
    return trace;
}

inline TrainTrace train_linear(const Matrix& x, const TrainConfig& cfg, std::optional<Eigen::Index> latent_dim = {},
                               const std::optional<Matrix>& initial_W = std::nullopt, const EpochHook& on_epoch = {}) {
    cfg.validate();
    return train_with_loss(x, latent_dim.value_or(x.cols()), cfg.learning_rate, cfg.momentum, cfg.batch_size,
                           cfg.max_epochs, cfg.plateau_window, cfg.plateau_tol, cfg.seed, criterion_loss(cfg), initial_W,
                           on_epoch);
}

}  // namespace gridalign

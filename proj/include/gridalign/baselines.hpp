#pragma once

// Comparison methods: PCA whitening, FastICA and a Hausdorff factorized-support trainer.

#include "gridalign/criterion.hpp"
#include "gridalign/error.hpp"
#include "gridalign/linalg.hpp"
#include "gridalign/rng.hpp"
#include "gridalign/train.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

namespace gridalign {

struct WhitenModel {
    Vector mean;          // length D
    Matrix matrix;        // d x D, rows are scaled principal directions
    Vector eigenvalues;   // kept covariance eigenvalues, descending
    Matrix eigenvectors;  // D x d, matching columns
};

inline Matrix covariance(const Matrix& x, const Vector& mean) {
    const Matrix c = x.rowwise() - mean.transpose();
    Matrix cov = c.transpose() * c / static_cast<double>(x.rows());
    return 0.5 * (cov + cov.transpose());
}

/// Projects onto the d leading principal components with unit variance.
inline WhitenModel whiten_fit(const Matrix& x, std::optional<Eigen::Index> dims = {}) {
    const auto n = x.rows(), D = x.cols();
    require(n > D, "whiten_fit: need more rows than columns");
    require(x.allFinite(), "whiten_fit: non-finite input");
    const Eigen::Index d = dims.value_or(D);
    require(d >= 1 && d <= D, "whiten_fit: bad output dimension");
    WhitenModel m;
    m.mean = x.colwise().mean().transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(covariance(x, m.mean)));
    if (es.info() != Eigen::Success) fail(ErrorKind::numeric, "whiten_fit: eigendecomposition failed");
    const Vector ev = es.eigenvalues().reverse();
    const Eigen::MatrixXd evec = es.eigenvectors().rowwise().reverse();
    const double top = ev(0);
    if (!(top > 0.0) || ev(d - 1) <= 1e-12 * top)
        fail(ErrorKind::numeric, "whiten_fit: covariance rank is below the requested dimension " + std::to_string(d));
    m.eigenvalues = ev.head(d);
    m.eigenvectors = evec.leftCols(d);
    // fix eigenvector signs: largest-magnitude entry positive
    for (Eigen::Index c = 0; c < d; ++c) {
        Eigen::Index arg;
        m.eigenvectors.col(c).cwiseAbs().maxCoeff(&arg);
        if (m.eigenvectors(arg, c) < 0) m.eigenvectors.col(c) *= -1.0;
    }
    m.matrix = m.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() * m.eigenvectors.transpose();
    return m;
}

inline Matrix whiten_apply(const WhitenModel& m, const Matrix& x) {
    require(x.cols() == m.matrix.cols(), "whiten_apply: column count mismatch");
    return (x.rowwise() - m.mean.transpose()) * m.matrix.transpose();
}

/// Inverse of whiten_apply on the retained subspace.
inline Matrix dewhiten(const WhitenModel& m, const Matrix& y) {
    require(y.cols() == m.matrix.rows(), "dewhiten: column count mismatch");
    const Matrix back = m.eigenvectors * m.eigenvalues.cwiseSqrt().asDiagonal();  // D x d
    return (y * back.transpose()).rowwise() + m.mean.transpose();
}

enum class IcaNonlinearity { tanh, cube };

inline std::string to_string(IcaNonlinearity g) { return g == IcaNonlinearity::tanh ? "tanh" : "cube"; }

inline IcaNonlinearity ica_nonlinearity_from_string(const std::string& s) {
    if (s == "tanh") return IcaNonlinearity::tanh;
    if (s == "cube") return IcaNonlinearity::cube;
    fail(ErrorKind::config, "unknown FastICA nonlinearity '" + s + "' (expected tanh or cube)");
}

struct IcaModel {
    Matrix rotation;  // d x d, applied after whitening
    IcaNonlinearity nonlinearity = IcaNonlinearity::tanh;
    int iterations = 0;
    bool converged = false;
};

/// (W W^T)^{-1/2} W
inline Matrix symmetric_decorrelation(const Matrix& w) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(w * w.transpose()));
    if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0))
        fail(ErrorKind::numeric, "FastICA: singular decorrelation");
    const Eigen::MatrixXd inv_sqrt =
        es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    return inv_sqrt * w;
}

/// Symmetric fixed-point FastICA on whitened data.
inline IcaModel fastica_fit(const Matrix& xw, IcaNonlinearity g = IcaNonlinearity::tanh, double tol = 1e-6,
                            int max_iter = 500, std::uint64_t seed = 0) {
    const auto n = xw.rows(), d = xw.cols();
    require(n >= 2 && d >= 1, "fastica_fit: need at least 2 rows");
    require(tol > 0.0 && max_iter >= 1, "fastica_fit: tol and max_iter must be positive");
    IcaModel m;
    m.nonlinearity = g;
    Matrix w = symmetric_decorrelation(random_orthonormal_rows(d, d, seed));
    for (int it = 1; it <= max_iter; ++it) {
        const Matrix y = xw * w.transpose();  // n x d
        Matrix gy(n, d);
        Vector dg(d);
        for (Eigen::Index c = 0; c < d; ++c) {
            double acc = 0.0;
            for (Eigen::Index r = 0; r < n; ++r) {
                const double v = y(r, c);
                if (g == IcaNonlinearity::tanh) {
                    const double t = std::tanh(v);
                    gy(r, c) = t;
                    acc += 1.0 - t * t;
                } else {
                    gy(r, c) = v * v * v;
                    acc += 3.0 * v * v;
                }
            }
            dg(c) = acc / static_cast<double>(n);
        }
        Matrix next = gy.transpose() * xw / static_cast<double>(n) - dg.asDiagonal() * w;
        if (!next.allFinite()) fail(ErrorKind::numeric, "FastICA: non-finite update at iteration " + std::to_string(it));
        next = symmetric_decorrelation(next);
        const double change = (1.0 - (next * w.transpose()).diagonal().cwiseAbs().array()).abs().maxCoeff();
        w = std::move(next);
        m.iterations = it;
        if (change < tol) {
            m.converged = true;
            break;
        }
    }
    m.rotation = w;
    return m;
}

/// Whitening followed by the ICA rotation, as a linear unmixing model.
inline UnmixingModel ica_unmixing(const WhitenModel& wm, const IcaModel& ica) {
    UnmixingModel u;
    u.W = ica.rotation * wm.matrix;
    u.input_mean = wm.mean;
    u.input_scale = Vector::Ones(wm.mean.size());
    return u;
}

struct HfsConfig {
    double learning_rate = 1e-4;
    double momentum = 0.0;
    Eigen::Index batch_size = 5000;
    int max_epochs = 200;
    int plateau_window = 10;
    double plateau_tol = 1e-3;
    std::uint64_t seed = 0;

    void validate() const {
        TrainConfig t;
        t.learning_rate = learning_rate;
        t.momentum = momentum;
        t.batch_size = batch_size;
        t.max_epochs = max_epochs;
        t.plateau_window = plateau_window;
        t.plateau_tol = plateau_tol;
        t.validate();
    }
};

/// Linear map trained on the hard Hausdorff recombination loss alone.
inline TrainTrace hfs_fit(const Matrix& x, const HfsConfig& cfg, std::optional<Eigen::Index> latent_dim = {}) {
    cfg.validate();
    const BatchLoss loss = [&](const Matrix& codes, std::int64_t step) {
        return loss_hfs_hard(codes, Rng::stream(cfg.seed ^ 0x5bd1e995ull, static_cast<std::uint64_t>(step)).next());
    };
    return train_with_loss(x, latent_dim.value_or(x.cols()), cfg.learning_rate, cfg.momentum, cfg.batch_size,
                           cfg.max_epochs, cfg.plateau_window, cfg.plateau_tol, cfg.seed, loss);
}

}  // namespace gridalign

#pragma once

// Training criteria on learned codes, each returning its value together with
// the exact derivative with respect to the codes. Argmax / argmin indices and
// max-component signs are held fixed (they are locally constant away from ties).

#include "gridalign/density.hpp"
#include "gridalign/error.hpp"
#include "gridalign/linalg.hpp"
#include "gridalign/rng.hpp"
#include "gridalign/synth.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

namespace gridalign {

struct LossValue {
    double value = 0.0;
    Matrix grad_wrt_codes;  // n x d

    LossValue& operator+=(const LossValue& o) {
        value += o.value;
        grad_wrt_codes += o.grad_wrt_codes;
        return *this;
    }
};

inline LossValue scaled(LossValue v, double factor) {
    v.value *= factor;
    v.grad_wrt_codes *= factor;
    return v;
}

struct LossWeights {
    double grad_local = 0.0;    // lambda1
    double grad_axis = 1.0;     // lambda2
    double points_local = 0.0;  // lambda3
    double points_grad = 0.0;   // lambda4
    double reconstruction = 0.0;  // lambda5
    double neighborhood = 0.1;  // sigma2

    void validate() const {
        for (double l : {grad_local, grad_axis, points_local, points_grad, reconstruction})
            require(l >= 0.0 && std::isfinite(l), "loss weights must be non-negative");
        require(neighborhood > 0.0, "loss weights: neighborhood scale must be positive");
    }
};

namespace detail {

// Index of the largest |v_j|, lowest index on ties.
inline Eigen::Index argmax_abs(const double* v, Eigen::Index d) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < d; ++j)
        if (std::abs(v[j]) > std::abs(v[best])) best = j;
    return best;
}

inline Eigen::Index argmin_abs(const double* v, Eigen::Index d) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < d; ++j)
        if (std::abs(v[j]) < std::abs(v[best])) best = j;
    return best;
}

}  // namespace detail

/// -sum_i alpha_i |Vbar_i|_inf over the self-KDE gradient field of the codes.
///
/// With alpha_i = |V_i|/sum|V| this equals -(sum |V_i|_inf)/(sum |V_i|_2), which
/// is the form differentiated here.
inline LossValue loss_grad_axis(const Matrix& codes, double bandwidth) {
    require(codes.rows() >= 2, "loss_grad_axis: need at least 2 codes");
    const auto n = codes.rows(), d = codes.cols();
    const SelfKde kde = self_kde(codes, bandwidth);
    const Matrix& v = kde.gradients;

    std::vector<double> l2(static_cast<std::size_t>(n)), linf(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        l2[i] = v.row(i).norm();
        linf[i] = std::abs(v(i, detail::argmax_abs(v.data() + i * d, d)));
    }
    const double a = pairwise_sum(0, l2.size(), [&](std::size_t i) { return linf[i]; });
    const double b = pairwise_sum(0, l2.size(), [&](std::size_t i) { return l2[i]; });

    LossValue out;
    out.grad_wrt_codes = Matrix::Zero(n, d);
    if (b == 0.0) return out;
    out.value = -a / b;

    Matrix upstream = Matrix::Zero(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (l2[i] == 0.0) continue;
        const auto j = detail::argmax_abs(v.data() + i * d, d);
        upstream.row(i) = (a / (b * b) / l2[i]) * v.row(i);
        upstream(i, j) -= (v(i, j) > 0.0 ? 1.0 : -1.0) / b;
    }
    out.grad_wrt_codes = self_kde_backward(codes, bandwidth, kde, upstream);
    return out;
}

/// Same value evaluated the long way, as the weighted sum of normalized
/// infinity norms. Used to cross-check the ratio form.
inline double loss_grad_axis_weighted(const Matrix& codes, double bandwidth) {
    const KdeModel model(codes, bandwidth);
    const GradientField field = grad_log_density(model, codes);
    const Vector alpha = importance_weights(field);
    double total = 0.0;
    for (Eigen::Index i = 0; i < codes.rows(); ++i) {
        if (field.magnitudes(i) == 0.0) continue;
        total += alpha(i) * (field.vectors.row(i) / field.magnitudes(i)).cwiseAbs().maxCoeff();
    }
    return -total;
}

namespace detail {

struct PairWeights {
    Matrix beta;
    bool uniform = false;  // fallback used, weights do not depend on the codes
};

inline PairWeights pair_weights(const Matrix& codes, const GradientField& field, double sigma2) {
    const auto n = codes.rows();
    require(n >= 2, "neighbor_weights: need at least 2 codes");
    require(field.vectors.rows() == n, "neighbor_weights: field and codes differ in size");
    require(sigma2 > 0.0, "neighbor_weights: sigma2 must be positive");
    const Vector alpha = importance_weights(field);
    PairWeights out{Matrix::Zero(n, n), false};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k)
            if (i != k)
                out.beta(i, k) = alpha(i) * alpha(k) *
                                 std::exp(-(codes.row(i) - codes.row(k)).squaredNorm() / (2.0 * sigma2 * sigma2));
    const double total = out.beta.sum();
    if (!(total > 0.0) || (field.magnitudes.array() == 0.0).all()) {
        out.beta.setConstant(1.0 / static_cast<double>(n * (n - 1)));
        out.beta.diagonal().setZero();
        out.uniform = true;
        return out;
    }
    out.beta /= total;
    return out;
}

}  // namespace detail

/// Normalized pair weights beta_ii' = alpha_i alpha_i' exp(-|z_i - z_i'|^2 / (2 sigma2^2)),
/// zero on the diagonal, summing to 1. Uniform off-diagonal when every weight vanishes.
inline Matrix neighbor_weights(const Matrix& codes, const GradientField& field, double sigma2) {
    return detail::pair_weights(codes, field, sigma2).beta;
}

namespace detail {

// Per-pair term f(i, k) with its partial derivatives.
struct PairTerm {
    double f = 0.0;
    Vector df_dvi, df_dvk;  // w.r.t. raw gradients V_i, V_k (may be empty = zero)
    Vector df_dzi, df_dzk;  // direct dependence on codes (may be empty = zero)
};

// Value of sum_{i!=k} betabar_ik f(i,k) for a given gradient field.
template <typename Term>
double pair_value(const Matrix& codes, const GradientField& field, double sigma2, const Term& term) {
    const Matrix beta = pair_weights(codes, field, sigma2).beta;
    double value = 0.0;
    for (Eigen::Index i = 0; i < codes.rows(); ++i)
        for (Eigen::Index k = 0; k < codes.rows(); ++k)
            if (i != k && beta(i, k) != 0.0) value += beta(i, k) * term(i, k, field.vectors, field.magnitudes).f;
    return value;
}

// Generic weighted pair loss sum_{i!=k} betabar_ik f(i,k), differentiated through
// betabar (which depends on |V| and on the codes) and through f.
template <typename Term>
LossValue pair_loss(const Matrix& codes, double bandwidth, double sigma2, const Term& term) {
    require(codes.rows() >= 2, "pair loss: need at least 2 codes");
    require(sigma2 > 0.0, "pair loss: sigma2 must be positive");
    const auto n = codes.rows(), d = codes.cols();
    const SelfKde kde = self_kde(codes, bandwidth);
    const Matrix& v = kde.gradients;
    const GradientField field = GradientField::from_vectors(v);
    const auto weights = pair_weights(codes, field, sigma2);
    const Matrix& beta = weights.beta;
    const bool uniform = weights.uniform;

    std::vector<PairTerm> terms(static_cast<std::size_t>(n * n));
    double value = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) {
            if (i == k || beta(i, k) == 0.0) continue;
            auto& t = terms[static_cast<std::size_t>(i * n + k)];
            t = term(i, k, v, field.magnitudes);
            value += beta(i, k) * t.f;
        }

    Matrix dv = Matrix::Zero(n, d);
    Matrix dz = Matrix::Zero(n, d);
    const double s22 = sigma2 * sigma2;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) {
            if (i == k || beta(i, k) == 0.0) continue;
            const auto& t = terms[static_cast<std::size_t>(i * n + k)];
            const double b = beta(i, k);
            if (t.df_dvi.size()) dv.row(i) += b * t.df_dvi.transpose();
            if (t.df_dvk.size()) dv.row(k) += b * t.df_dvk.transpose();
            if (t.df_dzi.size()) dz.row(i) += b * t.df_dzi.transpose();
            if (t.df_dzk.size()) dz.row(k) += b * t.df_dzk.transpose();
            if (uniform) continue;
            // d betabar_ik = betabar_ik (d log beta_ik - sum betabar d log beta)
            const double c = b * (t.f - value);
            const double ni = field.magnitudes(i), nk = field.magnitudes(k);
            dv.row(i) += (c / (ni * ni)) * v.row(i);
            dv.row(k) += (c / (nk * nk)) * v.row(k);
            const auto diff = (codes.row(i) - codes.row(k)) / s22;
            dz.row(i) -= c * diff;
            dz.row(k) += c * diff;
        }

    LossValue out;
    out.value = value;
    out.grad_wrt_codes = dz + self_kde_backward(codes, bandwidth, kde, dv);
    return out;
}

}  // namespace detail

namespace detail {

struct GradLocalTerm {
    PairTerm operator()(Eigen::Index i, Eigen::Index k, const Matrix& v, const Vector& mag) const {
        PairTerm t;
        if (mag(i) == 0.0 || mag(k) == 0.0) return t;
        const Vector ui = v.row(i).transpose() / mag(i);
        const Vector uk = v.row(k).transpose() / mag(k);
        const double c = ui.dot(uk);
        t.f = -c;
        t.df_dvi = -(uk - c * ui) / mag(i);
        t.df_dvk = -(ui - c * uk) / mag(k);
        return t;
    }
};

struct PointsLocalTerm {
    const Matrix& codes;
    PairTerm operator()(Eigen::Index i, Eigen::Index k, const Matrix&, const Vector&) const {
        PairTerm t;
        const Vector delta = (codes.row(i) - codes.row(k)).transpose();
        const double r2 = delta.squaredNorm();
        if (r2 == 0.0) return t;
        const auto j = argmin_abs(delta.data(), delta.size());
        t.f = delta(j) * delta(j) / r2;
        Vector g = (-2.0 * delta(j) * delta(j) / (r2 * r2)) * delta;
        g(j) += 2.0 * delta(j) / r2;
        t.df_dzi = g;
        t.df_dzk = -g;
        return t;
    }
};

struct PointsGradTerm {
    const Matrix& codes;
    PairTerm operator()(Eigen::Index i, Eigen::Index k, const Matrix& v, const Vector& mag) const {
        PairTerm t;
        const Vector e = (codes.row(k) - codes.row(i)).transpose();
        const double r = e.norm();
        if (r == 0.0 || mag(i) == 0.0) return t;
        const Vector u = e / r;
        const Vector vi = v.row(i).transpose() / mag(i);
        const double c = vi.dot(u);
        t.f = c * c;
        t.df_dvi = 2.0 * c * (u - c * vi) / mag(i);
        const Vector de = 2.0 * c * (vi - c * u) / r;
        t.df_dzk = de;
        t.df_dzi = -de;
        return t;
    }
};

}  // namespace detail

/// -sum betabar_ik <Vbar_i, Vbar_k>: neighbouring high-gradient points share a gradient direction.
inline LossValue loss_grad_local(const Matrix& codes, double bandwidth, double sigma2) {
    return detail::pair_loss(codes, bandwidth, sigma2, detail::GradLocalTerm{});
}

/// sum betabar_ik min_j ((z_ij - z_kj)/|z_i - z_k|)^2: neighbours share a coordinate.
/// Coincident pairs contribute nothing.
inline LossValue loss_points_local(const Matrix& codes, double bandwidth, double sigma2) {
    return detail::pair_loss(codes, bandwidth, sigma2, detail::PointsLocalTerm{codes});
}

/// sum betabar_ik <Vbar_i, (z_k - z_i)/|z_k - z_i|>^2: gradients orthogonal to neighbour displacements.
inline LossValue loss_points_grad(const Matrix& codes, double bandwidth, double sigma2) {
    return detail::pair_loss(codes, bandwidth, sigma2, detail::PointsGradTerm{codes});
}

// Values of the pair terms for an externally supplied gradient field.
inline double grad_local_value(const Matrix& codes, const GradientField& field, double sigma2) {
    return detail::pair_value(codes, field, sigma2, detail::GradLocalTerm{});
}
inline double points_local_value(const Matrix& codes, const GradientField& field, double sigma2) {
    return detail::pair_value(codes, field, sigma2, detail::PointsLocalTerm{codes});
}
inline double points_grad_value(const Matrix& codes, const GradientField& field, double sigma2) {
    return detail::pair_value(codes, field, sigma2, detail::PointsGradTerm{codes});
}

/// Decoder for the reconstruction term: a D x d matrix or a closed-form map.
using Decoder = std::variant<Matrix, DiffeoSpec>;

/// (1/n) sum |decoder(z_i) - x_i|^2.
inline LossValue loss_reconstruction(const Matrix& codes, const Decoder& decoder, const Matrix& targets) {
    require(codes.rows() == targets.rows(), "loss_reconstruction: codes and targets differ in rows");
    const auto n = codes.rows();
    require(n >= 1, "loss_reconstruction: empty batch");
    LossValue out;
    out.grad_wrt_codes = Matrix::Zero(n, codes.cols());
    std::visit(
        [&](const auto& dec) {
            using T = std::decay_t<decltype(dec)>;
            if constexpr (std::is_same_v<T, Matrix>) {
                require(dec.cols() == codes.cols() && dec.rows() == targets.cols(),
                        "loss_reconstruction: decoder shape does not match codes/targets");
                const Matrix resid = codes * dec.transpose() - targets;
                out.value = resid.squaredNorm() / static_cast<double>(n);
                out.grad_wrt_codes = (2.0 / static_cast<double>(n)) * resid * dec;
            } else {
                require(dec.dim() == static_cast<std::size_t>(codes.cols()) &&
                            dec.dim() == static_cast<std::size_t>(targets.cols()),
                        "loss_reconstruction: decoder dimension does not match codes/targets");
                double total = 0.0;
                for (Eigen::Index r = 0; r < n; ++r) {
                    const Vector z = codes.row(r).transpose();
                    const Vector resid = dec.forward(z) - targets.row(r).transpose();
                    total += resid.squaredNorm();
                    out.grad_wrt_codes.row(r) =
                        ((2.0 / static_cast<double>(n)) * dec.jacobian(z).transpose() * resid).transpose();
                }
                out.value = total / static_cast<double>(n);
            }
        },
        decoder);
    return out;
}

/// Weighted sum of all criterion terms. The decoder is only consulted when its weight is non-zero.
inline LossValue loss_total(const Matrix& codes, const LossWeights& w, double bandwidth,
                            const std::optional<Decoder>& decoder = std::nullopt,
                            const Matrix* targets = nullptr) {
    w.validate();
    LossValue out{0.0, Matrix::Zero(codes.rows(), codes.cols())};
    if (w.grad_local > 0.0) out += scaled(loss_grad_local(codes, bandwidth, w.neighborhood), w.grad_local);
    if (w.grad_axis > 0.0) out += scaled(loss_grad_axis(codes, bandwidth), w.grad_axis);
    if (w.points_local > 0.0) out += scaled(loss_points_local(codes, bandwidth, w.neighborhood), w.points_local);
    if (w.points_grad > 0.0) out += scaled(loss_points_grad(codes, bandwidth, w.neighborhood), w.points_grad);
    if (w.reconstruction > 0.0) {
        require(decoder.has_value() && targets != nullptr, "loss_total: reconstruction weight needs a decoder");
        out += scaled(loss_reconstruction(codes, *decoder, *targets), w.reconstruction);
    }
    return out;
}

/// Evaluates `inner` on per-column standardized codes (zero mean, unit population
/// variance) and pulls the gradient back through the standardization.
template <typename Inner>
LossValue on_standardized_codes(const Matrix& codes, const Inner& inner) {
    const auto n = codes.rows(), d = codes.cols();
    require(n >= 2, "on_standardized_codes: need at least 2 codes");
    Matrix zs(n, d);
    Vector sd(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double mu = codes.col(j).mean();
        const double var = (codes.col(j).array() - mu).square().mean();
        if (!(var > 0.0)) fail(ErrorKind::numeric, "code axis " + std::to_string(j) + " has zero variance");
        sd(j) = std::sqrt(var);
        zs.col(j) = (codes.col(j).array() - mu) / sd(j);
    }
    LossValue lv = inner(static_cast<const Matrix&>(zs));
    Matrix g(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const auto gj = lv.grad_wrt_codes.col(j).array();
        const double gmean = gj.mean();
        const double gz = (gj * zs.col(j).array()).mean();
        g.col(j) = (gj - gmean - zs.col(j).array() * gz) / sd(j);
    }
    lv.grad_wrt_codes = std::move(g);
    return lv;
}

// ---------------------------------------------------------------------------
// Simplified factorized-support baseline (hard Hausdorff surrogate)
// ---------------------------------------------------------------------------

/// Source rows of the recombined points: entry (r, j) is the code row whose
/// coordinate j is used for recombined point r. One seeded permutation per axis.
inline IndexMatrix recombination_sources(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    IndexMatrix src(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const auto p = rng.permutation(static_cast<std::size_t>(n));
        for (Eigen::Index r = 0; r < n; ++r) src(r, j) = static_cast<int>(p[static_cast<std::size_t>(r)]);
    }
    return src;
}

inline Matrix recombine(const Matrix& codes, const IndexMatrix& sources) {
    Matrix out(sources.rows(), codes.cols());
    for (Eigen::Index r = 0; r < sources.rows(); ++r)
        for (Eigen::Index j = 0; j < codes.cols(); ++j) out(r, j) = codes(sources(r, j), j);
    return out;
}

struct HausdorffResult {
    double distance = 0.0;
    Eigen::Index from = 0;  // row of `from` attaining the max
    Eigen::Index to = 0;    // its nearest row of `to`
};

/// max over rows a of `from` of min over rows b of `to` of |a - b|.
inline HausdorffResult directed_hausdorff(const Matrix& from, const Matrix& to) {
    require(from.rows() >= 1 && to.rows() >= 1 && from.cols() == to.cols(), "directed_hausdorff: bad shapes");
    HausdorffResult res{-1.0, 0, 0};
    const auto d = from.cols();
    for (Eigen::Index a = 0; a < from.rows(); ++a) {
        double best = INFINITY;
        Eigen::Index arg = 0;
        for (Eigen::Index b = 0; b < to.rows(); ++b) {
            double r2 = 0.0;
            for (Eigen::Index j = 0; j < d; ++j) {
                const double t = from(a, j) - to(b, j);
                r2 += t * t;
            }
            if (r2 < best) {
                best = r2;
                arg = b;
            }
            if (res.distance >= 0.0 && best <= res.distance * res.distance) break;  // cannot raise the max
        }
        const double dist = std::sqrt(best);
        if (dist > res.distance) res = {dist, a, arg};
    }
    return res;
}

/// Hard Hausdorff distance from recombined codes to the codes themselves.
inline LossValue loss_hfs_hard(const Matrix& codes, std::uint64_t seed) {
    require(codes.rows() >= 2, "loss_hfs_hard: need at least 2 codes");
    const auto sources = recombination_sources(codes.rows(), codes.cols(), seed);
    const Matrix rec = recombine(codes, sources);
    const auto h = directed_hausdorff(rec, codes);
    LossValue out{h.distance, Matrix::Zero(codes.rows(), codes.cols())};
    if (h.distance == 0.0) return out;
    const Vector dir = (rec.row(h.from) - codes.row(h.to)).transpose() / h.distance;
    for (Eigen::Index j = 0; j < codes.cols(); ++j) {
        out.grad_wrt_codes(sources(h.from, j), j) += dir(j);
        out.grad_wrt_codes(h.to, j) -= dir(j);
    }
    return out;
}

}  // namespace gridalign

#pragma once

// Isotropic Gaussian kernel density estimation with analytic derivatives of
// the log-density.

#include "gridalign/error.hpp"
#include "gridalign/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace gridalign {

/// Log-weights further than this below the maximum are dropped from kernel sums.
inline constexpr double kernel_log_floor = 40.0;

class KdeModel {
public:
    KdeModel(Matrix points, double bandwidth) : points_(std::move(points)), bandwidth_(bandwidth) {
        require(bandwidth_ > 0.0 && std::isfinite(bandwidth_), "kde: bandwidth must be positive");
        require(points_.rows() >= 1 && points_.cols() >= 1, "kde: need at least one reference point");
        require(points_.allFinite(), "kde: reference points must be finite");
    }

    const Matrix& points() const noexcept { return points_; }
    double bandwidth() const noexcept { return bandwidth_; }
    Eigen::Index dim() const noexcept { return points_.cols(); }
    Eigen::Index size() const noexcept { return points_.rows(); }

private:
    Matrix points_;
    double bandwidth_;
};

namespace detail {

// Fills log_w[k] = -|z - p_k|^2 / (2 sigma^2) and returns the maximum.
inline double kernel_log_weights(const KdeModel& model, const double* z, std::vector<double>& log_w) {
    const auto m = model.size();
    const auto d = model.dim();
    const double inv2s2 = 0.5 / (model.bandwidth() * model.bandwidth());
    log_w.resize(static_cast<std::size_t>(m));
    double best = -INFINITY;
    const double* p = model.points().data();
    for (Eigen::Index k = 0; k < m; ++k) {
        double r2 = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double t = p[k * d + j] - z[j];
            r2 += t * t;
        }
        log_w[k] = -r2 * inv2s2;
        best = std::max(best, log_w[k]);
    }
    return best;
}

// Softmax in place, dropping entries below max - floor. Returns log of the raw sum.
inline double softmax_in_place(std::vector<double>& w, double best) {
    const double cut = best - kernel_log_floor;
    for (double& v : w) v = v < cut ? 0.0 : std::exp(v - best);
    const double total = pairwise_sum(0, w.size(), [&](std::size_t k) { return w[k]; });
    for (double& v : w) v /= total;
    return best + std::log(total);
}

}  // namespace detail

inline void check_query(const KdeModel& model, Eigen::Index cols) {
    if (cols != model.dim())
        fail("kde: query has dimension " + std::to_string(cols) + ", model has " + std::to_string(model.dim()));
}

/// log p(z) for p = mean of N(p_k, sigma^2 I).
inline double log_density(const KdeModel& model, const Vector& z) {
    check_query(model, z.size());
    std::vector<double> w;
    const double best = detail::kernel_log_weights(model, z.data(), w);
    const double lse = detail::softmax_in_place(w, best);
    const double s2 = model.bandwidth() * model.bandwidth();
    return lse - std::log(static_cast<double>(model.size())) -
           0.5 * static_cast<double>(model.dim()) * std::log(2.0 * std::numbers::pi * s2);
}

/// Log-density gradients at a set of query points.
struct GradientField {
    Matrix vectors;
    Vector magnitudes;

    static GradientField from_vectors(Matrix v) {
        GradientField f;
        f.magnitudes = v.rowwise().norm();
        f.vectors = std::move(v);
        return f;
    }
};

/// Gradient of log p at z: sum_k w_k (p_k - z) / sigma^2 with softmax weights w.
inline Vector grad_log_density_at(const KdeModel& model, const Vector& z) {
    check_query(model, z.size());
    std::vector<double> w;
    detail::softmax_in_place(w, detail::kernel_log_weights(model, z.data(), w));
    const auto d = model.dim();
    Vector g = Vector::Zero(d);
    const double* p = model.points().data();
    for (Eigen::Index j = 0; j < d; ++j)
        g(j) = pairwise_sum(0, w.size(), [&](std::size_t k) { return w[k] * (p[k * d + j] - z(j)); });
    return g / (model.bandwidth() * model.bandwidth());
}

inline GradientField grad_log_density(const KdeModel& model, const Matrix& queries) {
    check_query(model, queries.cols());
    Matrix v(queries.rows(), queries.cols());
    for (Eigen::Index r = 0; r < queries.rows(); ++r)
        v.row(r) = grad_log_density_at(model, Vector(queries.row(r).transpose())).transpose();
    return GradientField::from_vectors(std::move(v));
}

/// Hessian of log p at z: (Cov_w(p) / sigma^2 - I) / sigma^2.
inline Matrix hessian_log_density(const KdeModel& model, const Vector& z) {
    check_query(model, z.size());
    std::vector<double> w;
    detail::softmax_in_place(w, detail::kernel_log_weights(model, z.data(), w));
    const auto d = model.dim();
    const double s2 = model.bandwidth() * model.bandwidth();
    Vector mean = Vector::Zero(d);
    Matrix second = Matrix::Zero(d, d);
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 0.0) continue;
        const Vector delta = model.points().row(static_cast<Eigen::Index>(k)).transpose() - z;
        mean += w[k] * delta;
        second.noalias() += w[k] * delta * delta.transpose();
    }
    Matrix h = (second - mean * mean.transpose()) / (s2 * s2);
    h.diagonal().array() -= 1.0 / s2;
    // exact symmetry
    return 0.5 * (h + h.transpose());
}

/// Normalized gradient magnitudes; uniform when every magnitude is zero.
inline Vector importance_weights(const GradientField& field) {
    const auto n = field.magnitudes.size();
    require(n >= 1, "importance_weights: empty field");
    const double total =
        pairwise_sum(0, static_cast<std::size_t>(n), [&](std::size_t i) { return field.magnitudes(i); });
    if (total == 0.0) return Vector::Constant(n, 1.0 / static_cast<double>(n));
    return field.magnitudes / total;
}

/// Self-density state: gradients of log p at every reference point of the KDE
/// built on `codes` (each point included in its own kernel sum).
///
/// Every point is its own nearest kernel centre, so the largest log-weight is 0
/// and the floor becomes a fixed cutoff radius sigma * sqrt(2 * floor).
struct SelfKde {
    Matrix gradients;                // n x d
    std::vector<double> kernel_sum;  // sum_k exp(-|z_i - z_k|^2 / (2 sigma^2)), self included
    std::vector<Eigen::Index> order; // rows sorted by their first coordinate
};

namespace detail {

// Visits every unordered pair (a, b), a != b, within the kernel cutoff as
// fn(a, b, kernel, delta) where delta = z_b - z_a. Fixed visiting order.
template <typename Fn>
void for_each_near_pair(const Matrix& codes, double bandwidth, const std::vector<Eigen::Index>& order, Fn&& fn) {
    const auto n = codes.rows(), d = codes.cols();
    const double inv2s2 = 0.5 / (bandwidth * bandwidth);
    const double cutoff2 = 2.0 * kernel_log_floor * bandwidth * bandwidth;
    const double cutoff = std::sqrt(cutoff2);
    const double* p = codes.data();
    double delta[16];
    std::vector<double> dyn;
    double* dptr = delta;
    if (d > 16) {
        dyn.resize(static_cast<std::size_t>(d));
        dptr = dyn.data();
    }
    for (Eigen::Index ia = 0; ia < n; ++ia) {
        const Eigen::Index a = order[ia];
        const double* za = p + a * d;
        for (Eigen::Index ib = ia + 1; ib < n; ++ib) {
            const Eigen::Index b = order[ib];
            const double* zb = p + b * d;
            if (zb[0] - za[0] > cutoff) break;
            double r2 = 0.0;
            for (Eigen::Index j = 0; j < d; ++j) {
                dptr[j] = zb[j] - za[j];
                r2 += dptr[j] * dptr[j];
            }
            if (r2 > cutoff2) continue;
            fn(a, b, std::exp(-r2 * inv2s2), static_cast<const double*>(dptr));
        }
    }
}

}  // namespace detail

inline SelfKde self_kde(const Matrix& codes, double bandwidth) {
    const KdeModel model(codes, bandwidth);
    const auto n = codes.rows(), d = codes.cols();
    SelfKde out;
    out.order.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out.order[i] = i;
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return codes(a, 0) < codes(b, 0); });
    out.kernel_sum.assign(static_cast<std::size_t>(n), 1.0);
    Matrix drift = Matrix::Zero(n, d);  // sum_k K_ik (z_k - z_i)
    detail::for_each_near_pair(codes, bandwidth, out.order,
                               [&](Eigen::Index a, Eigen::Index b, double k, const double* delta) {
                                   out.kernel_sum[a] += k;
                                   out.kernel_sum[b] += k;
                                   for (Eigen::Index j = 0; j < d; ++j) {
                                       drift(a, j) += k * delta[j];
                                       drift(b, j) -= k * delta[j];
                                   }
                               });
    const double s2 = bandwidth * bandwidth;
    out.gradients.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) out.gradients.row(i) = drift.row(i) / (out.kernel_sum[i] * s2);
    return out;
}

/// Vector-Jacobian product through the self-KDE gradient field.
///
/// Given upstream[i] = dL/dV_i, returns dL/dz_l = sum_i (dV_i/dz_l)^T upstream[i],
/// accounting for each code both as a query and as a kernel centre.
inline Matrix self_kde_backward(const Matrix& codes, double bandwidth, const SelfKde& state, const Matrix& upstream) {
    const auto n = codes.rows(), d = codes.cols();
    require(upstream.rows() == n && upstream.cols() == d, "self_kde_backward: shape mismatch");
    const double s2 = bandwidth * bandwidth;
    const double* g = upstream.data();

    // With w_ab = K_ab / S_a and m_a the kernel-weighted mean around a,
    //   q_ab = w_ab g_a.(z_b - m_a) + w_ba g_b.(z_a - m_b)
    //   out_a += w_ba g_b + q_ab (z_b - z_a) / sigma^2
    //   out_b += w_ab g_a - q_ab (z_b - z_a) / sigma^2
    // plus the diagonal term g_l / S_l - g_l, all divided by sigma^2.
    std::vector<double> h(static_cast<std::size_t>(n));  // sigma^2 g_i . V_i = g_i . (m_i - z_i)
    for (Eigen::Index i = 0; i < n; ++i) h[i] = s2 * upstream.row(i).dot(state.gradients.row(i));

    Matrix out(n, d);
    for (Eigen::Index l = 0; l < n; ++l)
        for (Eigen::Index j = 0; j < d; ++j) out(l, j) = g[l * d + j] / state.kernel_sum[l] - g[l * d + j];

    detail::for_each_near_pair(codes, bandwidth, state.order,
                               [&](Eigen::Index a, Eigen::Index b, double k, const double* delta) {
                                   const double wab = k / state.kernel_sum[a];
                                   const double wba = k / state.kernel_sum[b];
                                   const double* ga = g + a * d;
                                   const double* gb = g + b * d;
                                   double gad = 0.0, gbd = 0.0;
                                   for (Eigen::Index j = 0; j < d; ++j) {
                                       gad += ga[j] * delta[j];
                                       gbd += gb[j] * delta[j];
                                   }
                                   const double q = (wab * (gad - h[a]) + wba * (-gbd - h[b])) / s2;
                                   for (Eigen::Index j = 0; j < d; ++j) {
                                       out(a, j) += wba * gb[j] + q * delta[j];
                                       out(b, j) += wab * ga[j] - q * delta[j];
                                   }
                               });
    return out / s2;
}

/// Regular-grid evaluation of |grad log p| over a 2-D slice.
struct Heatmap {
    std::vector<double> xs;  // axis-i coordinates, one per column
    std::vector<double> ys;  // axis-j coordinates, one per row
    Matrix values;           // ys.size() x xs.size()
};

struct BoundingBox {
    double x_lo, x_hi, y_lo, y_hi;
};

/// Other coordinates are held at the per-axis medians of the reference points.
inline Heatmap gradient_magnitude_heatmap(const KdeModel& model, const BoundingBox& box, int nx, int ny,
                                          std::size_t axis_x = 0, std::size_t axis_y = 1) {
    require(nx >= 2 && ny >= 2, "heatmap: resolution must be at least 2 per axis");
    const auto d = static_cast<std::size_t>(model.dim());
    require(axis_x < d && axis_y < d && axis_x != axis_y, "heatmap: invalid axes");
    require(box.x_hi > box.x_lo && box.y_hi > box.y_lo, "heatmap: degenerate bounding box");

    Vector base(model.dim());
    for (Eigen::Index j = 0; j < model.dim(); ++j) {
        std::vector<double> col(model.points().col(j).begin(), model.points().col(j).end());
        std::nth_element(col.begin(), col.begin() + static_cast<long>(col.size() / 2), col.end());
        base(j) = col[col.size() / 2];
    }

    Heatmap h;
    for (int c = 0; c < nx; ++c) h.xs.push_back(box.x_lo + (box.x_hi - box.x_lo) * c / (nx - 1));
    for (int r = 0; r < ny; ++r) h.ys.push_back(box.y_lo + (box.y_hi - box.y_lo) * r / (ny - 1));
    h.values.resize(ny, nx);
    for (int r = 0; r < ny; ++r) {
        for (int c = 0; c < nx; ++c) {
            Vector q = base;
            q(static_cast<Eigen::Index>(axis_x)) = h.xs[c];
            q(static_cast<Eigen::Index>(axis_y)) = h.ys[r];
            h.values(r, c) = grad_log_density_at(model, q).norm();
        }
    }
    return h;
}

}  // namespace gridalign

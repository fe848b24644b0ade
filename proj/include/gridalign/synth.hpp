#pragma once

// Grid-structured latent densities and closed-form mixing maps.

#include "gridalign/core_grid.hpp"
#include "gridalign/error.hpp"
#include "gridalign/linalg.hpp"
#include "gridalign/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace gridalign {

// ---------------------------------------------------------------------------
// GridSpec
// ---------------------------------------------------------------------------

/// Piecewise-uniform latent density: a prior mass per grid cell, uniform inside.
struct GridSpec {
    std::vector<Interval> ranges;       // support box, one interval per axis
    DiscreteCoordination coordination;  // thresholds strictly inside ranges
    std::vector<double> priors;         // indexed by flat_cell

    std::size_t dim() const noexcept { return ranges.size(); }

    /// Edges of axis i: lo, thresholds..., hi.
    std::vector<double> edges(std::size_t i) const {
        std::vector<double> e{ranges[i].lo};
        const auto& t = coordination.axis(i).values();
        e.insert(e.end(), t.begin(), t.end());
        e.push_back(ranges[i].hi);
        return e;
    }

    /// Box of a cell as one interval per axis.
    std::vector<Interval> cell_box(const CellIndex& c) const {
        std::vector<Interval> box(dim());
        for (std::size_t i = 0; i < dim(); ++i) {
            const auto e = edges(i);
            box[i] = {e[static_cast<std::size_t>(c.indices[i])], e[static_cast<std::size_t>(c.indices[i]) + 1]};
        }
        return box;
    }

    void validate() const {
        require(!ranges.empty(), "grid spec has no axes");
        require(coordination.dim() == dim(), "grid spec: coordination dimension does not match ranges");
        for (std::size_t i = 0; i < dim(); ++i) {
            require(ranges[i].hi > ranges[i].lo, "grid spec: degenerate range on axis " + std::to_string(i));
            for (double t : coordination.axis(i).values())
                require(t > ranges[i].lo && t < ranges[i].hi,
                        "grid spec: threshold outside the open range on axis " + std::to_string(i));
        }
        require(priors.size() == coordination.cell_count(), "grid spec: prior table size mismatch");
        for (double p : priors) require(std::isfinite(p) && p >= 0.0, "grid spec: negative or non-finite prior");
        const double total = pairwise_sum(0, priors.size(), [&](std::size_t k) { return priors[k]; });
        require(std::abs(total - 1.0) <= 1e-12, "grid spec: priors do not sum to 1");
    }
};

inline void normalize_priors(std::vector<double>& p) {
    const double total = pairwise_sum(0, p.size(), [&](std::size_t k) { return p[k]; });
    require(total > 0.0, "priors sum to zero");
    for (double& v : p) v /= total;
}

/// Random grid: per axis, cells-1 uniform thresholds (sorted, collisions
/// re-drawn) and i.i.d. standard-uniform priors, normalized.
inline GridSpec make_grid_spec(const std::vector<int>& cells_per_axis, const std::vector<Interval>& ranges,
                               std::uint64_t seed) {
    require(!cells_per_axis.empty(), "make_grid_spec: need at least one axis");
    require(cells_per_axis.size() == ranges.size(), "make_grid_spec: cells and ranges differ in length");
    Rng rng(seed);
    std::vector<Thresholds> axes;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        require(cells_per_axis[i] >= 2, "make_grid_spec: need at least 2 cells per axis");
        const auto [lo, hi] = ranges[i];
        require(hi > lo, "make_grid_spec: degenerate range on axis " + std::to_string(i));
        std::vector<double> t;
        while (t.size() < static_cast<std::size_t>(cells_per_axis[i] - 1)) {
            const double v = rng.uniform(lo, hi);
            if (v <= lo || v >= hi || std::find(t.begin(), t.end(), v) != t.end()) continue;
            t.push_back(v);
        }
        std::sort(t.begin(), t.end());
        axes.emplace_back(std::move(t));
    }
    GridSpec spec;
    spec.ranges = ranges;
    spec.coordination = DiscreteCoordination(std::move(axes));
    spec.priors.resize(spec.coordination.cell_count());
    for (double& p : spec.priors) p = rng.uniform();
    normalize_priors(spec.priors);
    spec.validate();
    return spec;
}

/// Multiply the prior of every cell with all-equal indices by `factor`, renormalize.
inline GridSpec boost_diagonal(const GridSpec& spec, double factor) {
    require(factor > 0.0 && std::isfinite(factor), "boost_diagonal: factor must be positive");
    const auto& a = spec.coordination;
    for (std::size_t i = 1; i < a.dim(); ++i)
        require(a.cells_on_axis(i) == a.cells_on_axis(0), "boost_diagonal: grid is not square");
    if (factor == 1.0) return spec;
    GridSpec out = spec;
    for (std::size_t id = 0; id < out.priors.size(); ++id) {
        const auto c = unflatten_cell(id, a);
        if (std::all_of(c.indices.begin(), c.indices.end(), [&](int k) { return k == c.indices[0]; }))
            out.priors[id] *= factor;
    }
    normalize_priors(out.priors);
    return out;
}

/// Exact Pearson correlation between latent axes i and j under the spec.
inline double latent_correlation(const GridSpec& spec, std::size_t i = 0, std::size_t j = 1) {
    require(i < spec.dim() && j < spec.dim() && i != j, "latent_correlation: bad axes");
    const auto ei = spec.edges(i), ej = spec.edges(j);
    double mi = 0, mj = 0, sii = 0, sjj = 0, sij = 0;
    for (std::size_t id = 0; id < spec.priors.size(); ++id) {
        const auto c = unflatten_cell(id, spec.coordination);
        const double p = spec.priors[id];
        const double a0 = ei[c.indices[i]], a1 = ei[c.indices[i] + 1];
        const double b0 = ej[c.indices[j]], b1 = ej[c.indices[j] + 1];
        const double ci = 0.5 * (a0 + a1), cj = 0.5 * (b0 + b1);
        mi += p * ci;
        mj += p * cj;
        sii += p * (a0 * a0 + a0 * a1 + a1 * a1) / 3.0;
        sjj += p * (b0 * b0 + b0 * b1 + b1 * b1) / 3.0;
        sij += p * ci * cj;
    }
    return (sij - mi * mj) / std::sqrt((sii - mi * mi) * (sjj - mj * mj));
}

/// Smallest diagonal boost factor giving the target correlation between axes 0 and 1.
inline double calibrate_diagonal_boost(const GridSpec& spec, double target) {
    require(spec.dim() >= 2, "calibrate_diagonal_boost: need d >= 2");
    auto corr = [&](double f) { return latent_correlation(boost_diagonal(spec, f), 0, 1); };
    if (corr(1.0) >= target) return 1.0;
    double lo = 0.0, hi = std::log(1e8);
    if (corr(std::exp(hi)) < target)
        fail(ErrorKind::numeric, "calibrate_diagonal_boost: target correlation is unreachable for this grid");
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        (corr(std::exp(mid)) < target ? lo : hi) = mid;
    }
    return std::exp(hi);
}

/// Categorical cell draw followed by a uniform draw inside the open cell box.
/// Row r uses its own counter-derived stream, so output is partition-independent.
inline Matrix sample_latents(const GridSpec& spec, long n, std::uint64_t seed) {
    require(n > 0, "sample_latents: n must be positive");
    spec.validate();
    const std::size_t d = spec.dim();
    std::vector<double> cumulative(spec.priors.size());
    std::partial_sum(spec.priors.begin(), spec.priors.end(), cumulative.begin());
    std::vector<std::vector<double>> edges(d);
    for (std::size_t i = 0; i < d; ++i) edges[i] = spec.edges(i);

    Matrix z(n, static_cast<Eigen::Index>(d));
    for (long r = 0; r < n; ++r) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
        const double u = rng.uniform() * cumulative.back();
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        std::size_t id = static_cast<std::size_t>(it - cumulative.begin());
        // skip zero-mass cells that share a cumulative value
        while (id < spec.priors.size() && spec.priors[id] == 0.0) ++id;
        if (id >= spec.priors.size()) id = spec.priors.size() - 1;
        const auto c = unflatten_cell(id, spec.coordination);
        for (std::size_t i = 0; i < d; ++i) {
            const double lo = edges[i][c.indices[i]], hi = edges[i][c.indices[i] + 1];
            double v;
            do {
                v = lo + (hi - lo) * rng.uniform_open();
            } while (!(v > lo && v < hi));
            z(r, static_cast<Eigen::Index>(i)) = v;
        }
    }
    return z;
}

inline nlohmann::json to_json(const GridSpec& s) {
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& r : s.ranges) ranges.push_back({r.lo, r.hi});
    return {{"ranges", ranges}, {"coordination", to_json(s.coordination)}, {"priors", s.priors}};
}

inline GridSpec grid_spec_from_json(const nlohmann::json& j) {
    GridSpec s;
    for (const auto& r : j.at("ranges")) s.ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    s.coordination = coordination_from_json(j.at("coordination"));
    s.priors = j.at("priors").get<std::vector<double>>();
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Monotone scalar maps
// ---------------------------------------------------------------------------

/// Strictly increasing scalar map with closed-form derivative and a robust inverse.
struct MonotoneMap {
    enum class Type { affine, cubic, tanh };
    Type type = Type::affine;
    // affine: y = scale*z + shift
    // cubic:  y = z^3 + a*z            (a > 0)
    // tanh:   y = scale*tanh(slope*z + shift) + offset
    double scale = 1.0;
    double shift = 0.0;
    double a = 1.0;
    double slope = 1.0;
    double offset = 0.0;

    static MonotoneMap affine(double scale, double shift) {
        require(scale > 0.0, "affine map needs a positive scale");
        return {Type::affine, scale, shift};
    }
    static MonotoneMap cubic(double a) {
        require(a > 0.0, "cubic map needs a > 0");
        MonotoneMap m;
        m.type = Type::cubic;
        m.a = a;
        return m;
    }
    static MonotoneMap tanh(double scale, double slope, double shift, double offset) {
        require(scale > 0.0 && slope > 0.0, "tanh map needs positive scale and slope");
        MonotoneMap m;
        m.type = Type::tanh;
        m.scale = scale;
        m.slope = slope;
        m.shift = shift;
        m.offset = offset;
        return m;
    }

    double forward(double z) const {
        switch (type) {
        case Type::affine: return scale * z + shift;
        case Type::cubic: return z * z * z + a * z;
        case Type::tanh: return scale * std::tanh(slope * z + shift) + offset;
        }
        return z;
    }

    double derivative(double z) const {
        switch (type) {
        case Type::affine: return scale;
        case Type::cubic: return 3.0 * z * z + a;
        case Type::tanh: {
            const double t = std::tanh(slope * z + shift);
            return scale * slope * (1.0 - t * t);
        }
        }
        return 1.0;
    }

    double inverse(double y) const {
        switch (type) {
        case Type::affine: return (y - shift) / scale;
        case Type::cubic: return invert_cubic(y);
        case Type::tanh: {
            const double u = (y - offset) / scale;
            if (!(std::abs(u) < 1.0)) fail(ErrorKind::numeric, "tanh map: value outside the image");
            return (std::atanh(u) - shift) / slope;
        }
        }
        return y;
    }

    /// Log of the derivative, computed stably for the tanh case.
    double log_derivative(double z) const {
        if (type == Type::tanh) {
            // 1 - tanh(x)^2 = 4 / (e^x + e^-x)^2
            const double x = std::abs(slope * z + shift);
            return std::log(scale * slope) + std::log(4.0) - 2.0 * (x + std::log1p(std::exp(-2.0 * x)));
        }
        return std::log(derivative(z));
    }

private:
    double invert_cubic(double y) const {
        // Newton, safeguarded by a bracket that always contains the root.
        double r = std::max({1.0, std::abs(y) / a, std::cbrt(std::abs(y))});
        double lo = -r, hi = r;
        double z = std::clamp(y / (a + 1.0), lo, hi);
        for (int it = 0; it < 200; ++it) {
            const double f = forward(z) - y;
            if (f == 0.0) return z;
            (f < 0.0 ? lo : hi) = z;
            double next = z - f / derivative(z);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            if (std::abs(next - z) <= 1e-12 * std::max(1.0, std::abs(z))) return next;
            z = next;
        }
        return z;
    }
};

// ---------------------------------------------------------------------------
// DiffeoSpec
// ---------------------------------------------------------------------------

class DiffeoSpec;

struct LinearMap {
    Matrix matrix;
    Matrix inverse;
    double log_abs_det = 0.0;
};

struct RotationMap {
    Matrix matrix;  // orthogonal
};

struct CoordwiseMap {
    std::vector<MonotoneMap> maps;
};

struct CompositionMap {
    std::vector<DiffeoSpec> parts;  // applied first to last
};

/// Axis bookkeeping of a map that sends each input axis to a single output axis.
struct AxisStructure {
    std::vector<std::size_t> permutation;  // input axis i -> output axis permutation[i]
    std::vector<int> signs;                // +1 increasing, -1 reversed
};

/// Invertible map with closed-form forward, inverse and log|det J|.
class DiffeoSpec {
public:
    using Node = std::variant<LinearMap, RotationMap, CoordwiseMap, CompositionMap>;

    static DiffeoSpec identity(std::size_t d) { return linear(Matrix::Identity(d, d)); }

    static DiffeoSpec linear(const Matrix& m) {
        require(m.rows() == m.cols() && m.rows() > 0, "linear map must be square");
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
        const auto& sv = svd.singularValues();
        const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
        require(cond < 1e6, "linear map is singular or ill-conditioned (condition number >= 1e6)");
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
        LinearMap node{m, Matrix(lu.inverse()), std::log(std::abs(lu.determinant()))};
        return DiffeoSpec(std::move(node));
    }

    static DiffeoSpec rotation(const Matrix& q) {
        require(q.rows() == q.cols() && q.rows() > 0, "rotation must be square");
        const double err = (q.transpose() * q - Matrix::Identity(q.rows(), q.cols())).cwiseAbs().maxCoeff();
        require(err < 1e-10, "rotation matrix is not orthogonal");
        return DiffeoSpec(RotationMap{q});
    }

    /// Planar rotation by `radians`.
    static DiffeoSpec rotation2d(double radians) {
        Matrix q(2, 2);
        q << std::cos(radians), -std::sin(radians), std::sin(radians), std::cos(radians);
        return rotation(q);
    }

    static DiffeoSpec coordwise(std::vector<MonotoneMap> maps) {
        require(!maps.empty(), "coordinatewise map needs at least one axis");
        return DiffeoSpec(CoordwiseMap{std::move(maps)});
    }

    static DiffeoSpec compose(std::vector<DiffeoSpec> parts) {
        require(!parts.empty(), "composition needs at least one part");
        for (std::size_t k = 1; k < parts.size(); ++k)
            require(parts[k].dim() == parts[0].dim(), "composition parts differ in dimension");
        return DiffeoSpec(CompositionMap{std::move(parts)});
    }

    /// Axis permutation with optional reversals: output[perm[i]] = sign[i] * input[i].
    static DiffeoSpec signed_permutation(const std::vector<std::size_t>& perm, const std::vector<int>& signs) {
        require(perm.size() == signs.size(), "signed_permutation: size mismatch");
        Matrix m = Matrix::Zero(perm.size(), perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            require(perm[i] < perm.size(), "signed_permutation: index out of range");
            require(signs[i] == 1 || signs[i] == -1, "signed_permutation: sign must be +-1");
            m(perm[i], i) = signs[i];
        }
        return linear(m);
    }

    std::size_t dim() const {
        return std::visit(
            [](const auto& n) -> std::size_t {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, CoordwiseMap>) return n.maps.size();
                else if constexpr (std::is_same_v<T, CompositionMap>) return n.parts.front().dim();
                else return static_cast<std::size_t>(n.matrix.rows());
            },
            node_);
    }

    const Node& node() const noexcept { return node_; }

    Vector forward(const Vector& z) const {
        check_dim(z.size());
        return std::visit(
            [&](const auto& n) -> Vector {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, CoordwiseMap>) {
                    Vector y(z.size());
                    for (Eigen::Index i = 0; i < z.size(); ++i) y(i) = n.maps[i].forward(z(i));
                    return y;
                } else if constexpr (std::is_same_v<T, CompositionMap>) {
                    Vector y = z;
                    for (const auto& p : n.parts) y = p.forward(y);
                    return y;
                } else {
                    return n.matrix * z;
                }
            },
            node_);
    }

    Vector inverse(const Vector& y) const {
        check_dim(y.size());
        return std::visit(
            [&](const auto& n) -> Vector {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, LinearMap>) {
                    return n.inverse * y;
                } else if constexpr (std::is_same_v<T, RotationMap>) {
                    return n.matrix.transpose() * y;
                } else if constexpr (std::is_same_v<T, CoordwiseMap>) {
                    Vector z(y.size());
                    for (Eigen::Index i = 0; i < y.size(); ++i) z(i) = n.maps[i].inverse(y(i));
                    return z;
                } else {
                    Vector z = y;
                    for (auto it = n.parts.rbegin(); it != n.parts.rend(); ++it) z = it->inverse(z);
                    return z;
                }
            },
            node_);
    }

    /// log|det J_forward(z)|; compositions sum their parts along the chain.
    double log_abs_det_jacobian(const Vector& z) const {
        check_dim(z.size());
        return std::visit(
            [&](const auto& n) -> double {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, LinearMap>) {
                    return n.log_abs_det;
                } else if constexpr (std::is_same_v<T, RotationMap>) {
                    return 0.0;
                } else if constexpr (std::is_same_v<T, CoordwiseMap>) {
                    double s = 0.0;
                    for (Eigen::Index i = 0; i < z.size(); ++i) s += n.maps[i].log_derivative(z(i));
                    return s;
                } else {
                    double s = 0.0;
                    Vector x = z;
                    for (const auto& p : n.parts) {
                        s += p.log_abs_det_jacobian(x);
                        x = p.forward(x);
                    }
                    return s;
                }
            },
            node_);
    }

    /// Forward Jacobian at z.
    Matrix jacobian(const Vector& z) const {
        check_dim(z.size());
        return std::visit(
            [&](const auto& n) -> Matrix {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, CoordwiseMap>) {
                    Matrix j = Matrix::Zero(z.size(), z.size());
                    for (Eigen::Index i = 0; i < z.size(); ++i) j(i, i) = n.maps[i].derivative(z(i));
                    return j;
                } else if constexpr (std::is_same_v<T, CompositionMap>) {
                    Matrix j = Matrix::Identity(z.size(), z.size());
                    Vector x = z;
                    for (const auto& p : n.parts) {
                        j = p.jacobian(x) * j;
                        x = p.forward(x);
                    }
                    return j;
                } else {
                    return n.matrix;
                }
            },
            node_);
    }

    Matrix apply_forward(const Matrix& z) const {
        check_dim(z.cols());
        Matrix out(z.rows(), z.cols());
        for (Eigen::Index r = 0; r < z.rows(); ++r) out.row(r) = forward(z.row(r).transpose()).transpose();
        return out;
    }

    Matrix apply_inverse(const Matrix& y) const {
        check_dim(y.cols());
        Matrix out(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r) out.row(r) = inverse(y.row(r).transpose()).transpose();
        return out;
    }

    /// Permutation and reversal pattern if every output coordinate depends on
    /// exactly one input coordinate, monotonically; empty otherwise.
    std::optional<AxisStructure> axis_structure() const {
        const std::size_t d = dim();
        auto generalized_permutation = [d](const Matrix& m) -> std::optional<AxisStructure> {
            AxisStructure s{std::vector<std::size_t>(d), std::vector<int>(d)};
            for (std::size_t i = 0; i < d; ++i) {
                int nonzero = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (m(j, i) != 0.0) {
                        ++nonzero;
                        s.permutation[i] = j;
                        s.signs[i] = m(j, i) > 0.0 ? 1 : -1;
                    }
                }
                if (nonzero != 1) return std::nullopt;
            }
            return s;
        };
        return std::visit(
            [&](const auto& n) -> std::optional<AxisStructure> {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, CoordwiseMap>) {
                    AxisStructure s{std::vector<std::size_t>(d), std::vector<int>(d, 1)};
                    std::iota(s.permutation.begin(), s.permutation.end(), std::size_t{0});
                    return s;
                } else if constexpr (std::is_same_v<T, CompositionMap>) {
                    AxisStructure acc{std::vector<std::size_t>(d), std::vector<int>(d, 1)};
                    std::iota(acc.permutation.begin(), acc.permutation.end(), std::size_t{0});
                    for (const auto& p : n.parts) {
                        auto s = p.axis_structure();
                        if (!s) return std::nullopt;
                        for (std::size_t i = 0; i < d; ++i) {
                            const auto mid = acc.permutation[i];
                            acc.signs[i] *= s->signs[mid];
                            acc.permutation[i] = s->permutation[mid];
                        }
                    }
                    return acc;
                } else {
                    return generalized_permutation(n.matrix);
                }
            },
            node_);
    }

    explicit DiffeoSpec(Node node) : node_(std::move(node)) {}

private:
    void check_dim(Eigen::Index n) const {
        if (static_cast<std::size_t>(n) != dim())
            fail("diffeo: input has dimension " + std::to_string(n) + ", map has " + std::to_string(dim()));
    }

    Node node_;
};

/// Random invertible linear map with N(0,1) entries, rejecting condition numbers above `max_condition`.
inline Matrix random_invertible_matrix(std::size_t d, std::uint64_t seed, double max_condition = 100.0) {
    Rng rng(seed);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        Matrix m(d, d);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
        const auto& sv = svd.singularValues();
        if (sv(sv.size() - 1) > 0.0 && sv(0) / sv(sv.size() - 1) <= max_condition) return m;
    }
    fail(ErrorKind::numeric, "random_invertible_matrix: no well-conditioned draw");
}

inline double condition_number(const Matrix& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    return sv(0) / sv(sv.size() - 1);
}

// JSON encoding: {"kind": "linear"|"rotation"|"monotone"|"composition", ...}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(m.cols());
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    require(j.is_array() && !j.empty(), "matrix JSON must be a non-empty array of rows");
    const auto rows = j.get<std::vector<std::vector<double>>>();
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r].size() == rows[0].size(), "matrix JSON rows differ in length");
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
    }
    return m;
}

inline nlohmann::json to_json(const MonotoneMap& m) {
    switch (m.type) {
    case MonotoneMap::Type::affine: return {{"type", "affine"}, {"scale", m.scale}, {"shift", m.shift}};
    case MonotoneMap::Type::cubic: return {{"type", "cubic"}, {"a", m.a}};
    case MonotoneMap::Type::tanh:
        return {{"type", "tanh"}, {"scale", m.scale}, {"slope", m.slope}, {"shift", m.shift}, {"offset", m.offset}};
    }
    return {};
}

inline MonotoneMap monotone_from_json(const nlohmann::json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "affine") return MonotoneMap::affine(j.value("scale", 1.0), j.value("shift", 0.0));
    if (type == "cubic") return MonotoneMap::cubic(j.at("a").get<double>());
    if (type == "tanh")
        return MonotoneMap::tanh(j.value("scale", 1.0), j.value("slope", 1.0), j.value("shift", 0.0),
                                 j.value("offset", 0.0));
    fail(ErrorKind::config, "unknown monotone map type '" + type + "'");
}

inline nlohmann::json to_json(const DiffeoSpec& s) {
    return std::visit(
        [](const auto& n) -> nlohmann::json {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, LinearMap>) {
                return {{"kind", "linear"}, {"matrix", matrix_to_json(n.matrix)}};
            } else if constexpr (std::is_same_v<T, RotationMap>) {
                return {{"kind", "rotation"}, {"matrix", matrix_to_json(n.matrix)}};
            } else if constexpr (std::is_same_v<T, CoordwiseMap>) {
                nlohmann::json maps = nlohmann::json::array();
                for (const auto& m : n.maps) maps.push_back(to_json(m));
                return {{"kind", "monotone"}, {"maps", maps}};
            } else {
                nlohmann::json parts = nlohmann::json::array();
                for (const auto& p : n.parts) parts.push_back(to_json(p));
                return {{"kind", "composition"}, {"parts", parts}};
            }
        },
        s.node());
}

inline DiffeoSpec diffeo_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "identity") return DiffeoSpec::identity(j.at("dim").get<std::size_t>());
    if (kind == "linear") return DiffeoSpec::linear(matrix_from_json(j.at("matrix")));
    if (kind == "rotation") {
        if (j.contains("angle_degrees"))
            return DiffeoSpec::rotation2d(j.at("angle_degrees").get<double>() * std::numbers::pi / 180.0);
        return DiffeoSpec::rotation(matrix_from_json(j.at("matrix")));
    }
    if (kind == "permutation")
        return DiffeoSpec::signed_permutation(j.at("permutation").get<std::vector<std::size_t>>(),
                                              j.at("signs").get<std::vector<int>>());
    if (kind == "monotone") {
        std::vector<MonotoneMap> maps;
        for (const auto& m : j.at("maps")) maps.push_back(monotone_from_json(m));
        return DiffeoSpec::coordwise(std::move(maps));
    }
    if (kind == "composition") {
        std::vector<DiffeoSpec> parts;
        for (const auto& p : j.at("parts")) parts.push_back(diffeo_from_json(p));
        return DiffeoSpec::compose(std::move(parts));
    }
    fail(ErrorKind::config, "unknown diffeo kind '" + kind + "'");
}

}  // namespace gridalign

#pragma once

// Quantization of scalar factors against ascending thresholds, and the grid
// structure types built from them (coordinations, cells, separators).

#include "gridalign/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gridalign {

/// Strictly increasing, non-empty tuple of real thresholds.
class Thresholds {
public:
    Thresholds() = default;

    explicit Thresholds(std::vector<double> values) : values_(std::move(values)) {
        if (auto why = violation(values_)) fail(*why);
    }

    Thresholds(std::initializer_list<double> values) : Thresholds(std::vector<double>(values)) {}

    /// Empty optional when `values` is a valid threshold tuple.
    static std::optional<std::string> violation(std::span<const double> values) {
        if (values.empty()) return "thresholds are empty";
        for (std::size_t k = 0; k < values.size(); ++k) {
            if (!std::isfinite(values[k])) return "threshold " + std::to_string(k) + " is not finite";
            if (k > 0 && !(values[k] > values[k - 1]))
                return "threshold " + std::to_string(k) + " is not greater than its predecessor";
        }
        return std::nullopt;
    }

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t k) const { return values_[k]; }
    const std::vector<double>& values() const noexcept { return values_; }

    bool operator==(const Thresholds&) const = default;

private:
    std::vector<double> values_;
};

/// Number of thresholds t_k with z >= t_k.
inline int quantize(double z, const Thresholds& t) {
    // values are sorted, so this is a count of the prefix below or at z
    const auto& v = t.values();
    return static_cast<int>(std::upper_bound(v.begin(), v.end(), z) - v.begin());
}

/// Number of thresholds t_k with z <= t_k.
inline int quantize_reversed(double z, const Thresholds& t) {
    const auto& v = t.values();
    return static_cast<int>(v.end() - std::lower_bound(v.begin(), v.end(), z));
}

inline int quantize_signed(double z, const Thresholds& t, int sign) {
    require(sign == 1 || sign == -1, "sign must be +1 or -1");
    return sign > 0 ? quantize(z, t) : quantize_reversed(z, t);
}

/// A violation found while validating a coordination.
struct CoordinationViolation {
    std::size_t axis = 0;
    std::string reason;
};

/// Per-axis threshold tuples defining an axis-aligned grid.
class DiscreteCoordination {
public:
    // Cell counts above this are rejected so cell ids fit in 31 bits.
    static constexpr std::uint64_t max_cells = std::uint64_t{1} << 31;

    DiscreteCoordination() = default;

    explicit DiscreteCoordination(std::vector<Thresholds> axes) : axes_(std::move(axes)) {
        require(!axes_.empty(), "coordination needs at least one axis");
        if (auto v = validate_raw(raw())) fail("axis " + std::to_string(v->axis) + ": " + v->reason);
    }

    /// Build from raw per-axis values, throwing on any violation.
    static DiscreteCoordination from_values(const std::vector<std::vector<double>>& axes) {
        if (auto v = validate_raw(axes)) fail("axis " + std::to_string(v->axis) + ": " + v->reason);
        std::vector<Thresholds> t;
        t.reserve(axes.size());
        for (const auto& a : axes) t.emplace_back(a);
        return DiscreteCoordination(std::move(t));
    }

    /// Checks ordering, emptiness and the cell-count bound.
    static std::optional<CoordinationViolation> validate_raw(const std::vector<std::vector<double>>& axes) {
        if (axes.empty()) return CoordinationViolation{0, "coordination has no axes"};
        std::uint64_t cells = 1;
        for (std::size_t i = 0; i < axes.size(); ++i) {
            if (auto why = Thresholds::violation(axes[i])) return CoordinationViolation{i, *why};
            cells *= axes[i].size() + 1;
            if (cells > max_cells) return CoordinationViolation{i, "grid exceeds 2^31 cells"};
        }
        return std::nullopt;
    }

    std::size_t dim() const noexcept { return axes_.size(); }
    const Thresholds& axis(std::size_t i) const { return axes_.at(i); }
    const std::vector<Thresholds>& axes() const noexcept { return axes_; }

    /// Number of cells along axis i, i.e. |A_i| + 1.
    std::size_t cells_on_axis(std::size_t i) const { return axes_.at(i).size() + 1; }

    std::size_t cell_count() const {
        std::size_t n = 1;
        for (const auto& a : axes_) n *= a.size() + 1;
        return n;
    }

    std::vector<std::vector<double>> raw() const {
        std::vector<std::vector<double>> out;
        for (const auto& a : axes_) out.push_back(a.values());
        return out;
    }

    bool operator==(const DiscreteCoordination&) const = default;

private:
    std::vector<Thresholds> axes_;
};

inline std::optional<CoordinationViolation> validate_coordination(const std::vector<std::vector<double>>& axes) {
    return DiscreteCoordination::validate_raw(axes);
}

/// Grid cell: one quantization level per axis.
struct CellIndex {
    std::vector<int> indices;

    bool operator==(const CellIndex&) const = default;
};

inline CellIndex cell_index(std::span<const double> z, const DiscreteCoordination& a) {
    require(z.size() == a.dim(), "cell_index: point has dimension " + std::to_string(z.size()) +
                                     ", coordination has " + std::to_string(a.dim()));
    CellIndex c;
    c.indices.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) c.indices[i] = quantize(z[i], a.axis(i));
    return c;
}

/// Row-major flat id of a cell; axis 0 varies slowest.
inline std::size_t flat_cell(const CellIndex& c, const DiscreteCoordination& a) {
    require(c.indices.size() == a.dim(), "flat_cell: dimension mismatch");
    std::size_t id = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        const auto k = a.cells_on_axis(i);
        require(c.indices[i] >= 0 && static_cast<std::size_t>(c.indices[i]) < k, "flat_cell: index out of range");
        id = id * k + static_cast<std::size_t>(c.indices[i]);
    }
    return id;
}

inline CellIndex unflatten_cell(std::size_t id, const DiscreteCoordination& a) {
    CellIndex c;
    c.indices.assign(a.dim(), 0);
    for (std::size_t i = a.dim(); i-- > 0;) {
        const auto k = a.cells_on_axis(i);
        c.indices[i] = static_cast<int>(id % k);
        id /= k;
    }
    return c;
}

/// Closed interval [lo, hi].
struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double x) const noexcept { return lo <= x && x <= hi; }
    bool operator==(const Interval&) const = default;
};

/// Axis-aligned separator {z_axis = position} restricted to a box.
struct SeparatorExtent {
    std::size_t axis = 0;
    double position = 0.0;
    std::vector<Interval> extent;  // one interval per axis

    /// Box on the other axes; the own-axis interval is forced to [position, position].
    static SeparatorExtent make(std::size_t axis, double position, std::vector<Interval> box) {
        require(axis < box.size(), "separator axis outside its extent box");
        box[axis] = Interval{position, position};
        return SeparatorExtent{axis, position, std::move(box)};
    }

    bool valid() const {
        return axis < extent.size() && extent[axis].lo == position && extent[axis].hi == position;
    }
};

struct BackboneResult {
    bool found = false;
    std::string reason;
    std::vector<std::size_t> chosen;  // indices into the separator list, one per axis
    std::vector<double> meeting_point;
};

/// Search for d separators, one per axis, that meet at a single point and each
/// cross every separator lying on the other axes. Exhaustive over combinations.
inline BackboneResult has_backbone(std::span<const SeparatorExtent> separators, std::size_t d) {
    BackboneResult res;
    require(d >= 1, "has_backbone: d must be positive");
    std::vector<std::vector<std::size_t>> by_axis(d);
    for (std::size_t s = 0; s < separators.size(); ++s) {
        const auto& sep = separators[s];
        require(sep.axis < d, "has_backbone: separator axis out of range");
        require(sep.extent.size() == d && sep.valid(), "has_backbone: malformed separator extent");
        by_axis[sep.axis].push_back(s);
    }
    for (std::size_t i = 0; i < d; ++i) {
        if (by_axis[i].empty()) {
            res.reason = "no separator on axis " + std::to_string(i);
            return res;
        }
    }

    // A candidate on axis i qualifies on its own if it spans every separator of every other axis.
    auto spans_others = [&](std::size_t s) {
        const auto& sep = separators[s];
        for (std::size_t j = 0; j < d; ++j) {
            if (j == sep.axis) continue;
            for (auto o : by_axis[j])
                if (!sep.extent[j].contains(separators[o].position)) return false;
        }
        return true;
    };
    std::vector<std::vector<std::size_t>> candidates(d);
    for (std::size_t i = 0; i < d; ++i) {
        for (auto s : by_axis[i])
            if (spans_others(s)) candidates[i].push_back(s);
        if (candidates[i].empty()) {
            res.reason = "no separator on axis " + std::to_string(i) + " crosses all separators of the other axes";
            return res;
        }
    }

    std::vector<std::size_t> pick(d, 0);
    std::vector<double> point(d);
    while (true) {
        for (std::size_t i = 0; i < d; ++i) point[i] = separators[candidates[i][pick[i]]].position;
        bool meets = true;
        for (std::size_t i = 0; i < d && meets; ++i) {
            const auto& sep = separators[candidates[i][pick[i]]];
            for (std::size_t j = 0; j < d; ++j)
                if (!sep.extent[j].contains(point[j])) {
                    meets = false;
                    break;
                }
        }
        if (meets) {
            res.found = true;
            for (std::size_t i = 0; i < d; ++i) res.chosen.push_back(candidates[i][pick[i]]);
            res.meeting_point = point;
            return res;
        }
        std::size_t i = 0;
        while (i < d && ++pick[i] == candidates[i].size()) pick[i++] = 0;
        if (i == d) break;
    }
    res.reason = "no combination of separators meets at a common point";
    return res;
}

inline nlohmann::json to_json(const DiscreteCoordination& a) {
    return nlohmann::json{{"axes", a.raw()}};
}

inline DiscreteCoordination coordination_from_json(const nlohmann::json& j) {
    require(j.is_object() && j.contains("axes") && j.size() == 1, "coordination JSON must be {\"axes\": [...]}");
    return DiscreteCoordination::from_values(j.at("axes").get<std::vector<std::vector<double>>>());
}

}  // namespace gridalign

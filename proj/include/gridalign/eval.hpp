#pragma once

// Threshold detection on learned codes, axis matching, agreement scores and
// the numeric checks of the recovery guarantees.

#include "gridalign/core_grid.hpp"
#include "gridalign/density.hpp"
#include "gridalign/error.hpp"
#include "gridalign/linalg.hpp"
#include "gridalign/rng.hpp"
#include "gridalign/synth.hpp"
#include "gridalign/train.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace gridalign {

// ---------------------------------------------------------------------------
// Threshold detection
// ---------------------------------------------------------------------------

struct KMeans1d {
    std::vector<double> centers;  // sorted
    std::vector<double> spreads;  // per-cluster standard deviation
    double inertia = 0.0;
};

/// Lloyd iterations with k-means++ seeding, best of `restarts` by inertia.
inline KMeans1d kmeans_1d(const std::vector<double>& xs, int k, int restarts, std::uint64_t seed) {
    require(k >= 1, "kmeans_1d: k must be >= 1");
    require(xs.size() >= static_cast<std::size_t>(k), "kmeans_1d: fewer points than clusters");
    std::vector<double> sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    KMeans1d best;
    best.inertia = INFINITY;
    std::vector<int> label(n);
    for (int rs = 0; rs < restarts; ++rs) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(rs));
        std::vector<double> c{sorted[rng.below(n)]};
        std::vector<double> d2(n);
        while (c.size() < static_cast<std::size_t>(k)) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double m = INFINITY;
                for (double cc : c) m = std::min(m, (sorted[i] - cc) * (sorted[i] - cc));
                d2[i] = m;
                total += m;
            }
            if (!(total > 0.0)) {
                c.push_back(sorted[rng.below(n)]);
                continue;
            }
            double u = rng.uniform() * total;
            std::size_t pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                u -= d2[i];
                if (u < 0.0) {
                    pick = i;
                    break;
                }
            }
            c.push_back(sorted[pick]);
        }
        for (int it = 0; it < 300; ++it) {
            std::sort(c.begin(), c.end());
            bool changed = it == 0;
            for (std::size_t i = 0; i < n; ++i) {
                int arg = 0;
                double m = INFINITY;
                for (int j = 0; j < k; ++j) {
                    const double t = (sorted[i] - c[j]) * (sorted[i] - c[j]);
                    if (t < m) {
                        m = t;
                        arg = j;
                    }
                }
                changed = changed || label[i] != arg;
                label[i] = arg;
            }
            std::vector<double> sum(k, 0.0);
            std::vector<std::size_t> cnt(k, 0);
            for (std::size_t i = 0; i < n; ++i) {
                sum[label[i]] += sorted[i];
                ++cnt[label[i]];
            }
            for (int j = 0; j < k; ++j)
                if (cnt[j] > 0) c[j] = sum[j] / static_cast<double>(cnt[j]);
            if (!changed) break;
        }
        KMeans1d cur;
        cur.centers = c;
        std::vector<double> ss(k, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = sorted[i] - c[label[i]];
            ss[label[i]] += t * t;
            ++cnt[label[i]];
            cur.inertia += t * t;
        }
        for (int j = 0; j < k; ++j) cur.spreads.push_back(cnt[j] ? std::sqrt(ss[j] / static_cast<double>(cnt[j])) : 0.0);
        if (cur.inertia < best.inertia) best = cur;
    }
    // order clusters by center, keeping spreads aligned
    std::vector<std::size_t> idx(best.centers.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return best.centers[a] < best.centers[b]; });
    KMeans1d out{{}, {}, best.inertia};
    for (auto i : idx) {
        out.centers.push_back(best.centers[i]);
        out.spreads.push_back(best.spreads[i]);
    }
    return out;
}

/// Maximum-likelihood location of a single density jump among sorted values
/// restricted to [lo, hi]; nullopt when one piece fits about as well as two.
inline std::optional<double> change_point(const std::vector<double>& sorted, double lo, double hi, double min_gain = 2.0) {
    const auto b = std::lower_bound(sorted.begin(), sorted.end(), lo);
    const auto e = std::upper_bound(sorted.begin(), sorted.end(), hi);
    const auto m = static_cast<std::size_t>(e - b);
    if (m < 8 || !(hi > lo)) return std::nullopt;
    const double mm = static_cast<double>(m);
    const double flat = mm * std::log(mm / (hi - lo));
    double best = -INFINITY, arg = 0.0;
    for (std::size_t l = 1; l < m; ++l) {
        const double t = 0.5 * (b[l - 1] + b[l]);
        if (!(t > lo && t < hi)) continue;
        const double L = static_cast<double>(l), R = mm - L;
        const double ll = L * std::log(L / (t - lo)) + R * std::log(R / (hi - t));
        if (ll > best) {
            best = ll;
            arg = t;
        }
    }
    if (!(best - flat >= min_gain)) return std::nullopt;
    return arg;
}

/// Best density along one axis that is piecewise constant with k shared
/// change points inside every stratum, on the support [front, back] of the
/// values, pieces at least min_width wide. `stratum` labels each value
/// (0 .. strata-1). Dynamic program over a histogram, then coordinate ascent
/// of each point between its neighbours on the exact values.
struct Segmentation {
    std::vector<double> thresholds;
    std::vector<double> gains;  // log-likelihood lost by merging the two pieces around each threshold
};

inline Segmentation segment_axis(const std::vector<double>& values, const std::vector<int>& stratum, int strata,
                                        int k, double min_width, int bins = 400) {
    require(k >= 1 && bins > k && strata >= 1, "segment_axis: need bins > k >= 1 and strata >= 1");
    require(values.size() == stratum.size(), "segment_axis: label count differs from value count");
    require(values.size() >= static_cast<std::size_t>(2 * (k + 1)), "segment_axis: too few values");
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> x(values.size());
    std::vector<int> lab(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        x[i] = values[idx[i]];
        lab[i] = stratum[idx[i]];
        require(lab[i] >= 0 && lab[i] < strata, "segment_axis: stratum label out of range");
    }
    const double lo = x.front(), hi = x.back();
    require(hi > lo, "segment_axis: constant values");
    const auto S = static_cast<std::size_t>(strata);
    // each stratum lives on its own interval; pieces are clipped to it
    std::vector<double> s_lo(S, INFINITY), s_hi(S, -INFINITY);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto s = static_cast<std::size_t>(lab[i]);
        s_lo[s] = std::min(s_lo[s], x[i]);
        s_hi[s] = std::max(s_hi[s], x[i]);
    }
    const auto clipped = [&](std::size_t s, double a, double b) {
        return std::max(0.0, std::min(b, s_hi[s]) - std::max(a, s_lo[s]));
    };
    const double w = (hi - lo) / bins;
    const int min_bins = std::max(1, static_cast<int>(std::ceil(min_width / w)));
    require((k + 1) * min_bins <= bins, "segment_axis: support too narrow for the requested pieces");

    std::vector<double> cum((static_cast<std::size_t>(bins) + 1) * S, 0.0);  // cum[b * S + s]
    {
        std::size_t i = 0;
        for (int b = 1; b <= bins; ++b) {
            const double edge = b == bins ? INFINITY : lo + b * w;
            std::copy_n(cum.begin() + static_cast<std::ptrdiff_t>((b - 1) * S), S, cum.begin() + static_cast<std::ptrdiff_t>(b * S));
            for (; i < x.size() && x[i] < edge; ++i) cum[b * S + static_cast<std::size_t>(lab[i])] += 1.0;
        }
    }
    const auto seg = [&](int a, int b) {
        double ll = 0.0;
        const double ea = lo + a * w, eb = b == bins ? hi : lo + b * w;
        for (std::size_t s = 0; s < S; ++s) {
            const double c = cum[b * S + s] - cum[a * S + s];
            if (c > 0.0) ll += c * std::log(c / std::max(clipped(s, ea, eb), 1e-300));
        }
        return ll;
    };
    // best[j][b]: bins [0, b) in j + 1 pieces
    std::vector<std::vector<double>> best(static_cast<std::size_t>(k) + 1, std::vector<double>(bins + 1, -INFINITY));
    std::vector<std::vector<int>> from(static_cast<std::size_t>(k) + 1, std::vector<int>(bins + 1, 0));
    for (int b = min_bins; b <= bins; ++b) best[0][b] = seg(0, b);
    for (int j = 1; j <= k; ++j)
        for (int b = (j + 1) * min_bins; b <= bins; ++b)
            for (int a = j * min_bins; a + min_bins <= b; ++a) {
                const double v = best[j - 1][a] + seg(a, b);
                if (v > best[j][b]) {
                    best[j][b] = v;
                    from[j][b] = a;
                }
            }
    std::vector<double> t(static_cast<std::size_t>(k));
    for (int j = k, b = bins; j >= 1; --j) {
        b = from[j][b];
        t[j - 1] = lo + b * w;
    }

    const double gap = min_bins * w;
    std::vector<double> left(S), right(S);
    const auto piece_ll = [&](const std::vector<double>& cnt, double a, double b) {
        double ll = 0.0;
        for (std::size_t s = 0; s < S; ++s)
            if (cnt[s] > 0.0) ll += cnt[s] * std::log(cnt[s] / std::max(clipped(s, a, b), 1e-300));
        return ll;
    };
    const auto split_ll = [&](double a, double c, double b) { return piece_ll(left, a, c) + piece_ll(right, c, b); };
    for (int pass = 0; pass < 3; ++pass)
        for (int m = 0; m < k; ++m) {
            const double a = m > 0 ? t[m - 1] : lo, b = m + 1 < k ? t[m + 1] : hi;
            const auto ia = static_cast<std::size_t>(std::lower_bound(x.begin(), x.end(), a) - x.begin());
            const auto ib = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), b) - x.begin());
            std::fill(left.begin(), left.end(), 0.0);
            std::fill(right.begin(), right.end(), 0.0);
            for (std::size_t i = ia; i < ib; ++i) right[static_cast<std::size_t>(lab[i])] += 1.0;
            double best_ll = -INFINITY, arg = t[m];
            // move points left one at a time; the split sits between x[i-1] and x[i]
            for (std::size_t i = ia + 1; i < ib; ++i) {
                const auto s = static_cast<std::size_t>(lab[i - 1]);
                left[s] += 1.0;
                right[s] -= 1.0;
                const double c = 0.5 * (x[i - 1] + x[i]);
                if (c < a + gap || c > b - gap || x[i] == x[i - 1]) continue;
                const double ll = split_ll(a, c, b);
                if (ll > best_ll) {
                    best_ll = ll;
                    arg = c;
                }
            }
            t[m] = arg;
        }

    Segmentation out;
    out.thresholds = t;
    for (int m = 0; m < k; ++m) {
        const double a = m > 0 ? t[m - 1] : lo, b = m + 1 < k ? t[m + 1] : hi, c = t[m];
        std::fill(left.begin(), left.end(), 0.0);
        std::fill(right.begin(), right.end(), 0.0);
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] >= a && x[i] <= b) (x[i] < c ? left : right)[static_cast<std::size_t>(lab[i])] += 1.0;
        std::vector<double> both(S);
        for (std::size_t s = 0; s < S; ++s) both[s] = left[s] + right[s];
        out.gains.push_back(split_ll(a, c, b) - piece_ll(both, a, b));
    }
    return out;
}

/// Equal-count strata over the columns other than j: two or more quantile
/// bins on each of at most four other columns, about 16 strata in total.
inline std::vector<int> strata_except(const Matrix& x, Eigen::Index j, int& count) {
    const auto n = x.rows();
    std::vector<Eigen::Index> others;
    for (Eigen::Index c = 0; c < x.cols() && others.size() < 4; ++c)
        if (c != j) others.push_back(c);
    std::vector<int> label(static_cast<std::size_t>(n), 0);
    count = 1;
    if (others.empty()) return label;
    const int q = std::max(2, static_cast<int>(std::floor(std::pow(16.0, 1.0 / static_cast<double>(others.size())) + 1e-9)));
    std::vector<Eigen::Index> rank(static_cast<std::size_t>(n));
    for (Eigen::Index c : others) {
        std::iota(rank.begin(), rank.end(), Eigen::Index{0});
        std::stable_sort(rank.begin(), rank.end(), [&](Eigen::Index a, Eigen::Index b) { return x(a, c) < x(b, c); });
        for (Eigen::Index r = 0; r < n; ++r) {
            auto& l = label[static_cast<std::size_t>(rank[r])];
            l = l * q + static_cast<int>(r * q / n);
        }
        count *= q;
    }
    return label;
}

enum class Refinement { none, segmentation };

struct DetectOptions {
    double bandwidth = 0.1;     // in standardized code units
    double top_fraction = 0.1;  // rho
    int restarts = 10;
    Refinement refine = Refinement::segmentation;
    std::uint64_t seed = 0;
};

inline std::string to_string(Refinement r) { return r == Refinement::none ? "none" : "segmentation"; }

struct DetectResult {
    DiscreteCoordination coordination;          // in raw code units
    std::vector<std::vector<double>> clusters;  // k-means centers of the gradient points, raw units
    std::vector<std::vector<double>> gains;     // per threshold evidence, with segmentation only
    std::vector<std::size_t> kept_per_axis;
    std::vector<bool> low_confidence;
};

/// Thresholds per code axis. The strongest density-gradient points are split
/// by dominant axis and clustered; with refinement on, the reported thresholds
/// come from segmenting each axis marginal instead of the cluster centers.
/// Codes are standardized first; thresholds are reported in the original units.
inline DetectResult detect_thresholds(const Matrix& codes, const std::vector<int>& k_per_axis,
                                      const DetectOptions& opt = {}) {
    const auto n = codes.rows(), d = codes.cols();
    require(static_cast<std::size_t>(d) == k_per_axis.size(), "detect_thresholds: k_per_axis length differs from code dimension");
    for (int k : k_per_axis) require(k >= 1, "detect_thresholds: k_per_axis entries must be >= 1");
    require(opt.top_fraction > 0.0 && opt.top_fraction <= 1.0, "detect_thresholds: top fraction must be in (0, 1]");
    require(opt.bandwidth > 0.0, "detect_thresholds: bandwidth must be positive");
    const auto keep = static_cast<Eigen::Index>(std::ceil(opt.top_fraction * static_cast<double>(n)));
    const int total_k = std::accumulate(k_per_axis.begin(), k_per_axis.end(), 0);
    require(keep >= 10 * total_k, "detect_thresholds: too few samples (" + std::to_string(keep) +
                                      " kept, need " + std::to_string(10 * total_k) + ")");
    const Standardized st = standardize(codes);
    if (!st.constant_columns.empty())
        fail(ErrorKind::numeric, "axis " + std::to_string(st.constant_columns.front()) + " is constant");
    const SelfKde field = self_kde(st.data, opt.bandwidth);

    std::vector<double> mag(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) mag[i] = field.gradients.row(i).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return mag[a] > mag[b]; });

    std::vector<std::vector<double>> per_axis(static_cast<std::size_t>(d));
    for (Eigen::Index r = 0; r < keep; ++r) {
        const Eigen::Index i = order[r];
        Eigen::Index j = 0;
        for (Eigen::Index c = 1; c < d; ++c)
            if (std::abs(field.gradients(i, c)) > std::abs(field.gradients(i, j))) j = c;
        per_axis[j].push_back(st.data(i, j));
    }

    DetectResult out;
    std::vector<Thresholds> axes;
    for (Eigen::Index j = 0; j < d; ++j) {
        const auto& xs = per_axis[j];
        const int k = k_per_axis[j];
        out.kept_per_axis.push_back(xs.size());
        if (xs.size() < static_cast<std::size_t>(k) * 5) fail("axis " + std::to_string(j) + " underpopulated");
        const auto km = kmeans_1d(xs, k, opt.restarts, Rng::stream(opt.seed, static_cast<std::uint64_t>(j)).next());
        const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
        const double limit = (*hi - *lo) / static_cast<double>(k);
        bool low = false;
        for (double s : km.spreads) low = low || s > limit;

        std::vector<double> centers = km.centers;
        if (opt.refine == Refinement::segmentation) {
            std::vector<double> column(static_cast<std::size_t>(n));
            for (Eigen::Index i = 0; i < n; ++i) column[i] = st.data(i, j);
            int strata = 1;
            const auto labels = strata_except(st.data, j, strata);
            const auto seg = segment_axis(column, labels, strata, k, opt.bandwidth);
            centers = seg.thresholds;
            // half a BIC penalty per change point: location plus one density per stratum
            const double weak = 0.5 * (strata + 1) * std::log(static_cast<double>(n));
            for (double g : seg.gains) low = low || g < weak;
            out.gains.push_back(seg.gains);
        }
        std::vector<double> raw_clusters, t;
        for (double c : km.centers) raw_clusters.push_back(c * st.scale(j) + st.mean(j));
        for (double c : centers) {
            const double raw = c * st.scale(j) + st.mean(j);
            if (!t.empty() && !(raw > t.back())) {
                low = true;
                continue;
            }
            t.push_back(raw);
        }
        if (t.size() < static_cast<std::size_t>(k))
            fail(ErrorKind::numeric, "axis " + std::to_string(j) + ": coincident thresholds");
        out.clusters.push_back(std::move(raw_clusters));
        out.low_confidence.push_back(low);
        axes.emplace_back(std::move(t));
    }
    out.coordination = DiscreteCoordination(std::move(axes));
    return out;
}

/// Cell indices of every row under a coordination.
inline IndexMatrix assign_cells(const Matrix& codes, const DiscreteCoordination& a) {
    require(static_cast<std::size_t>(codes.cols()) == a.dim(), "assign_cells: dimension mismatch");
    IndexMatrix out(codes.rows(), codes.cols());
    for (Eigen::Index r = 0; r < codes.rows(); ++r)
        for (Eigen::Index j = 0; j < codes.cols(); ++j) out(r, j) = quantize(codes(r, j), a.axis(static_cast<std::size_t>(j)));
    return out;
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

struct MatchResult {
    std::vector<std::size_t> permutation;  // true axis i is compared with pred axis permutation[i]
    std::vector<int> signs;                // per true axis
    double agreement = 0.0;
    std::size_t matched = 0;
    std::size_t total = 0;
};

/// Pred cells relabelled into the true frame by a (permutation, signs) pair.
inline IndexMatrix remap_cells(const IndexMatrix& pred, const std::vector<std::size_t>& perm,
                               const std::vector<int>& signs, const std::vector<int>& cells_per_axis) {
    IndexMatrix out(pred.rows(), pred.cols());
    for (Eigen::Index r = 0; r < pred.rows(); ++r)
        for (std::size_t i = 0; i < perm.size(); ++i) {
            const int k = pred(r, static_cast<Eigen::Index>(perm[i]));
            out(r, static_cast<Eigen::Index>(i)) = signs[i] > 0 ? k : cells_per_axis[i] - 1 - k;
        }
    return out;
}

/// Exhaustive search over axis permutations and reversals; first maximizer in
/// enumeration order (permutations lexicographic, +1 before -1 per axis).
inline MatchResult match_and_score(const IndexMatrix& true_cells, const IndexMatrix& pred_cells,
                                   const std::vector<int>& cells_true, const std::vector<int>& cells_pred) {
    const auto n = true_cells.rows();
    const auto d = static_cast<std::size_t>(true_cells.cols());
    require(pred_cells.rows() == n && static_cast<std::size_t>(pred_cells.cols()) == d,
            "match_and_score: true and predicted cells differ in shape");
    require(cells_true.size() == d && cells_pred.size() == d, "match_and_score: cell counts differ from dimension");
    if (d > 8) fail("match_and_score: d > 8 needs a greedy matcher, which is not available");
    require(n >= 1, "match_and_score: no samples");
    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    MatchResult best;
    best.total = static_cast<std::size_t>(n);
    bool any = false;
    do {
        bool ok = true;
        for (std::size_t i = 0; i < d; ++i) ok = ok && cells_pred[perm[i]] == cells_true[i];
        if (!ok) continue;
        for (std::uint32_t mask = 0; mask < (1u << d); ++mask) {
            std::vector<int> signs(d);
            for (std::size_t i = 0; i < d; ++i) signs[i] = (mask >> (d - 1 - i)) & 1u ? -1 : 1;
            std::size_t hits = 0;
            for (Eigen::Index r = 0; r < n; ++r) {
                bool same = true;
                for (std::size_t i = 0; i < d && same; ++i) {
                    const int k = pred_cells(r, static_cast<Eigen::Index>(perm[i]));
                    same = (signs[i] > 0 ? k : cells_true[i] - 1 - k) == true_cells(r, static_cast<Eigen::Index>(i));
                }
                hits += same;
            }
            if (!any || hits > best.matched) {
                best.permutation = perm;
                best.signs = signs;
                best.matched = hits;
                any = true;
            }
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (!any) fail("match_and_score: per-axis cell counts cannot be matched");
    best.agreement = static_cast<double>(best.matched) / static_cast<double>(n);
    return best;
}

/// Agreement after shuffling predicted rows (chance level plus matching bias).
inline double null_agreement(const IndexMatrix& true_cells, const IndexMatrix& pred_cells,
                             const std::vector<int>& cells_true, const std::vector<int>& cells_pred,
                             std::uint64_t seed) {
    Rng rng(seed);
    const auto p = rng.permutation(static_cast<std::size_t>(pred_cells.rows()));
    IndexMatrix shuffled(pred_cells.rows(), pred_cells.cols());
    for (Eigen::Index r = 0; r < pred_cells.rows(); ++r) shuffled.row(r) = pred_cells.row(static_cast<Eigen::Index>(p[r]));
    return match_and_score(true_cells, shuffled, cells_true, cells_pred).agreement;
}

/// Agreement of uniformly random predicted cells (chance level plus matching bias).
inline double uniform_null_agreement(const IndexMatrix& true_cells, const std::vector<int>& cells_true,
                                     std::uint64_t seed) {
    IndexMatrix pred(true_cells.rows(), true_cells.cols());
    Rng rng(seed);
    for (Eigen::Index r = 0; r < pred.rows(); ++r)
        for (Eigen::Index j = 0; j < pred.cols(); ++j)
            pred(r, j) = static_cast<int>(rng.below(static_cast<std::uint64_t>(cells_true[static_cast<std::size_t>(j)])));
    return match_and_score(true_cells, pred, cells_true, cells_true).agreement;
}

struct ConfusionRow {
    std::size_t cell;  // flat true-cell id
    std::vector<int> indices;
    std::size_t true_count = 0;
    std::size_t pred_count = 0;  // rows whose remapped prediction is this cell
    std::size_t agree_count = 0;
};

inline std::vector<ConfusionRow> confusion_summary(const IndexMatrix& true_cells, const IndexMatrix& remapped,
                                                   const std::vector<int>& cells_true) {
    std::vector<std::size_t> counts(cells_true.size());
    std::size_t total = 1;
    for (int c : cells_true) total *= static_cast<std::size_t>(c);
    auto flat = [&](const IndexMatrix& m, Eigen::Index r) -> std::optional<std::size_t> {
        std::size_t id = 0;
        for (std::size_t i = 0; i < cells_true.size(); ++i) {
            const int k = m(r, static_cast<Eigen::Index>(i));
            if (k < 0 || k >= cells_true[i]) return std::nullopt;
            id = id * static_cast<std::size_t>(cells_true[i]) + static_cast<std::size_t>(k);
        }
        return id;
    };
    std::vector<ConfusionRow> rows(total);
    for (std::size_t id = 0; id < total; ++id) {
        rows[id].cell = id;
        rows[id].indices.resize(cells_true.size());
        std::size_t rest = id;
        for (std::size_t i = cells_true.size(); i-- > 0;) {
            rows[id].indices[i] = static_cast<int>(rest % static_cast<std::size_t>(cells_true[i]));
            rest /= static_cast<std::size_t>(cells_true[i]);
        }
    }
    for (Eigen::Index r = 0; r < true_cells.rows(); ++r) {
        const auto t = flat(true_cells, r);
        const auto p = flat(remapped, r);
        if (t) ++rows[*t].true_count;
        if (p) ++rows[*p].pred_count;
        if (t && p && *t == *p) ++rows[*t].agree_count;
    }
    return rows;
}

inline std::string confusion_csv(const std::vector<ConfusionRow>& rows) {
    std::ostringstream os;
    os << "cell,indices,true_count,pred_count,agree_count\n";
    for (const auto& r : rows) {
        os << r.cell << ",\"";
        for (std::size_t i = 0; i < r.indices.size(); ++i) os << (i ? " " : "") << r.indices[i];
        os << "\"," << r.true_count << ',' << r.pred_count << ',' << r.agree_count << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Mean over rows of P = W M of max |entry| / row norm. 0 for singular P.
inline double alignment_index(const Matrix& W, const Matrix& M, bool* singular = nullptr) {
    require(W.cols() == M.rows(), "alignment_index: W and M do not compose");
    const Matrix p = W * M;
    require(p.rows() == p.cols(), "alignment_index: W M is not square");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(p);
    const auto& s = svd.singularValues();
    const bool sing = !(s(s.size() - 1) > 1e-12 * s(0));
    if (singular) *singular = sing;
    if (sing) return 0.0;
    double acc = 0.0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) acc += p.row(r).cwiseAbs().maxCoeff() / p.row(r).norm();
    return acc / static_cast<double>(p.rows());
}

// ---------------------------------------------------------------------------
// Recovery checks
// ---------------------------------------------------------------------------

struct CorollaryReport {
    bool passed = false;
    std::size_t samples = 0;
    std::size_t violations = 0;
    AxisStructure structure;
    DiscreteCoordination pushed;  // thresholds in the image space
};

/// Image of each axis's thresholds under an axis-respecting map, sorted.
inline DiscreteCoordination push_thresholds(const DiscreteCoordination& a, const DiffeoSpec& h,
                                            const AxisStructure& s, const Vector& anchor) {
    const std::size_t d = a.dim();
    std::vector<std::vector<double>> out(d);
    for (std::size_t i = 0; i < d; ++i)
        for (double t : a.axis(i).values()) {
            Vector z = anchor;
            z(static_cast<Eigen::Index>(i)) = t;
            out[s.permutation[i]].push_back(h.forward(z)(static_cast<Eigen::Index>(s.permutation[i])));
        }
    for (auto& v : out) std::sort(v.begin(), v.end());
    return DiscreteCoordination::from_values(out);
}

/// Samples a box around all thresholds and checks Q(z_i; A_i) = Q^{s_i}(h(z)_j; B_j)
/// for every sample and axis, where j is the image axis of i.
inline CorollaryReport verify_corollary(const DiscreteCoordination& a, const DiffeoSpec& h, long n,
                                        std::uint64_t seed) {
    require(n >= 1, "verify_corollary: n must be positive");
    const std::size_t d = a.dim();
    require(h.dim() == d, "verify_corollary: map and coordination differ in dimension");
    const auto s = h.axis_structure();
    if (!s) fail("verify_corollary: map is not axis-respecting");
    std::vector<double> lo(d), hi(d);
    Vector anchor(d);
    for (std::size_t i = 0; i < d; ++i) {
        const auto& v = a.axis(i).values();
        const double pad = std::max(1.0, v.back() - v.front());
        lo[i] = v.front() - pad;
        hi[i] = v.back() + pad;
        anchor(static_cast<Eigen::Index>(i)) = 0.5 * (lo[i] + hi[i]);
    }
    CorollaryReport rep;
    rep.structure = *s;
    rep.pushed = push_thresholds(a, h, *s, anchor);
    rep.samples = static_cast<std::size_t>(n);
    Vector z(d);
    for (long r = 0; r < n; ++r) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
        for (std::size_t i = 0; i < d; ++i) z(static_cast<Eigen::Index>(i)) = rng.uniform(lo[i], hi[i]);
        const Vector zp = h.forward(z);
        bool ok = true;
        for (std::size_t i = 0; i < d; ++i) {
            const std::size_t j = s->permutation[i];
            ok = ok && quantize(z(static_cast<Eigen::Index>(i)), a.axis(i)) ==
                           quantize_signed(zp(static_cast<Eigen::Index>(j)), rep.pushed.axis(j), s->signs[i]);
        }
        rep.violations += !ok;
    }
    rep.passed = rep.violations == 0;
    return rep;
}

struct PushforwardReport {
    double mean_abs_rel_error = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0;
    std::vector<std::string> notes;
};

/// Compares a KDE of h(z_samples) with the change-of-variables density
/// p_Z(h^{-1}(z')) |det J_{h^{-1}}(z')| at test points, skipping points within
/// `margin` bandwidths of any separator or support edge in either space.
inline PushforwardReport verify_pushforward_density(const DiffeoSpec& h, const GridSpec& spec, const Matrix& z_samples,
                                                    const Matrix& test_points, double bandwidth, double margin = 3.0) {
    const std::size_t d = spec.dim();
    require(h.dim() == d && static_cast<std::size_t>(z_samples.cols()) == d &&
                static_cast<std::size_t>(test_points.cols()) == d,
            "verify_pushforward_density: dimension mismatch");
    const KdeModel pz(z_samples, bandwidth);
    const KdeModel pzp(h.apply_forward(z_samples), bandwidth);
    const double cut = margin * bandwidth;

    // separator and edge images, sampled on a lattice of each hyperplane piece
    std::vector<std::vector<double>> walls(d);
    for (std::size_t i = 0; i < d; ++i) {
        walls[i] = spec.coordination.axis(i).values();
        walls[i].insert(walls[i].begin(), spec.ranges[i].lo);
        walls[i].push_back(spec.ranges[i].hi);
    }
    const int per_side = d <= 1 ? 1 : (d == 2 ? 2000 : static_cast<int>(std::pow(4e4, 1.0 / static_cast<double>(d - 1))));
    std::vector<Vector> wall_images;
    for (std::size_t i = 0; i < d; ++i)
        for (double w : walls[i]) {
            std::size_t count = 1;
            for (std::size_t k = 0; k + 1 < d; ++k) count *= static_cast<std::size_t>(per_side);
            for (std::size_t id = 0; id < count; ++id) {
                Vector z(d);
                std::size_t rest = id;
                for (std::size_t k = 0; k < d; ++k) {
                    if (k == i) {
                        z(static_cast<Eigen::Index>(k)) = w;
                        continue;
                    }
                    const auto step = static_cast<double>(rest % static_cast<std::size_t>(per_side));
                    rest /= static_cast<std::size_t>(per_side);
                    const double lo = spec.ranges[k].lo, hi = spec.ranges[k].hi;
                    z(static_cast<Eigen::Index>(k)) = per_side > 1 ? lo + (hi - lo) * step / (per_side - 1) : lo;
                }
                wall_images.push_back(h.forward(z));
            }
        }

    PushforwardReport rep;
    std::vector<double> errs;
    for (Eigen::Index r = 0; r < test_points.rows(); ++r) {
        const Vector zp = test_points.row(r).transpose();
        const Vector z = h.inverse(zp);
        bool near = false;
        for (std::size_t i = 0; i < d && !near; ++i)
            for (double w : walls[i]) near = near || std::abs(z(static_cast<Eigen::Index>(i)) - w) <= cut;
        for (const auto& wi : wall_images) {
            if (near) break;
            near = (wi - zp).norm() <= cut;
        }
        if (near) {
            ++rep.excluded;
            continue;
        }
        const double ref = std::exp(log_density(pz, z) - h.log_abs_det_jacobian(z));
        const double est = std::exp(log_density(pzp, zp));
        if (!(ref > 0.0)) {
            ++rep.excluded;
            continue;
        }
        errs.push_back(std::abs(est - ref) / ref);
    }
    if (rep.excluded > 0)
        rep.notes.push_back(std::to_string(rep.excluded) + " test points excluded (within " + std::to_string(margin) +
                            " bandwidths of a separator or support edge)");
    rep.used = errs.size();
    require(rep.used > 0, "verify_pushforward_density: every test point was excluded");
    rep.mean_abs_rel_error = pairwise_sum(0, errs.size(), [&](std::size_t i) { return errs[i]; }) /
                             static_cast<double>(errs.size());
    return rep;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalReport {
    DetectResult detected;
    MatchResult match;
    double null_agreement = 0.0;           // uniformly random predicted cells
    double shuffled_null_agreement = 0.0;  // predicted cells with rows shuffled
    std::optional<double> alignment;
    std::vector<ConfusionRow> confusion;
    nlohmann::json config;
};

struct EvalOptions {
    DetectOptions detect;
    std::uint64_t null_seed = 0;
};

/// Detect thresholds on codes, quantize, match against true cells, score.
inline EvalReport evaluate_codes(const Matrix& codes, const IndexMatrix& true_cells, const std::vector<int>& cells_true,
                                 const EvalOptions& opt) {
    std::vector<int> k(cells_true.size());
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = cells_true[i] - 1;
    EvalReport rep;
    rep.detected = detect_thresholds(codes, k, opt.detect);
    const IndexMatrix pred = assign_cells(codes, rep.detected.coordination);
    rep.match = match_and_score(true_cells, pred, cells_true, cells_true);
    rep.null_agreement = uniform_null_agreement(true_cells, cells_true, opt.null_seed);
    rep.shuffled_null_agreement = null_agreement(true_cells, pred, cells_true, cells_true, opt.null_seed);
    rep.confusion = confusion_summary(true_cells, remap_cells(pred, rep.match.permutation, rep.match.signs, cells_true),
                                      cells_true);
    rep.config = {{"bandwidth", opt.detect.bandwidth},
                  {"top_fraction", opt.detect.top_fraction},
                  {"restarts", opt.detect.restarts},
                  {"refine", to_string(opt.detect.refine)},
                  {"detect_seed", opt.detect.seed},
                  {"null_seed", opt.null_seed}};
    return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["detected"] = to_json(r.detected.coordination);
    j["detected"]["clusters"] = r.detected.clusters;
    j["detected"]["gains"] = r.detected.gains;
    j["detected"]["kept_per_axis"] = r.detected.kept_per_axis;
    j["detected"]["low_confidence"] = r.detected.low_confidence;
    j["match"] = {{"permutation", r.match.permutation},
                  {"signs", r.match.signs},
                  {"agreement", r.match.agreement},
                  {"matched", r.match.matched},
                  {"total", r.match.total}};
    j["null_agreement"] = r.null_agreement;
    j["shuffled_null_agreement"] = r.shuffled_null_agreement;
    j["alignment_index"] = r.alignment ? nlohmann::json(*r.alignment) : nlohmann::json(nullptr);
    auto& rows = j["confusion"] = nlohmann::json::array();
    for (const auto& c : r.confusion)
        rows.push_back({{"cell", c.cell},
                        {"indices", c.indices},
                        {"true_count", c.true_count},
                        {"pred_count", c.pred_count},
                        {"agree_count", c.agree_count}});
    j["config"] = r.config;
    return j;
}

}  // namespace gridalign

#include "gridalign/core_grid.hpp"
#include "gridalign/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace gridalign;

namespace {

const Thresholds kT{0.5, 2.0};

}  // namespace

TEST(Quantize, WorkedExample) {
    EXPECT_EQ(quantize(0.3, kT), 0);
    EXPECT_EQ(quantize(1.0, kT), 1);
    EXPECT_EQ(quantize(3.0, kT), 2);
    EXPECT_EQ(quantize(0.5, kT), 1);  // >= at the boundary
    EXPECT_EQ(quantize(2.0, kT), 2);
}

TEST(Quantize, Reversed) {
    EXPECT_EQ(quantize_reversed(0.3, kT), 2);
    EXPECT_EQ(quantize_reversed(3.0, kT), 0);
    EXPECT_EQ(quantize_reversed(2.0, kT), 1);
    EXPECT_EQ(quantize_reversed(0.5, kT), 2);
}

TEST(Quantize, Signed) {
    EXPECT_EQ(quantize_signed(1.0, kT, +1), 1);
    EXPECT_EQ(quantize_signed(1.0, kT, -1), 1);
    EXPECT_EQ(quantize_signed(2.0, kT, -1), 1);
    EXPECT_THROW(quantize_signed(1.0, kT, 0), Error);
}

TEST(Quantize, PropertiesOnRandomThresholds) {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(1 + rng.below(6));
        for (auto& x : v) x = rng.uniform(-5, 5);
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        const Thresholds t(v);
        double prev_z = -10.0;
        int prev_q = quantize(prev_z, t), prev_r = quantize_reversed(prev_z, t);
        for (int s = 0; s < 50; ++s) {
            const double z = prev_z + rng.uniform(0.0, 0.5);
            const int q = quantize(z, t), r = quantize_reversed(z, t);
            EXPECT_GE(q, prev_q);
            EXPECT_LE(r, prev_r);
            EXPECT_GE(q, 0);
            EXPECT_LE(q, static_cast<int>(t.size()));
            if (std::find(v.begin(), v.end(), z) == v.end()) {
                EXPECT_EQ(q + r, static_cast<int>(t.size()));
            }
            prev_z = z;
            prev_q = q;
            prev_r = r;
        }
    }
}

TEST(Thresholds, RejectsInvalid) {
    EXPECT_THROW(Thresholds({}), Error);
    EXPECT_THROW(Thresholds({2.0, 0.5}), Error);
    EXPECT_THROW(Thresholds({1.0, 1.0}), Error);
}

TEST(CellIndex, Componentwise) {
    const auto a = DiscreteCoordination::from_values({{0.5, 2.0}, {1.0}});
    EXPECT_EQ(cell_index(std::vector<double>{1.0, 0.2}, a).indices, (std::vector<int>{1, 0}));
    EXPECT_EQ(cell_index(std::vector<double>{-1.0, -1.0}, a).indices, (std::vector<int>{0, 0}));
    EXPECT_EQ(cell_index(std::vector<double>{3.0, 1.5}, a).indices, (std::vector<int>{2, 1}));
    EXPECT_THROW(cell_index(std::vector<double>{1.0}, a), Error);
}

TEST(CellIndex, FlatRoundTrip) {
    const auto a = DiscreteCoordination::from_values({{0.5, 2.0}, {1.0}, {0.0, 1.0, 2.0}});
    EXPECT_EQ(a.cell_count(), 3u * 2u * 4u);
    for (std::size_t id = 0; id < a.cell_count(); ++id) EXPECT_EQ(flat_cell(unflatten_cell(id, a), a), id);
}

TEST(Coordination, Validation) {
    EXPECT_FALSE(validate_coordination({{0.5, 2.0}, {1.0}}).has_value());
    auto bad_order = validate_coordination({{2.0, 0.5}, {1.0}});
    ASSERT_TRUE(bad_order.has_value());
    EXPECT_EQ(bad_order->axis, 0u);
    auto empty = validate_coordination({{}, {1.0}});
    ASSERT_TRUE(empty.has_value());
    EXPECT_EQ(empty->axis, 0u);
    auto later = validate_coordination({{0.0}, {3.0, 1.0}});
    ASSERT_TRUE(later.has_value());
    EXPECT_EQ(later->axis, 1u);
}

TEST(Coordination, RejectsOversizedGrids) {
    std::vector<double> axis(65535);
    std::iota(axis.begin(), axis.end(), 0.0);
    // 65536^2 = 2^32 cells
    EXPECT_TRUE(validate_coordination({axis, axis}).has_value());
}

TEST(Coordination, JsonRoundTrip) {
    const auto a = DiscreteCoordination::from_values({{0.1, 0.7000000000000001, 2.0}, {-1e-300}});
    const auto text = to_json(a).dump();
    EXPECT_EQ(coordination_from_json(nlohmann::json::parse(text)), a);
    EXPECT_NE(text.find("0.7000000000000001"), std::string::npos);
    EXPECT_THROW(coordination_from_json(nlohmann::json::parse(R"({"axes": [[2, 1]]})")), Error);
}

namespace {

std::vector<Interval> box(double x0, double x1, double y0, double y1) { return {{x0, x1}, {y0, y1}}; }

}  // namespace

TEST(Backbone, CompleteGrid) {
    std::vector<SeparatorExtent> s;
    for (double x : {1.0, 2.0, 3.0}) s.push_back(SeparatorExtent::make(0, x, box(0, 4, 0, 4)));
    for (double y : {1.5, 2.5}) s.push_back(SeparatorExtent::make(1, y, box(0, 4, 0, 4)));
    const auto r = has_backbone(s, 2);
    ASSERT_TRUE(r.found) << r.reason;
    EXPECT_EQ(r.chosen.size(), 2u);
    EXPECT_EQ(r.meeting_point, (std::vector<double>{1.0, 1.5}));
}

TEST(Backbone, HorizontalStopsShortOfRightmostVertical) {
    // Two vertical separators spanning the full height; the only horizontal one
    // stops before reaching x = 3.
    std::vector<SeparatorExtent> s{
        SeparatorExtent::make(0, 1.0, box(0, 4, 0, 4)),
        SeparatorExtent::make(0, 3.0, box(0, 4, 0, 4)),
        SeparatorExtent::make(1, 2.0, box(0, 2.5, 0, 4)),
    };
    const auto r = has_backbone(s, 2);
    EXPECT_FALSE(r.found);
}

TEST(Backbone, MissingAxis) {
    std::vector<SeparatorExtent> s{SeparatorExtent::make(0, 1.0, box(0, 4, 0, 4))};
    const auto r = has_backbone(s, 2);
    EXPECT_FALSE(r.found);
    EXPECT_EQ(r.reason, "no separator on axis 1");
}

TEST(Backbone, SeparatorsMustMeet) {
    // Each separator crosses the other's position range but the chosen pair
    // does not share a point: the vertical one only covers y in [0, 1].
    std::vector<SeparatorExtent> s{
        SeparatorExtent::make(0, 1.0, box(0, 4, 0, 1)),
        SeparatorExtent::make(1, 2.0, box(0, 4, 0, 4)),
    };
    EXPECT_FALSE(has_backbone(s, 2).found);
}

TEST(Backbone, PermutationEquivariant) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<SeparatorExtent> s;
        const int count = 2 + static_cast<int>(rng.below(5));
        for (int k = 0; k < count; ++k) {
            const std::size_t axis = rng.below(3);
            std::vector<Interval> b(3);
            for (auto& iv : b) {
                const double lo = rng.uniform(0, 2), hi = lo + rng.uniform(0, 3);
                iv = {lo, hi};
            }
            s.push_back(SeparatorExtent::make(axis, rng.uniform(0, 4), b));
        }
        const std::vector<std::size_t> perm{2, 0, 1};
        std::vector<SeparatorExtent> p;
        for (const auto& sep : s) {
            std::vector<Interval> b(3);
            for (std::size_t j = 0; j < 3; ++j) b[perm[j]] = sep.extent[j];
            p.push_back(SeparatorExtent{perm[sep.axis], sep.position, b});
        }
        EXPECT_EQ(has_backbone(s, 3).found, has_backbone(p, 3).found);
    }
}

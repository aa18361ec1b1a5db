#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "condseg/error.hpp"
#include "condseg/eval.hpp"
#include "condseg/geometry.hpp"
#include "oracles.hpp"

using namespace condseg;

namespace {

std::vector<float> disk(std::size_t size, double cx, double cy, double r) {
  std::vector<float> m(size * size, 0.0f);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      if (dx * dx + dy * dy <= r * r) m[y * size + x] = 1.0f;
    }
  return m;
}

double area(const std::vector<float>& m) { return std::accumulate(m.begin(), m.end(), 0.0); }

std::vector<std::size_t> indices_of(const Polyline& input, const Polyline& kept) {
  std::vector<std::size_t> out;
  std::size_t j = 0;
  for (const auto& p : kept) {
    while (j < input.size() && !(input[j] == p)) ++j;
    out.push_back(j++);
  }
  return out;
}

}  // namespace

TEST(DouglasPeucker, CollinearPointsCollapseToEndpoints) {
  const Polyline line{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}};
  EXPECT_EQ(douglas_peucker(line, 0.1), (Polyline{{0, 0}, {4, 4}}));
}

TEST(DouglasPeucker, ZeroToleranceKeepsEveryDeviatingPoint) {
  Rng rng(3);
  const auto arc = oracle::noisy_arc(10, rng);
  EXPECT_EQ(douglas_peucker(arc, 0.0), arc);
}

TEST(DouglasPeucker, Errors) {
  EXPECT_THROW(douglas_peucker({{0, 0}}, 1.0), ValidationError);
  EXPECT_THROW(douglas_peucker({{0, 0}, {1, 1}}, -1.0), ValidationError);
}

TEST(DouglasPeucker, KnownSpike) {
  const Polyline p{{0, 0}, {1, 0.1}, {2, 3}, {3, 0.1}, {4, 0}};
  EXPECT_EQ(douglas_peucker(p, 1.0), (Polyline{{0, 0}, {2, 3}, {4, 0}}));
  EXPECT_EQ(douglas_peucker(p, 0.5), p);
}

class DouglasPeuckerExhaustive : public ::testing::TestWithParam<int> {};

TEST_P(DouglasPeuckerExhaustive, NoisyArcIsFeasibleAndNeverBeatsTheMinimum) {
  Rng rng(200 + GetParam());
  const std::size_t n = 6 + GetParam() % 7;
  const auto arc = oracle::noisy_arc(n, rng);
  const double tol = 1.5;
  const auto idx = indices_of(arc, douglas_peucker(arc, tol));
  EXPECT_EQ(idx, oracle::douglas_peucker_indices(arc, tol));
  const auto minimal = oracle::minimal_simplifications(arc, tol);
  ASSERT_FALSE(minimal.empty());
  EXPECT_GE(idx.size(), minimal.front().size());
  for (std::size_t s = 0; s + 1 < idx.size(); ++s) {
    for (std::size_t i = idx[s] + 1; i < idx[s + 1]; ++i) {
      EXPECT_LE(oracle::segment_distance(arc[i], arc[idx[s]], arc[idx[s + 1]]), tol);
    }
  }
}

TEST(DouglasPeucker, GreedySplitIsNotAlwaysMinimal) {
  // Splitting at the farthest point of each chord keeps one point more than needed.
  const Polyline p{{0, 0}, {1, 2}, {2, 2.2}, {3, 2}, {4, 0}, {5, -2}, {6, -0.3}};
  const auto minimal = oracle::minimal_simplifications(p, 0.5);
  const auto got = douglas_peucker(p, 0.5);
  EXPECT_EQ(indices_of(p, got), oracle::douglas_peucker_indices(p, 0.5));
  EXPECT_EQ(got.size(), minimal.front().size() + 1);
}

INSTANTIATE_TEST_SUITE_P(Seeds, DouglasPeuckerExhaustive, ::testing::Range(0, 12));

TEST(DouglasPeucker, OutputIsSubsequenceAndRemovedPointsStayClose) {
  for (int seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    Polyline p;
    for (int i = 0; i < 25; ++i) p.push_back({rng.uniform(0, 20), rng.uniform(0, 20)});
    const double tol = rng.uniform(0.5, 4.0);
    const auto out = douglas_peucker(p, tol);
    EXPECT_EQ(out.front(), p.front());
    EXPECT_EQ(out.back(), p.back());
    const auto idx = indices_of(p, out);
    ASSERT_LT(idx.back(), p.size());
    for (std::size_t s = 0; s + 1 < idx.size(); ++s) {
      for (std::size_t i = idx[s] + 1; i < idx[s + 1]; ++i) {
        EXPECT_LE(oracle::segment_distance(p[i], p[idx[s]], p[idx[s + 1]]), tol);
      }
    }
  }
}

TEST(Geometry, PointSegmentDistance) {
  EXPECT_DOUBLE_EQ(point_segment_distance({0, 1}, {-1, 0}, {1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(point_segment_distance({3, 4}, {0, 0}, {0, 0}), 5.0);
  EXPECT_DOUBLE_EQ(point_segment_distance({5, 0}, {0, 0}, {2, 0}), 3.0);
}

TEST(Rasterize, AxisAlignedSquareUsesHalfOpenCenters) {
  const Polyline square{{1.0, 1.0}, {4.0, 1.0}, {4.0, 3.0}, {1.0, 3.0}, {1.0, 1.0}};
  const auto m = rasterize_polygons({square}, 5, 6);
  std::vector<float> want(30, 0.0f);
  for (std::size_t y = 1; y < 3; ++y)
    for (std::size_t x = 1; x < 4; ++x) want[y * 6 + x] = 1.0f;
  EXPECT_EQ(m, want);
}

TEST(Rasterize, EvenOddLeavesHoles) {
  const Polyline outer{{0.5, 0.5}, {7.5, 0.5}, {7.5, 7.5}, {0.5, 7.5}, {0.5, 0.5}};
  const Polyline inner{{2.5, 2.5}, {5.5, 2.5}, {5.5, 5.5}, {2.5, 5.5}, {2.5, 2.5}};
  const auto m = rasterize_polygons({outer, inner}, 8, 8);
  EXPECT_EQ(m[1 * 8 + 1], 1.0f);
  EXPECT_EQ(m[4 * 8 + 4], 0.0f);
  EXPECT_EQ(area(m), 49.0 - 9.0);
}

TEST(Contours, SquareBlobGivesOneClosedLoop) {
  std::vector<float> m(36, 0.0f);
  for (std::size_t y = 2; y < 4; ++y)
    for (std::size_t x = 1; x < 5; ++x) m[y * 6 + x] = 1.0f;
  const auto loops = trace_contours(m, 6, 6);
  ASSERT_EQ(loops.size(), 1u);
  EXPECT_EQ(loops[0].front(), loops[0].back());
  EXPECT_EQ(rasterize_polygons(loops, 6, 6), m);
}

TEST(Contours, DiagonalPixelsStaySeparate) {
  const std::vector<float> m{1, 0, 0, 1};
  EXPECT_EQ(trace_contours(m, 2, 2).size(), 2u);
  EXPECT_THROW(trace_contours(m, 3, 2), ShapeError);
}

TEST(Polygonize, ZeroToleranceIsIdentity) {
  Rng rng(8);
  std::vector<float> m(24 * 24);
  for (auto& v : m) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
  EXPECT_EQ(polygonize_mask(m, 24, 24, 0.0), m);
  const auto circle = disk(32, 15.3, 16.1, 9.0);
  EXPECT_EQ(polygonize_mask(circle, 32, 32, 0.0), circle);
}

TEST(Polygonize, EmptyMaskStaysEmpty) {
  const std::vector<float> m(64, 0.0f);
  EXPECT_EQ(polygonize_mask(m, 8, 8, 3.0), m);
}

TEST(Polygonize, CoarseCircleKeepsAreaWithinFifteenPercent) {
  const auto circle = disk(64, 31.5, 31.5, 20.0);
  const auto poly = polygonize_mask(circle, 64, 64, 3.5);
  EXPECT_NE(poly, circle);
  EXPECT_NEAR(area(poly) / area(circle), 1.0, 0.15);
  const auto loops = trace_contours(poly, 64, 64);
  ASSERT_EQ(loops.size(), 1u);
  EXPECT_LT(douglas_peucker(loops[0], 3.5).size(), 16u);
}

TEST(Polygonize, FineToleranceStaysCloserThanCoarse) {
  const auto circle = disk(64, 30.7, 32.2, 12.0);
  const auto fine = polygonize_mask(circle, 64, 64, 2.0);
  const auto coarse = polygonize_mask(circle, 64, 64, 3.5);
  EXPECT_GT(f1_score(fine, circle), f1_score(coarse, circle));
  EXPECT_LT(f1_score(fine, circle), 1.0);
}

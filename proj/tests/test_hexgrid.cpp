#include <gtest/gtest.h>

#include <set>
#include <stdexcept>

#include "mealtwin/hexgrid.hpp"
#include "oracles.hpp"

using namespace mealtwin;

TEST(HexDistance, ZeroWithinAGrid) { EXPECT_EQ(hex_distance({0, 0}, {0, 0}), 0); }

TEST(HexDistance, AdjacentIsOneUnit) { EXPECT_EQ(hex_distance({0, 0}, {1, 0}), 1); }

TEST(HexDistance, MatchesBfsForTwoMinusOne) {
  const auto hops = oracle::bfs_hops({0, 0}, 4);
  EXPECT_EQ(hops.at({2, -1}), 2);
  EXPECT_EQ(hex_distance({0, 0}, {2, -1}), 2);
}

TEST(HexDistance, MetricLawsOnDefaultRegion) {
  const auto region = ServiceRegion::default_5x5();
  const auto n = static_cast<GridId>(region.size());
  for (GridId a = 0; a < n; ++a) {
    EXPECT_EQ(region.distance(a, a), 0);
    for (GridId b = 0; b < n; ++b) {
      EXPECT_EQ(region.distance(a, b), region.distance(b, a));
      if (a != b) {
        EXPECT_GT(region.distance(a, b), 0);
      }
      for (GridId c = 0; c < n; ++c) {
        EXPECT_LE(region.distance(a, c), region.distance(a, b) + region.distance(b, c));
      }
    }
  }
}

TEST(HexDistance, AgreesWithBfsWithinRadiusSix) {
  const auto from_origin = oracle::bfs_hops({0, 0}, 6);
  int pairs = 0;
  for (const auto& [a, da] : from_origin) {
    const auto hops = oracle::bfs_hops({a.first, a.second}, 12);
    for (const auto& [b, db] : from_origin) {
      ASSERT_EQ(hex_distance({a.first, a.second}, {b.first, b.second}), hops.at(b));
      ++pairs;
    }
    (void)da;
  }
  EXPECT_GT(pairs, 10000);
}

TEST(HexDistance, RegionDistanceEqualsInRegionWalk) {
  // The 5x5 region is convex on the lattice, so walking inside it is never longer.
  const auto region = ServiceRegion::default_5x5();
  for (GridId a = 0; a < 25; ++a) {
    for (GridId b = 0; b < 25; ++b) EXPECT_EQ(region.distance(a, b), oracle::region_hops(region, a, b));
  }
}

TEST(TravelMinutes, ThreePerUnit) {
  EXPECT_EQ(travel_minutes({1, 1}, {1, 1}), 0);
  EXPECT_EQ(travel_minutes({0, 0}, {0, 1}), 3);
  const auto hops = oracle::bfs_hops({0, 0}, 5);
  EXPECT_EQ(hops.at({4, -2}), 4);
  EXPECT_EQ(travel_minutes({0, 0}, {4, -2}), 12);
}

TEST(Region, DefaultLayout) {
  const auto region = ServiceRegion::default_5x5();
  ASSERT_EQ(region.size(), 25u);
  EXPECT_EQ(region.restaurant_grids(), (std::vector<GridId>{6, 7, 8, 11, 12, 13, 16, 17, 18}));
  for (GridId g = 0; g < 25; ++g) EXPECT_EQ(region.cell(g).id, g);
  // row-major: grid 5 opens row 1, grid 24 closes row 4
  EXPECT_EQ(region.coord(0).r, 0);
  EXPECT_EQ(region.coord(5).r, 1);
  EXPECT_EQ(region.coord(24).r, 4);
}

TEST(Region, EveryGridReachable) {
  const auto region = ServiceRegion::default_5x5();
  for (GridId g = 0; g < 25; ++g) EXPECT_GE(oracle::region_hops(region, 0, g), 0);
}

TEST(Neighbors, InteriorHasSixSlots) {
  const auto region = ServiceRegion::default_5x5();
  for (GridId g : region.restaurant_grids()) {
    const auto nb = region.neighbors(g);
    for (const auto& slot : nb) EXPECT_TRUE(slot.has_value()) << "grid " << g;
  }
}

TEST(Neighbors, CornerHasAtMostThree) {
  const auto region = ServiceRegion::default_5x5();
  for (GridId g : {0, 4, 20, 24}) {
    int present = 0;
    for (const auto& slot : region.neighbors(g)) present += slot.has_value();
    // oracle: enumerate offsets against membership
    int expected = 0;
    for (const auto& off : kNeighborOffsets) expected += region.contains(region.coord(g) + off);
    EXPECT_EQ(present, expected);
    EXPECT_LE(present, 3);
  }
}

TEST(Neighbors, SlotsFollowCanonicalOffsetsAndAreStable) {
  const auto region = ServiceRegion::default_5x5();
  for (GridId g = 0; g < 25; ++g) {
    const auto a = region.neighbors(g);
    const auto b = region.neighbors(g);
    EXPECT_EQ(a, b);
    for (std::size_t i = 0; i < 6; ++i) {
      const auto expect = region.find(region.coord(g) + kNeighborOffsets[i]);
      EXPECT_EQ(a[i], expect);
      if (a[i]) {
        EXPECT_EQ(region.distance(g, *a[i]), 1);
      }
    }
  }
}

TEST(Neighbors, OutsideRegionIsDomainError) {
  const auto region = ServiceRegion::default_5x5();
  EXPECT_THROW(region.neighbors(HexCoord{40, 40}), std::domain_error);
}

TEST(Neighborhood, SelfFirstThenSlots) {
  const auto region = ServiceRegion::default_5x5();
  for (GridId g = 0; g < 25; ++g) {
    const auto hood = region.neighborhood(g);
    ASSERT_FALSE(hood.empty());
    EXPECT_EQ(hood.front(), g);
    const auto ref = oracle::closed_neighborhood(region, g);
    EXPECT_EQ(std::set<GridId>(hood.begin(), hood.end()), std::set<GridId>(ref.begin(), ref.end()));
  }
}

TEST(ShortestPath, TrivialCases) {
  EXPECT_EQ(shortest_path({1, 2}, {1, 2}), (std::vector<HexCoord>{{1, 2}}));
  EXPECT_EQ(shortest_path({0, 0}, {1, 0}), (std::vector<HexCoord>{{0, 0}, {1, 0}}));
}

TEST(ShortestPath, LengthAndStepsOnAllRadiusFourPairs) {
  const auto cells = oracle::bfs_hops({0, 0}, 4);
  for (const auto& [a, da] : cells) {
    for (const auto& [b, db] : cells) {
      const HexCoord A{a.first, a.second}, B{b.first, b.second};
      const auto path = shortest_path(A, B);
      ASSERT_EQ(static_cast<int>(path.size()), hex_distance(A, B) + 1);
      EXPECT_EQ(path.front(), A);
      EXPECT_EQ(path.back(), B);
      for (std::size_t i = 1; i < path.size(); ++i) {
        bool canonical = false;
        for (const auto& off : kNeighborOffsets) canonical = canonical || path[i - 1] + off == path[i];
        EXPECT_TRUE(canonical);
      }
    }
  }
}

TEST(ShortestPath, DistanceThreePairHasFourGrids) {
  const auto hops = oracle::bfs_hops({0, 0}, 3);
  ASSERT_EQ(hops.at({3, -1}), 3);
  const auto p = shortest_path({0, 0}, {3, -1});
  EXPECT_EQ(p.size(), 4u);
}

TEST(ShortestPath, LowestSlotTieBreak) {
  // From the origin to (1,-1)+(1,0) = (2,-1): slot 0 (+1,0) and slot 1 (+1,-1)
  // both reduce the distance; slot 0 wins.
  const auto p = shortest_path({0, 0}, {2, -1});
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[1], (HexCoord{1, 0}));
}

TEST(ShortestPath, RegionOverloadRejectsOutsideEndpoints) {
  const auto region = ServiceRegion::default_5x5();
  EXPECT_THROW(shortest_path(region, region.coord(0), HexCoord{50, 0}), std::domain_error);
  const auto p = shortest_path(region, region.coord(0), region.coord(24));
  for (const auto& c : p) EXPECT_TRUE(region.contains(c));
}

TEST(Region, RectangleDimensions) {
  const auto r = ServiceRegion::rectangle(7, 3);
  EXPECT_EQ(r.size(), 21u);
  for (GridId a = 0; a < 21; ++a) {
    for (GridId b = 0; b < 21; ++b) EXPECT_EQ(r.distance(a, b), oracle::region_hops(r, a, b));
  }
}

// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/render.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace deeptrack {
namespace {

BinaryGrid diagonal(int m) {
  BinaryGrid g(m);
  for (int i = 0; i < m; ++i) g.set(i, i, 1);
  return g;
}

BinaryGrid all_ones(int m) {
  BinaryGrid g(m);
  for (auto& c : g.cells()) c = 1;
  return g;
}

std::vector<double> as_probabilities(const BinaryGrid& g) {
  std::vector<double> p;
  for (auto c : g.cells()) p.push_back(c ? 1.0 : 0.0);
  return p;
}

TEST(Overlay, PerfectPredictionIsGreenOnOccupiedCells) {
  const BinaryGrid truth = diagonal(7);
  const Image img = render_overlay(as_probabilities(truth), truth, all_ones(7), 0.5, 1);
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 7; ++c) {
      const Rgb px = img.at(c, 6 - r);
      EXPECT_EQ(px, truth.at(r, c) ? palette::kTruePositive : palette::kFree) << r << "," << c;
    }
  }
}

TEST(Overlay, AllFreePredictionIsRedAtTruth) {
  const BinaryGrid truth = diagonal(5);
  const std::vector<double> p(25, 0.0);
  const Image img = render_overlay(p, truth, all_ones(5), 0.5, 3);
  ASSERT_EQ(img.width(), 15);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) {
      EXPECT_EQ(img.at(3 * c + 1, 3 * (4 - r) + 1), truth.at(r, c) ? palette::kFalseNegative : palette::kFree);
    }
  }
}

TEST(Overlay, FalsePositivesBlueAndHiddenCellsGrey) {
  BinaryGrid truth(3);
  BinaryGrid visible = all_ones(3);
  visible.set(0, 0, 0);
  std::vector<double> p(9, 0.0);
  p[1] = 0.5;  // threshold is inclusive
  p[0] = 1.0;
  const Image img = render_overlay(p, truth, visible, 0.5, 1);
  EXPECT_EQ(img.at(1, 2), palette::kFalsePositive);
  EXPECT_EQ(img.at(0, 2), palette::kUnobserved);
}

TEST(Panels, ObservationColoursAndOrientation) {
  ObservationGrid obs = ObservationGrid::empty(3);
  obs.vis.set(2, 0, 1);
  obs.vis.set(2, 1, 1);
  obs.occ.set(2, 1, 1);
  const Image img = render_observation(obs, 1);
  EXPECT_EQ(img.at(0, 0), palette::kFree);      // row 2 is the top image row
  EXPECT_EQ(img.at(1, 0), palette::kOccupied);
  EXPECT_EQ(img.at(0, 2), palette::kUnobserved);
}

TEST(Panels, HiddenTilesOnePerSelectedMap) {
  const int m = 4;
  std::vector<double> act(3 * m * m, 0.0);
  for (int i = 0; i < m * m; ++i) act[2 * m * m + i] = 1.0;
  const std::vector<int> sel = {0, 2};
  const Image img = render_hidden_tiles(act, 3, m, sel, 2);
  EXPECT_EQ(img.width(), 2 * (m * 2) + 2);
  EXPECT_EQ(img.height(), m * 2);
  EXPECT_EQ(img.at(0, 0), (Rgb{128, 128, 128}));
  EXPECT_EQ(img.at(img.width() - 1, 0), (Rgb{255, 255, 255}));
  const std::vector<int> bad = {3};
  EXPECT_THROW(render_hidden_tiles(act, 3, m, bad, 2), std::invalid_argument);
}

TEST(Ppm, RoundTrip) {
  Image img(5, 3, {1, 2, 3});
  img.set(4, 2, {200, 10, 0});
  std::stringstream ss;
  write_ppm(img, ss);
  EXPECT_EQ(ss.str().substr(0, 11), "P6\n5 3\n255\n");
  const Image back = read_ppm(ss);
  EXPECT_EQ(back.at(4, 2), (Rgb{200, 10, 0}));
  EXPECT_EQ(back.at(0, 0), (Rgb{1, 2, 3}));
}

TEST(Plot, CurvesAreDrawnAtTheirValues) {
  HorizonCurve flat;
  for (int k = 1; k <= 4; ++k) flat.points.push_back({k, {}, 0, 0, 1.0, false});
  const Image img = plot_horizon({flat}, 200, 120);
  // f1 = 1 sits on the top margin line.
  EXPECT_EQ(img.at(24, 24), curve_colour(0));
  EXPECT_EQ(img.at(176, 24), curve_colour(0));
  EXPECT_EQ(img.at(100, 62), palette::kFree);
  EXPECT_EQ(img.at(100, 60), (Rgb{220, 220, 220}));  // f1 = 0.5 grid line
}

}  // namespace
}  // namespace deeptrack

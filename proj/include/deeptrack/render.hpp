// SPDX-License-Identifier: Apache-2.0
//
// Raster output for inspection: grid panels, prediction overlays, hidden
// state tiles and horizon plots, written as binary PPM (P6).
//
// Grids are drawn with +y up, so grid row 0 lands on the bottom image row.

#ifndef DEEPTRACK_RENDER_HPP_
#define DEEPTRACK_RENDER_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "deeptrack/evaluation.hpp"
#include "deeptrack/geometry.hpp"

namespace deeptrack {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

namespace palette {
inline constexpr Rgb kUnobserved{128, 128, 128};
inline constexpr Rgb kFree{255, 255, 255};
inline constexpr Rgb kOccupied{0, 0, 0};
inline constexpr Rgb kTruePositive{0, 170, 0};
inline constexpr Rgb kFalseNegative{220, 0, 0};
inline constexpr Rgb kFalsePositive{0, 0, 220};
inline constexpr Rgb kBackground{40, 40, 40};
}  // namespace palette

class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {});

  int width() const { return width_; }
  int height() const { return height_; }
  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb c);
  /// Ignores pixels outside the image.
  void plot(int x, int y, Rgb c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);  // inclusive
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void blit(const Image& src, int x, int y);
  std::span<const std::uint8_t> bytes() const { return pixels_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

void write_ppm(const Image& image, std::ostream& out);
void write_ppm(const Image& image, const std::string& path);
Image read_ppm(std::istream& in);

/// Unobserved grey, free white, occupied black; `scale` pixels per cell.
Image render_observation(const ObservationGrid& obs, int scale);
Image render_binary(const BinaryGrid& grid, int scale);
/// Probability p as grey level 255 * (1 - p): occupied is dark.
Image render_probability(std::span<const double> p, int size_cells, int scale);

/// Thresholded prediction against `truth`: true positives green, false
/// negatives red, false positives blue, true negatives white. Cells where
/// `visible` is 0 are grey.
Image render_overlay(std::span<const double> p, const BinaryGrid& truth, const BinaryGrid& visible,
                     double threshold, int scale);

/// One tile per selected feature map of a (maps, M, M) activation block,
/// values in [-1, 1] mapped to black..white.
Image render_hidden_tiles(std::span<const double> activations, int maps, int size_cells,
                          std::span<const int> selected, int scale);

/// Places images left to right with `gap` background pixels between them.
Image hstack(const std::vector<Image>& images, int gap = 4);
Image vstack(const std::vector<Image>& images, int gap = 4);

/// F1 against offset, one polyline per curve, y axis 0..1 with grid lines
/// every 0.1, one tick per offset.
Image plot_horizon(const std::vector<HorizonCurve>& curves, int width = 480, int height = 320);

/// Colour used for curve `i` in plot_horizon.
Rgb curve_colour(std::size_t i);

}  // namespace deeptrack

#endif  // DEEPTRACK_RENDER_HPP_

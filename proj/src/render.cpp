// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace deeptrack {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("Image: negative size");
  pixels_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = fill.r;
    pixels_[i + 1] = fill.g;
    pixels_[i + 2] = fill.b;
  }
}

Rgb Image::at(int x, int y) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) throw std::out_of_range("Image::at");
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) throw std::out_of_range("Image::set");
  plot(x, y, c);
}

void Image::plot(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  pixels_[i] = c.r;
  pixels_[i + 1] = c.g;
  pixels_[i + 2] = c.b;
}

void Image::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::max(0, y0); y <= std::min(height_ - 1, y1); ++y) {
    for (int x = std::max(0, x0); x <= std::min(width_ - 1, x1); ++x) plot(x, y, c);
  }
}

void Image::line(int x0, int y0, int x1, int y1, Rgb c) {
  // Bresenham.
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    plot(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Image::blit(const Image& src, int x, int y) {
  for (int j = 0; j < src.height(); ++j) {
    for (int i = 0; i < src.width(); ++i) plot(x + i, y + j, src.at(i, j));
  }
}

void write_ppm(const Image& image, std::ostream& out) {
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  const auto bytes = image.bytes();
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed");
}

void write_ppm(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  write_ppm(image, out);
}

Image read_ppm(std::istream& in) {
  std::string magic;
  int w = 0;
  int h = 0;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P6" || maxval != 255 || w < 0 || h < 0) throw std::runtime_error("read_ppm: bad header");
  in.get();
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      char px[3];
      if (!in.read(px, 3)) throw std::runtime_error("read_ppm: truncated");
      img.set(x, y, {static_cast<std::uint8_t>(px[0]), static_cast<std::uint8_t>(px[1]),
                     static_cast<std::uint8_t>(px[2])});
    }
  }
  return img;
}

namespace {

void check_scale(int scale) {
  if (scale < 1) throw std::invalid_argument("render: scale must be >= 1");
}

template <typename F>
Image render_cells(int m, int scale, F&& colour_of) {
  check_scale(scale);
  Image img(m * scale, m * scale);
  for (int r = 0; r < m; ++r) {
    const int y0 = (m - 1 - r) * scale;
    for (int c = 0; c < m; ++c) img.fill_rect(c * scale, y0, c * scale + scale - 1, y0 + scale - 1, colour_of(r, c));
  }
  return img;
}

std::uint8_t grey(double v01) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v01, 0.0, 1.0))); }

}  // namespace

Image render_observation(const ObservationGrid& obs, int scale) {
  if (obs.vis.size() != obs.occ.size()) throw std::invalid_argument("render_observation: plane size mismatch");
  return render_cells(obs.vis.size(), scale, [&](int r, int c) {
    if (!obs.vis.at(r, c)) return palette::kUnobserved;
    return obs.occ.at(r, c) ? palette::kOccupied : palette::kFree;
  });
}

Image render_binary(const BinaryGrid& grid, int scale) {
  return render_cells(grid.size(), scale,
                      [&](int r, int c) { return grid.at(r, c) ? palette::kOccupied : palette::kFree; });
}

Image render_probability(std::span<const double> p, int size_cells, int scale) {
  if (p.size() != static_cast<std::size_t>(size_cells) * size_cells) {
    throw std::invalid_argument("render_probability: size mismatch");
  }
  return render_cells(size_cells, scale, [&](int r, int c) {
    const std::uint8_t g = grey(1.0 - p[static_cast<std::size_t>(r) * size_cells + c]);
    return Rgb{g, g, g};
  });
}

Image render_overlay(std::span<const double> p, const BinaryGrid& truth, const BinaryGrid& visible,
                     double threshold, int scale) {
  const int m = truth.size();
  if (p.size() != static_cast<std::size_t>(m) * m || visible.size() != m) {
    throw std::invalid_argument("render_overlay: size mismatch");
  }
  return render_cells(m, scale, [&](int r, int c) {
    if (!visible.at(r, c)) return palette::kUnobserved;
    const bool pred = p[static_cast<std::size_t>(r) * m + c] >= threshold;
    const bool occ = truth.at(r, c) != 0;
    if (pred && occ) return palette::kTruePositive;
    if (occ) return palette::kFalseNegative;
    if (pred) return palette::kFalsePositive;
    return palette::kFree;
  });
}

Image render_hidden_tiles(std::span<const double> activations, int maps, int size_cells,
                          std::span<const int> selected, int scale) {
  const std::size_t plane = static_cast<std::size_t>(size_cells) * size_cells;
  if (activations.size() != plane * static_cast<std::size_t>(maps)) {
    throw std::invalid_argument("render_hidden_tiles: size mismatch");
  }
  std::vector<Image> tiles;
  for (int f : selected) {
    if (f < 0 || f >= maps) throw std::invalid_argument("render_hidden_tiles: feature map out of range");
    const double* base = activations.data() + plane * static_cast<std::size_t>(f);
    tiles.push_back(render_cells(size_cells, scale, [&](int r, int c) {
      const std::uint8_t g = grey(0.5 * (base[static_cast<std::size_t>(r) * size_cells + c] + 1.0));
      return Rgb{g, g, g};
    }));
  }
  return hstack(tiles, 2);
}

Image hstack(const std::vector<Image>& images, int gap) {
  int w = 0;
  int h = 0;
  for (const Image& im : images) {
    w += im.width();
    h = std::max(h, im.height());
  }
  if (!images.empty()) w += gap * static_cast<int>(images.size() - 1);
  Image out(w, h, palette::kBackground);
  int x = 0;
  for (const Image& im : images) {
    out.blit(im, x, 0);
    x += im.width() + gap;
  }
  return out;
}

Image vstack(const std::vector<Image>& images, int gap) {
  int w = 0;
  int h = 0;
  for (const Image& im : images) {
    h += im.height();
    w = std::max(w, im.width());
  }
  if (!images.empty()) h += gap * static_cast<int>(images.size() - 1);
  Image out(w, h, palette::kBackground);
  int y = 0;
  for (const Image& im : images) {
    out.blit(im, 0, y);
    y += im.height() + gap;
  }
  return out;
}

Rgb curve_colour(std::size_t i) {
  static constexpr Rgb kColours[] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14}};
  return kColours[i % (sizeof(kColours) / sizeof(kColours[0]))];
}

Image plot_horizon(const std::vector<HorizonCurve>& curves, int width, int height) {
  constexpr int kMargin = 24;
  if (width < 4 * kMargin || height < 4 * kMargin) throw std::invalid_argument("plot_horizon: image too small");
  Image img(width, height, palette::kFree);
  const int x0 = kMargin;
  const int x1 = width - kMargin;
  const int y0 = height - kMargin;  // f1 = 0
  const int y1 = kMargin;           // f1 = 1
  std::size_t n = 0;
  for (const HorizonCurve& c : curves) n = std::max(n, c.points.size());

  const Rgb grid{220, 220, 220};
  for (int i = 0; i <= 10; ++i) {
    const int y = y0 + static_cast<int>(std::lround((y1 - y0) * i / 10.0));
    img.line(x0, y, x1, y, grid);
  }
  const auto x_of = [&](std::size_t i) {
    return n <= 1 ? (x0 + x1) / 2 : x0 + static_cast<int>(std::lround((x1 - x0) * double(i) / double(n - 1)));
  };
  const auto y_of = [&](double f1) { return y0 + static_cast<int>(std::lround((y1 - y0) * std::clamp(f1, 0.0, 1.0))); };
  const Rgb axis{0, 0, 0};
  img.line(x0, y0, x1, y0, axis);
  img.line(x0, y0, x0, y1, axis);
  for (std::size_t i = 0; i < n; ++i) img.line(x_of(i), y0, x_of(i), y0 + 4, axis);

  for (std::size_t k = 0; k < curves.size(); ++k) {
    const Rgb col = curve_colour(k);
    const auto& pts = curves[k].points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const int x = x_of(i);
      const int y = y_of(pts[i].f1);
      img.fill_rect(x - 2, y - 2, x + 2, y + 2, col);
      if (i > 0) img.line(x_of(i - 1), y_of(pts[i - 1].f1), x, y, col);
    }
  }
  return img;
}

}  // namespace deeptrack

#pragma once

#include <algorithm>
#include <array>

#include "tolo/grid.hpp"

namespace tolo {

inline constexpr double kCanvasSize = 512.0;

/// Axis-aligned box in canvas pixels, (x_min, y_min, x_max, y_max).
struct Box {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  std::array<double, 4> coords() const { return {x_min, y_min, x_max, y_max}; }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Binary mask of the cells whose centers fall inside the box, on a size x size
/// grid spanning the canvas. Cell (r, c) has center ((c + 0.5) s, (r + 0.5) s)
/// with s = canvas / size; inclusion is half-open: min <= center < max.
template <typename Scalar = double>
Matrix<Scalar> rasterize_box(const Box& b, Index size, double canvas = kCanvasSize) {
  Matrix<Scalar> m = Matrix<Scalar>::Zero(size, size);
  const double cell = canvas / static_cast<double>(size);
  for (Index r = 0; r < size; ++r) {
    const double cy = (static_cast<double>(r) + 0.5) * cell;
    if (cy < b.y_min || cy >= b.y_max) continue;
    for (Index c = 0; c < size; ++c) {
      const double cx = (static_cast<double>(c) + 0.5) * cell;
      if (cx >= b.x_min && cx < b.x_max) m(r, c) = Scalar(1);
    }
  }
  return m;
}

}  // namespace tolo

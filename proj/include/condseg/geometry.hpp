#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace condseg {

/// Image-plane point; x is the column, y the row, pixel (r, c) has its center at (c, r).
struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

using Polyline = std::vector<Point2>;

double point_segment_distance(Point2 p, Point2 a, Point2 b);

/// Recursive max-deviation simplification. Endpoints are always kept; an interior
/// point survives only if its distance to the current chord exceeds `tolerance`.
/// The result is a subsequence of the input.
Polyline douglas_peucker(const Polyline& polyline, double tolerance);

/// Closed boundary loops (first point repeated at the end) of a binary mask,
/// traced with marching squares at level 0.5 on pixel centers. Cells whose
/// diagonal corners alone are set keep the two foreground pixels apart.
std::vector<Polyline> trace_contours(std::span<const float> mask, std::size_t height, std::size_t width);

/// Even-odd scanline fill evaluated at pixel centers. Edges use the half-open
/// rule ymin <= y < ymax; a pixel is set when its center lies in [x_in, x_out).
std::vector<float> rasterize_polygons(const std::vector<Polyline>& polygons, std::size_t height, std::size_t width);

/// Boundary simplification of every component, then re-rasterization.
/// Tolerance 0 returns the mask unchanged.
std::vector<float> polygonize_mask(std::span<const float> mask, std::size_t height, std::size_t width,
                                   double tolerance);

}  // namespace condseg

#include "condseg/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <utility>

#include "condseg/error.hpp"

namespace condseg {

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

namespace {

void simplify_range(const Polyline& pts, std::size_t first, std::size_t last, double tol, std::vector<bool>& keep) {
  if (last <= first + 1) return;
  double worst = -1.0;
  std::size_t split = first;
  for (std::size_t i = first + 1; i < last; ++i) {
    const double d = point_segment_distance(pts[i], pts[first], pts[last]);
    if (d > worst) {
      worst = d;
      split = i;
    }
  }
  if (worst > tol) {
    keep[split] = true;
    simplify_range(pts, first, split, tol, keep);
    simplify_range(pts, split, last, tol, keep);
  }
}

}  // namespace

Polyline douglas_peucker(const Polyline& polyline, double tolerance) {
  if (polyline.size() < 2) throw ValidationError("douglas_peucker: need at least 2 points");
  if (!(tolerance >= 0.0)) throw ValidationError("douglas_peucker: tolerance must be >= 0");
  std::vector<bool> keep(polyline.size(), false);
  keep.front() = keep.back() = true;
  simplify_range(polyline, 0, polyline.size() - 1, tolerance, keep);
  Polyline out;
  for (std::size_t i = 0; i < polyline.size(); ++i) {
    if (keep[i]) out.push_back(polyline[i]);
  }
  return out;
}

std::vector<Polyline> trace_contours(std::span<const float> mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw ShapeError("trace_contours: mask size does not match height*width");
  const std::size_t ph = height + 2, pw = width + 2;
  std::vector<std::uint8_t> padded(ph * pw, 0);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) padded[(r + 1) * pw + c + 1] = mask[r * width + c] > 0.5f;
  }

  // Edge midpoints keyed by doubled padded coordinates (2x, 2y).
  using Key = std::pair<long, long>;
  struct Segment {
    Key a, b;
  };
  std::vector<Segment> segments;
  for (std::size_t i = 0; i + 1 < ph; ++i) {
    for (std::size_t j = 0; j + 1 < pw; ++j) {
      const int tl = padded[i * pw + j], tr = padded[i * pw + j + 1];
      const int br = padded[(i + 1) * pw + j + 1], bl = padded[(i + 1) * pw + j];
      const int code = tl * 8 + tr * 4 + br * 2 + bl;
      if (code == 0 || code == 15) continue;
      const long x2 = 2 * static_cast<long>(j), y2 = 2 * static_cast<long>(i);
      const Key top{x2 + 1, y2}, right{x2 + 2, y2 + 1}, bottom{x2 + 1, y2 + 2}, left{x2, y2 + 1};
      if (code == 10) {  // tl, br set
        segments.push_back({top, left});
        segments.push_back({right, bottom});
        continue;
      }
      if (code == 5) {  // tr, bl set
        segments.push_back({top, right});
        segments.push_back({left, bottom});
        continue;
      }
      std::array<Key, 2> ends{};
      int n = 0;
      if (tl != tr) ends[n++] = top;
      if (tr != br) ends[n++] = right;
      if (bl != br) ends[n++] = bottom;
      if (tl != bl) ends[n++] = left;
      segments.push_back({ends[0], ends[1]});
    }
  }

  std::map<Key, std::vector<std::size_t>> incident;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    incident[segments[s].a].push_back(s);
    incident[segments[s].b].push_back(s);
  }

  auto to_point = [](const Key& k) { return Point2{k.first / 2.0 - 1.0, k.second / 2.0 - 1.0}; };
  std::vector<bool> used(segments.size(), false);
  std::vector<Polyline> loops;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (used[s]) continue;
    used[s] = true;
    const Key start = segments[s].a;
    Key current = segments[s].b;
    Polyline loop{to_point(start), to_point(current)};
    while (current != start) {
      std::size_t next = segments.size();
      for (auto cand : incident[current]) {
        if (!used[cand]) {
          next = cand;
          break;
        }
      }
      if (next == segments.size()) break;  // open chain; cannot happen on a padded grid
      used[next] = true;
      current = segments[next].a == current ? segments[next].b : segments[next].a;
      loop.push_back(to_point(current));
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

std::vector<float> rasterize_polygons(const std::vector<Polyline>& polygons, std::size_t height, std::size_t width) {
  std::vector<float> out(height * width, 0.0f);
  std::vector<double> xs;
  for (std::size_t r = 0; r < height; ++r) {
    const double y = static_cast<double>(r);
    xs.clear();
    for (const auto& poly : polygons) {
      const std::size_t n = poly.size();
      if (n < 2) continue;
      // Treat the polygon as closed whether or not the last point repeats the first.
      for (std::size_t k = 0; k < n; ++k) {
        const Point2 p = poly[k], q = poly[(k + 1) % n];
        const double ylo = std::min(p.y, q.y), yhi = std::max(p.y, q.y);
        if (ylo <= y && y < yhi) xs.push_back(p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const auto lo = static_cast<long>(std::ceil(xs[k]));
      const auto hi = static_cast<long>(std::ceil(xs[k + 1]));  // exclusive
      for (long c = std::max(lo, 0L); c < std::min(hi, static_cast<long>(width)); ++c) {
        out[r * width + static_cast<std::size_t>(c)] = 1.0f;
      }
    }
  }
  return out;
}

std::vector<float> polygonize_mask(std::span<const float> mask, std::size_t height, std::size_t width,
                                   double tolerance) {
  if (mask.size() != height * width) throw ShapeError("polygonize_mask: mask size does not match height*width");
  if (tolerance <= 0.0) return {mask.begin(), mask.end()};
  auto loops = trace_contours(mask, height, width);
  for (auto& loop : loops) loop = douglas_peucker(loop, tolerance);
  return rasterize_polygons(loops, height, width);
}

}  // namespace condseg

#include "mask/maskgen.hpp"

#include <algorithm>
#include <cmath>

#include "core/common.hpp"

namespace add {

namespace {

// Twice the signed area of triangle (o, a, b); > 0 when o->a->b turns left.
double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Point> convex_hull(const std::vector<Point>& points) {
  ADD_CHECK_ARG(points.size() >= 3, "convex hull needs at least 3 points, got %zu", points.size());

  std::vector<Point> pts = points;
  std::sort(pts.begin(), pts.end(),
            [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());

  // Independent lower and upper chains; popping on cross <= 0 drops
  // collinear points, so every kept vertex is a strict corner.
  auto extend = [](std::vector<Point>& chain, const Point& p) {
    while (chain.size() >= 2 && cross(chain[chain.size() - 2], chain.back(), p) <= 0.0)
      chain.pop_back();
    chain.push_back(p);
  };
  std::vector<Point> lower, upper;
  for (auto it = pts.begin(); it != pts.end(); ++it) extend(lower, *it);
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) extend(upper, *it);
  // Each chain ends where the other starts; drop the duplicated endpoints.
  std::vector<Point> hull(lower.begin(), lower.end() - 1);
  hull.insert(hull.end(), upper.begin(), upper.end() - 1);

  ADD_CHECK(hull.size() >= 3, ErrorCode::Degenerate,
            "degenerate hull: the %zu distinct landmark points are collinear", pts.size());
  return hull;
}

Tensor rasterize(const std::vector<Point>& hull, int h, int w) {
  ADD_CHECK_ARG(hull.size() >= 3, "rasterize needs a hull with at least 3 vertices, got %zu",
                hull.size());
  ADD_CHECK_ARG(h >= 1 && w >= 1, "rasterize needs a positive image size, got %dx%d", h, w);

  Tensor mask = Tensor::zeros({1, h, w});
  const int n = static_cast<int>(hull.size());
  for (int y = 0; y < h; ++y) {
    const double ys = static_cast<double>(y);
    // Intersect the lattice row with every edge; the hull is convex, so the
    // covered span is simply [min, max] over the intersection abscissae.
    double xlo = 0.0, xhi = 0.0;
    bool any = false;
    auto cover = [&](double x) {
      if (!any) {
        xlo = xhi = x;
        any = true;
      } else {
        xlo = std::min(xlo, x);
        xhi = std::max(xhi, x);
      }
    };
    for (int i = 0; i < n; ++i) {
      const Point& a = hull[i];
      const Point& b = hull[(i + 1) % n];
      if (a.y == b.y) {
        if (a.y == ys) {
          cover(a.x);
          cover(b.x);
        }
        continue;
      }
      if (ys < std::min(a.y, b.y) || ys > std::max(a.y, b.y)) continue;
      const double t = (ys - a.y) / (b.y - a.y);
      cover(a.x + t * (b.x - a.x));
    }
    if (!any) continue;
    // Ties count as inside. The intersection abscissae carry ~1 ulp of
    // division rounding, so an exact-integer boundary hit can land a hair
    // inside the interval's open side; the guard keeps such pixels covered
    // without reaching the next lattice column.
    constexpr double kBoundaryEps = 1e-9;
    const int x0 = std::max(0, static_cast<int>(std::ceil(xlo - kBoundaryEps)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(xhi + kBoundaryEps)));
    float* row = mask.data() + static_cast<int64_t>(y) * w;
    for (int x = x0; x <= x1; ++x) row[x] = 1.0f;
  }
  return mask;
}

Tensor mask_from_landmarks(const LandmarkSet& lm) {
  ADD_CHECK_ARG(lm.h >= 1 && lm.w >= 1, "landmark set needs a positive image size, got %dx%d",
                lm.h, lm.w);
  std::vector<Point> clamped = lm.points;
  for (Point& p : clamped) {
    p.x = std::min(std::max(p.x, 0.0), static_cast<double>(lm.w - 1));
    p.y = std::min(std::max(p.y, 0.0), static_cast<double>(lm.h - 1));
  }
  return rasterize(convex_hull(clamped), lm.h, lm.w);
}

}  // namespace add

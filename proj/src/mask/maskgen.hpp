#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace add {

// A point in pixel coordinates: x is the column axis, y is the row axis.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Facial landmark points for one image of size h x w.
struct LandmarkSet {
  std::vector<Point> points;
  int h = 0;
  int w = 0;
};

// Counter-clockwise convex hull of `points` by the monotone chain, with
// collinear boundary points excluded (every returned vertex is a strict
// corner). The first vertex is the lexicographically smallest point.
// Throws InvalidArgument for fewer than 3 points and Degenerate when the
// distinct points are collinear (or there are fewer than 3 of them).
std::vector<Point> convex_hull(const std::vector<Point>& points);

// Binary mask [1,h,w] with 1 exactly at the pixels whose sample point lies
// inside or on the hull (ties count as inside). Pixel (x, y) is sampled at
// the lattice point (x, y), so the axis-aligned square hull (1,1)-(4,4)
// covers the 4x4 pixel block {1..4}x{1..4}. Rows are filled by scanline:
// the hull is intersected with each lattice row and the covered x-interval
// is filled.
Tensor rasterize(const std::vector<Point>& hull, int h, int w);

// Ground-truth potential-manipulation-region mask for one landmark set:
// points are clamped into the image, hulled, and rasterized. Propagates the
// degenerate-hull error; callers that iterate datasets should skip such
// samples with a warning.
Tensor mask_from_landmarks(const LandmarkSet& lm);

}  // namespace add

#pragma once

#include <vector>

namespace uv::grid {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

using Polygon = std::vector<Point>;

struct BBox {
    double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;

    bool intersects(const BBox& o) const {
        return xmin <= o.xmax && o.xmin <= xmax && ymin <= o.ymax && o.ymin <= ymax;
    }
    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
};

// Signed area, positive for counter-clockwise vertex order.
double signedArea(const Polygon& poly);

inline double polygonArea(const Polygon& poly) {
    const double a = signedArea(poly);
    return a < 0 ? -a : a;
}

BBox boundingBox(const Polygon& poly);

// Inclusive point-in-polygon for a convex CCW polygon; `tol` widens the
// boundary so points sitting on an edge count as inside.
bool pointInConvexPolygon(const Point& p, const Polygon& poly, double tol = 1e-9);

// Sutherland-Hodgman: clip `subject` against a convex CCW `window`.
// The subject may be any simple polygon; the result can be empty.
Polygon clipToConvex(const Polygon& subject, const Polygon& window);

// Reverses the vertex order if the polygon is clockwise.
void ensureCounterClockwise(Polygon& poly);

}  // namespace uv::grid

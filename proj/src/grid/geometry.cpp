#include "urbanverse/grid/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace uv::grid {

double signedArea(const Polygon& poly) {
    const size_t n = poly.size();
    if (n < 3) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Point& a = poly[i];
        const Point& b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    return 0.5 * acc;
}

BBox boundingBox(const Polygon& poly) {
    BBox b{poly[0].x, poly[0].y, poly[0].x, poly[0].y};
    for (const auto& p : poly) {
        b.xmin = std::min(b.xmin, p.x);
        b.ymin = std::min(b.ymin, p.y);
        b.xmax = std::max(b.xmax, p.x);
        b.ymax = std::max(b.ymax, p.y);
    }
    return b;
}

namespace {

inline double cross(const Point& a, const Point& b, const Point& p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

inline Point intersect(const Point& a, const Point& b, const Point& p, const Point& q) {
    const double a1 = b.y - a.y, b1 = a.x - b.x, c1 = a1 * a.x + b1 * a.y;
    const double a2 = q.y - p.y, b2 = p.x - q.x, c2 = a2 * p.x + b2 * p.y;
    const double det = a1 * b2 - a2 * b1;
    return {(b2 * c1 - b1 * c2) / det, (a1 * c2 - a2 * c1) / det};
}

}  // namespace

bool pointInConvexPolygon(const Point& p, const Polygon& poly, double tol) {
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i)
        if (cross(poly[i], poly[(i + 1) % n], p) < -tol) return false;
    return true;
}

Polygon clipToConvex(const Polygon& subject, const Polygon& window) {
    Polygon output = subject;
    const size_t wn = window.size();
    for (size_t i = 0; i < wn && !output.empty(); ++i) {
        const Point& ca = window[i];
        const Point& cb = window[(i + 1) % wn];
        Polygon input;
        input.swap(output);
        const size_t n = input.size();
        for (size_t j = 0; j < n; ++j) {
            const Point& cur = input[j];
            const Point& prev = input[(j + n - 1) % n];
            const bool curIn = cross(ca, cb, cur) >= 0.0;
            const bool prevIn = cross(ca, cb, prev) >= 0.0;
            if (curIn) {
                if (!prevIn) output.push_back(intersect(prev, cur, ca, cb));
                output.push_back(cur);
            } else if (prevIn) {
                output.push_back(intersect(prev, cur, ca, cb));
            }
        }
    }
    return output;
}

void ensureCounterClockwise(Polygon& poly) {
    if (signedArea(poly) < 0.0) std::reverse(poly.begin(), poly.end());
}

}  // namespace uv::grid

#include "urbanverse/grid/hexgrid.hpp"

#include <cmath>
#include <string>

#include "urbanverse/common.hpp"

namespace uv::grid {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;

// Axial neighbor offsets, pointy-top orientation.
constexpr int kOffsets[6][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, -1}, {-1, 1}};

Point axialCenter(const Point& origin, double edge, int q, int r) {
    return {origin.x + kSqrt3 * edge * (q + 0.5 * r), origin.y + 1.5 * edge * r};
}

Polygon hexPolygon(const Point& center, double edge) {
    Polygon poly;
    poly.reserve(6);
    for (int k = 0; k < 6; ++k) {
        const double ang = (60.0 * k + 30.0) * M_PI / 180.0;
        poly.push_back({center.x + edge * std::cos(ang), center.y + edge * std::sin(ang)});
    }
    return poly;
}

// Nearest hexagon by cube rounding of fractional axial coordinates.
void axialRound(double qf, double rf, int& q, int& r) {
    const double xf = qf, zf = rf, yf = -xf - zf;
    double rx = std::round(xf), ry = std::round(yf), rz = std::round(zf);
    const double dx = std::abs(rx - xf), dy = std::abs(ry - yf), dz = std::abs(rz - zf);
    if (dx > dy && dx > dz)
        rx = -ry - rz;
    else if (dy > dz)
        ry = -rx - rz;
    else
        rz = -rx - ry;
    q = static_cast<int>(rx);
    r = static_cast<int>(rz);
}

}  // namespace

const Cell& CellSet::byId(int64_t id) const {
    if (id < 0 || id >= size())
        throw DataError("unknown cell id " + std::to_string(id));
    return cells[static_cast<size_t>(id)];
}

int64_t CellSet::idAt(int q, int r) const {
    auto it = axialIndex.find(axialKey(q, r));
    return it == axialIndex.end() ? -1 : it->second;
}

int64_t CellSet::locate(const Point& p) const {
    const double dx = p.x - origin.x;
    const double dy = p.y - origin.y;
    const double qf = (kSqrt3 / 3.0 * dx - dy / 3.0) / edge;
    const double rf = (2.0 / 3.0 * dy) / edge;
    int q = 0, r = 0;
    axialRound(qf, rf, q, r);

    int64_t best = -1;
    auto consider = [&](int cq, int cr) {
        const int64_t id = idAt(cq, cr);
        if (id < 0) return;
        const Cell& c = cells[static_cast<size_t>(id)];
        if (!pointInConvexPolygon(p, c.polygon, 1e-7)) return;
        if (best < 0 || id < best) best = id;
    };
    consider(q, r);
    for (const auto& off : kOffsets) consider(q + off[0], r + off[1]);
    return best;
}

CellSet buildHexGrid(const BBox& bbox, double edgeMeters) {
    if (edgeMeters <= 0.0)
        throw ConfigError("hex edge must be positive, got " + std::to_string(edgeMeters));
    if (!(bbox.xmax > bbox.xmin) || !(bbox.ymax > bbox.ymin))
        throw ConfigError("degenerate bbox");

    CellSet set;
    set.edge = edgeMeters;
    set.origin = {0.5 * (bbox.xmin + bbox.xmax), 0.5 * (bbox.ymin + bbox.ymax)};

    const double rowPitch = 1.5 * edgeMeters;
    const double colPitch = kSqrt3 * edgeMeters;
    const double tol = 1e-9 * std::max(1.0, edgeMeters);

    const int rLo = static_cast<int>(std::ceil((bbox.ymin - set.origin.y) / rowPitch - tol));
    const int rHi = static_cast<int>(std::floor((bbox.ymax - set.origin.y) / rowPitch + tol));
    for (int r = rLo; r <= rHi; ++r) {
        const double qOff = 0.5 * r;
        const int qLo = static_cast<int>(std::ceil((bbox.xmin - set.origin.x) / colPitch - qOff - tol));
        const int qHi = static_cast<int>(std::floor((bbox.xmax - set.origin.x) / colPitch - qOff + tol));
        for (int q = qLo; q <= qHi; ++q) {
            Cell c;
            c.id = set.size();
            c.aq = q;
            c.ar = r;
            c.center = axialCenter(set.origin, edgeMeters, q, r);
            c.polygon = hexPolygon(c.center, edgeMeters);
            set.axialIndex.emplace(CellSet::axialKey(q, r), c.id);
            set.cells.push_back(std::move(c));
        }
    }

    for (auto& c : set.cells)
        for (const auto& off : kOffsets) {
            const int64_t nb = set.idAt(c.aq + off[0], c.ar + off[1]);
            if (nb >= 0) c.neighbors.push_back(nb);
        }
    return set;
}

int64_t assignPois(CellSet& cells, const std::vector<Poi>& pois) {
    int64_t dropped = 0;
    for (const auto& poi : pois) {
        if (poi.category < 0 || poi.category >= kPoiCategories)
            throw DataError("poi category " + std::to_string(poi.category) + " outside 0.." +
                            std::to_string(kPoiCategories - 1));
        const int64_t id = cells.locate({poi.x, poi.y});
        if (id < 0) {
            ++dropped;
            continue;
        }
        cells.cells[static_cast<size_t>(id)].poi[static_cast<size_t>(poi.category)] += 1;
    }
    return dropped;
}

OverlapWeights regionCellOverlap(const Region& region, const CellSet& cells) {
    if (region.parts.empty() || region.area() <= 0.0)
        throw DataError("region " + std::to_string(region.id) + " has no positive area");

    BBox rb = boundingBox(region.parts[0]);
    for (size_t i = 1; i < region.parts.size(); ++i) {
        const BBox pb = boundingBox(region.parts[i]);
        rb.xmin = std::min(rb.xmin, pb.xmin);
        rb.ymin = std::min(rb.ymin, pb.ymin);
        rb.xmax = std::max(rb.xmax, pb.xmax);
        rb.ymax = std::max(rb.ymax, pb.ymax);
    }

    OverlapWeights out;
    out.regionId = region.id;
    const double halfW = 0.5 * kSqrt3 * cells.edge;
    for (const auto& c : cells.cells) {
        const BBox cb{c.center.x - halfW, c.center.y - cells.edge,
                      c.center.x + halfW, c.center.y + cells.edge};
        if (!rb.intersects(cb)) continue;
        const double cellArea = polygonArea(c.polygon);
        double inter = 0.0;
        for (const auto& part : region.parts)
            inter += polygonArea(clipToConvex(part, c.polygon));
        double omega = inter / cellArea;
        if (omega > 1.0) omega = 1.0;
        if (omega < 1e-9) continue;
        out.cells.emplace_back(c.id, omega);
    }
    return out;
}

}  // namespace uv::grid

#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "urbanverse/grid/geometry.hpp"

namespace uv::grid {

inline constexpr int kPoiCategories = 15;

struct Cell {
    int64_t id = -1;
    Point center;
    Polygon polygon;  // 6 vertices, counter-clockwise
    std::array<int64_t, kPoiCategories> poi{};
    std::vector<int64_t> neighbors;
    int aq = 0;  // axial column
    int ar = 0;  // axial row
};

struct Region {
    int64_t id = -1;
    std::vector<Polygon> parts;  // usually one; multi-part regions allowed

    double area() const {
        double a = 0.0;
        for (const auto& p : parts) a += polygonArea(p);
        return a;
    }
};

struct OverlapWeights {
    int64_t regionId = -1;
    std::vector<std::pair<int64_t, double>> cells;  // (cell id, omega), omega in (0,1]
};

struct Poi {
    double x = 0.0;
    double y = 0.0;
    int category = 0;
};

// Pointy-top hexagonal tessellation. Cell ids are the row-major axial
// index (rows by axial r, then q), so a rebuild over the same bbox/edge
// reproduces identical ids.
class CellSet {
public:
    double edge = 0.0;
    Point origin;  // tessellation anchor, the bbox center
    std::vector<Cell> cells;

    const Cell& byId(int64_t id) const;
    int64_t size() const { return static_cast<int64_t>(cells.size()); }

    // Cell containing the point (inclusive boundary, lowest id on ties),
    // or -1 when the point falls outside every cell.
    int64_t locate(const Point& p) const;

    int64_t idAt(int q, int r) const;

    static uint64_t axialKey(int q, int r) {
        return (static_cast<uint64_t>(static_cast<uint32_t>(q)) << 32) |
               static_cast<uint32_t>(r);
    }

    std::unordered_map<uint64_t, int64_t> axialIndex;
};

// Tessellates the bbox with hexagons of the given edge length; a cell is
// kept when its center lies inside the bbox. The bbox center always maps
// to a cell, so a bbox smaller than one hexagon yields exactly one.
CellSet buildHexGrid(const BBox& bbox, double edgeMeters);

// Bins each POI into the cell containing it. Returns the number of POIs
// that fell outside the tessellation (reported, never silently lost).
int64_t assignPois(CellSet& cells, const std::vector<Poi>& pois);

// omega = area(region ∩ cell) / area(cell) for every cell the region
// touches; entries below 1e-9 are dropped.
OverlapWeights regionCellOverlap(const Region& region, const CellSet& cells);

}  // namespace uv::grid

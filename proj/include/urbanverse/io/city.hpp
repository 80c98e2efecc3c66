#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "urbanverse/grid/hexgrid.hpp"

namespace uv::io {

struct TargetRow {
    int64_t regionId = 0;
    int task = 0;
    double value = 0.0;
};

// A city directory on disk holds grid.json (edge length and bounding box),
// cells.csv (per-cell POI counts), regions.json, and optionally targets.csv.
// The hexagonal lattice is rebuilt from grid.json on load and the CSV is
// checked against it, so cells.csv stays human-readable without becoming the
// source of truth for geometry.
struct CityData {
    grid::BBox bbox;
    double edge = 0.0;
    grid::CellSet cells;
    std::vector<grid::Region> regions;
    std::vector<TargetRow> targets;
    int numTasks = 0;  // max task id + 1 over targets
};

CityData loadCity(const std::string& dir);
void saveCity(const std::string& dir, const CityData& city);

// Parses a regions.json file on its own (the grid subcommand attaches regions
// supplied separately from the POI dump).
std::vector<grid::Region> loadRegions(const std::string& path);

// Raw POI ingestion: pois.csv with header "x,y,category". The category column
// holds either an index in [0,15) or a name resolved through a JSON mapping
// file {"name": index, ...}; names without a mapping are an error.
std::vector<grid::Poi> loadPois(const std::string& path, const std::string& mappingPath = "");

// Bins raw POIs into a fresh lattice over the bounding box. Regions and
// targets start empty.
CityData buildCityFromPois(const grid::BBox& bbox, double edge, const std::vector<grid::Poi>& pois);

}  // namespace uv::io

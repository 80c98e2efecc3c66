#include "urbanverse/io/city.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "urbanverse/common.hpp"
#include "urbanverse/io/csv.hpp"

namespace fs = std::filesystem;

namespace uv::io {

namespace {

nlohmann::json readJsonFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + " is not valid JSON: " + e.what());
    }
}

void writeJsonFile(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out.flush()) throw DataError("failed writing " + path);
}

grid::Polygon parsePolygon(const nlohmann::json& arr, const std::string& where) {
    if (!arr.is_array() || arr.size() < 3) {
        throw DataError(where + ": polygon needs at least three [x,y] pairs");
    }
    grid::Polygon poly;
    for (const auto& pt : arr) {
        if (!pt.is_array() || pt.size() != 2) {
            throw DataError(where + ": polygon vertices must be [x,y] pairs");
        }
        poly.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    return poly;
}

}  // namespace

std::vector<grid::Region> loadRegions(const std::string& path) {
    auto j = readJsonFile(path);
    if (!j.is_array()) throw DataError(path + ": top level must be an array of regions");
    std::vector<grid::Region> regions;
    std::set<int64_t> seen;
    for (size_t i = 0; i < j.size(); ++i) {
        const auto& r = j[i];
        std::string where = path + " region #" + std::to_string(i);
        if (!r.contains("region_id")) throw DataError(where + ": missing region_id");
        grid::Region region;
        region.id = r["region_id"].get<int64_t>();
        if (!seen.insert(region.id).second) {
            throw DataError(where + ": duplicate region_id " + std::to_string(region.id));
        }
        if (r.contains("polygon")) {
            region.parts.push_back(parsePolygon(r["polygon"], where));
        } else if (r.contains("polygons")) {
            for (const auto& part : r["polygons"]) region.parts.push_back(parsePolygon(part, where));
        } else {
            throw DataError(where + ": needs polygon or polygons");
        }
        regions.push_back(std::move(region));
    }
    return regions;
}

CityData loadCity(const std::string& dir) {
    CityData city;

    auto gj = readJsonFile(dir + "/grid.json");
    if (!gj.contains("edge_m") || !gj.contains("bbox")) {
        throw DataError(dir + "/grid.json needs edge_m and bbox");
    }
    city.edge = gj["edge_m"].get<double>();
    const auto& bb = gj["bbox"];
    city.bbox = {bb["xmin"].get<double>(), bb["ymin"].get<double>(), bb["xmax"].get<double>(),
                 bb["ymax"].get<double>()};
    city.cells = grid::buildHexGrid(city.bbox, city.edge);

    std::string cellsPath = dir + "/cells.csv";
    auto table = readCsv(cellsPath);
    std::vector<std::string> wantHeader = {"cell_id", "cx", "cy"};
    for (int c = 0; c < grid::kPoiCategories; ++c) wantHeader.push_back("poi_" + std::to_string(c));
    if (table.header != wantHeader) throw DataError(cellsPath + " has an unexpected header");
    if (table.rows.size() != city.cells.size()) {
        throw DataError(cellsPath + " lists " + std::to_string(table.rows.size()) +
                        " cells but the lattice has " + std::to_string(city.cells.size()));
    }
    double tol = 1e-6 * std::max(1.0, city.edge);
    for (size_t i = 0; i < table.rows.size(); ++i) {
        size_t line = i + 2;
        const auto& row = table.rows[i];
        int64_t id = parseInt(row[0], cellsPath, line, "cell_id");
        if (id != static_cast<int64_t>(i)) {
            throw DataError(cellsPath + " line " + std::to_string(line) +
                            ": cell ids must be dense and ascending, got " + std::to_string(id));
        }
        auto& cell = city.cells.cells[i];
        double cx = parseDouble(row[1], cellsPath, line, "cx");
        double cy = parseDouble(row[2], cellsPath, line, "cy");
        if (std::abs(cx - cell.center.x) > tol || std::abs(cy - cell.center.y) > tol) {
            throw DataError(cellsPath + " line " + std::to_string(line) +
                            ": center does not lie on the lattice implied by grid.json");
        }
        for (int c = 0; c < grid::kPoiCategories; ++c) {
            int64_t count = parseInt(row[static_cast<size_t>(3 + c)], cellsPath, line,
                                     "poi_" + std::to_string(c));
            if (count < 0) {
                throw DataError(cellsPath + " line " + std::to_string(line) +
                                ": negative count in poi_" + std::to_string(c));
            }
            cell.poi[static_cast<size_t>(c)] = count;
        }
    }

    city.regions = loadRegions(dir + "/regions.json");

    std::string targetsPath = dir + "/targets.csv";
    if (fs::exists(targetsPath)) {
        auto tt = readCsv(targetsPath);
        if (tt.header != std::vector<std::string>{"region_id", "task_id", "value"}) {
            throw DataError(targetsPath + " has an unexpected header");
        }
        std::set<int64_t> regionIds;
        for (const auto& r : city.regions) regionIds.insert(r.id);
        std::set<std::pair<int64_t, int64_t>> seen;
        for (size_t i = 0; i < tt.rows.size(); ++i) {
            size_t line = i + 2;
            TargetRow row;
            row.regionId = parseInt(tt.rows[i][0], targetsPath, line, "region_id");
            int64_t task = parseInt(tt.rows[i][1], targetsPath, line, "task_id");
            row.value = parseDouble(tt.rows[i][2], targetsPath, line, "value");
            if (!regionIds.count(row.regionId)) {
                throw DataError(targetsPath + " line " + std::to_string(line) +
                                ": unknown region " + std::to_string(row.regionId));
            }
            if (task < 0) {
                throw DataError(targetsPath + " line " + std::to_string(line) + ": negative task id");
            }
            if (!seen.insert({row.regionId, task}).second) {
                throw DataError(targetsPath + " line " + std::to_string(line) +
                                ": duplicate (region, task) pair");
            }
            row.task = static_cast<int>(task);
            city.numTasks = std::max(city.numTasks, row.task + 1);
            city.targets.push_back(row);
        }
    }
    return city;
}

void saveCity(const std::string& dir, const CityData& city) {
    fs::create_directories(dir);

    nlohmann::json gj;
    gj["edge_m"] = city.edge;
    gj["bbox"] = {{"xmin", city.bbox.xmin},
                  {"ymin", city.bbox.ymin},
                  {"xmax", city.bbox.xmax},
                  {"ymax", city.bbox.ymax}};
    writeJsonFile(dir + "/grid.json", gj);

    std::vector<std::string> header = {"cell_id", "cx", "cy"};
    for (int c = 0; c < grid::kPoiCategories; ++c) header.push_back("poi_" + std::to_string(c));
    std::vector<std::vector<std::string>> rows;
    for (const auto& cell : city.cells.cells) {
        std::vector<std::string> row = {std::to_string(cell.id), formatDouble(cell.center.x),
                                        formatDouble(cell.center.y)};
        for (int c = 0; c < grid::kPoiCategories; ++c) {
            row.push_back(std::to_string(cell.poi[static_cast<size_t>(c)]));
        }
        rows.push_back(std::move(row));
    }
    writeCsv(dir + "/cells.csv", header, rows);

    nlohmann::json rj = nlohmann::json::array();
    for (const auto& region : city.regions) {
        nlohmann::json r;
        r["region_id"] = region.id;
        auto dumpPoly = [](const grid::Polygon& poly) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& p : poly) arr.push_back({p.x, p.y});
            return arr;
        };
        if (region.parts.size() == 1) {
            r["polygon"] = dumpPoly(region.parts[0]);
        } else {
            nlohmann::json parts = nlohmann::json::array();
            for (const auto& part : region.parts) parts.push_back(dumpPoly(part));
            r["polygons"] = parts;
        }
        rj.push_back(std::move(r));
    }
    writeJsonFile(dir + "/regions.json", rj);

    std::vector<std::vector<std::string>> trows;
    for (const auto& t : city.targets) {
        trows.push_back({std::to_string(t.regionId), std::to_string(t.task), formatDouble(t.value)});
    }
    writeCsv(dir + "/targets.csv", {"region_id", "task_id", "value"}, trows);
}

std::vector<grid::Poi> loadPois(const std::string& path, const std::string& mappingPath) {
    nlohmann::json mapping;
    if (!mappingPath.empty()) {
        mapping = readJsonFile(mappingPath);
        if (!mapping.is_object()) throw DataError(mappingPath + ": mapping must be a JSON object");
    }
    auto table = readCsv(path);
    if (table.header != std::vector<std::string>{"x", "y", "category"}) {
        throw DataError(path + " has an unexpected header");
    }
    std::vector<grid::Poi> pois;
    for (size_t i = 0; i < table.rows.size(); ++i) {
        size_t line = i + 2;
        grid::Poi p;
        p.x = parseDouble(table.rows[i][0], path, line, "x");
        p.y = parseDouble(table.rows[i][1], path, line, "y");
        const std::string& cat = table.rows[i][2];
        bool numeric = !cat.empty() && cat.find_first_not_of("0123456789") == std::string::npos;
        if (numeric) {
            p.category = static_cast<int>(parseInt(cat, path, line, "category"));
        } else if (mapping.contains(cat)) {
            p.category = mapping[cat].get<int>();
        } else {
            throw DataError(path + " line " + std::to_string(line) + ": category '" + cat +
                            "' has no mapping");
        }
        if (p.category < 0 || p.category >= grid::kPoiCategories) {
            throw DataError(path + " line " + std::to_string(line) + ": category index " +
                            std::to_string(p.category) + " outside [0, " +
                            std::to_string(grid::kPoiCategories) + ")");
        }
        pois.push_back(p);
    }
    return pois;
}

CityData buildCityFromPois(const grid::BBox& bbox, double edge, const std::vector<grid::Poi>& pois) {
    CityData city;
    city.bbox = bbox;
    city.edge = edge;
    city.cells = grid::buildHexGrid(bbox, edge);
    grid::assignPois(city.cells, pois);
    return city;
}

}  // namespace uv::io

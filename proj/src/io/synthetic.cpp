#include "urbanverse/io/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "urbanverse/common.hpp"
#include "urbanverse/numerics/rng.hpp"

namespace uv::io {

namespace {

struct TaskDef {
    std::string kind;
    std::vector<double> coeff;
    double sigma = 0.0;
};

double evalTask(const TaskDef& task, const std::vector<double>& psi) {
    size_t c = psi.size();
    if (task.kind == "linear") {
        double acc = 0.0;
        for (size_t i = 0; i < c; ++i) acc += task.coeff[i] * psi[i];
        return acc;
    }
    if (task.kind == "loglinear") {
        double acc = 0.0;
        for (size_t i = 0; i < c; ++i) acc += task.coeff[i] * psi[i];
        return std::log1p(acc);
    }
    if (task.kind == "interaction") {
        double acc = 0.0;
        for (size_t i = 0; i < c; ++i) acc += task.coeff[i] * psi[i] * psi[(i + 1) % c];
        return acc;
    }
    throw DataError("unknown task kind '" + task.kind + "'");
}

TaskDef makeTaskDef(int task, int classes) {
    TaskDef def;
    switch (task % 3) {
        case 0:
            def.kind = "linear";
            for (int c = 0; c < classes; ++c) def.coeff.push_back(1.0 + c + task / 3);
            break;
        case 1:
            def.kind = "loglinear";
            for (int c = 0; c < classes; ++c) def.coeff.push_back((3 * c) % 5 + 1.0 + task / 3);
            break;
        default:
            def.kind = "interaction";
            for (int c = 0; c < classes; ++c) def.coeff.push_back(2.0 + (2 * c) % 3 + task / 3);
            break;
    }
    return def;
}

}  // namespace

SyntheticCity generateSynthetic(const SyntheticSpec& spec) {
    if (spec.width <= 0 || spec.height <= 0 || spec.edge <= 0) {
        throw ConfigError("synthetic city needs positive extent and edge length");
    }
    if (spec.latentClasses < 2) throw ConfigError("synthetic city needs at least two latent classes");
    if (spec.regionsX < 1 || spec.regionsY < 1) throw ConfigError("region tiling must be at least 1x1");
    if (spec.numTasks < 1) throw ConfigError("synthetic city needs at least one task");
    if (spec.sigmaScale < 0) throw ConfigError("noise scale cannot be negative");

    num::Rng root(spec.seed);
    SyntheticCity out;
    CityData& city = out.city;
    city.bbox = {-spec.width / 2, -spec.height / 2, spec.width / 2, spec.height / 2};
    city.edge = spec.edge;
    city.cells = grid::buildHexGrid(city.bbox, city.edge);
    size_t n = city.cells.size();

    // Smoothed Gaussian field, then equal-count binning into classes. The
    // smoothing passes average each cell with its lattice neighbors, which
    // turns white noise into contiguous districts.
    std::vector<double> field(n);
    {
        auto rng = root.derive("field");
        for (auto& v : field) v = rng.normal();
    }
    for (int it = 0; it < spec.smoothIters; ++it) {
        std::vector<double> next(n);
        for (size_t i = 0; i < n; ++i) {
            const auto& nb = city.cells.cells[i].neighbors;
            if (nb.empty()) {
                next[i] = field[i];
                continue;
            }
            double acc = 0.0;
            for (int64_t j : nb) acc += field[static_cast<size_t>(j)];
            next[i] = 0.5 * field[i] + 0.5 * acc / static_cast<double>(nb.size());
        }
        field = std::move(next);
    }
    std::vector<size_t> byValue(n);
    std::iota(byValue.begin(), byValue.end(), size_t{0});
    std::sort(byValue.begin(), byValue.end(), [&](size_t a, size_t b) {
        if (field[a] != field[b]) return field[a] < field[b];
        return a < b;
    });
    std::vector<int> cellClass(n);
    for (size_t rank = 0; rank < n; ++rank) {
        int cls = static_cast<int>(rank * static_cast<size_t>(spec.latentClasses) / n);
        cellClass[byValue[rank]] = std::min(cls, spec.latentClasses - 1);
    }

    // Each class emits POIs around its own part of the category spectrum.
    std::vector<std::vector<double>> rates(static_cast<size_t>(spec.latentClasses),
                                           std::vector<double>(grid::kPoiCategories));
    {
        auto rng = root.derive("rates");
        for (int c = 0; c < spec.latentClasses; ++c) {
            double center = (c + 0.5) * grid::kPoiCategories / static_cast<double>(spec.latentClasses);
            for (int j = 0; j < grid::kPoiCategories; ++j) {
                // Narrow, high-rate bumps keep the class signatures apart even
                // after Poisson thinning, so a region's category histogram pins
                // down its class mixture well enough for the quadratic task.
                double bump = 36.0 * std::exp(-(j - center) * (j - center) / 2.0);
                rates[static_cast<size_t>(c)][static_cast<size_t>(j)] =
                    (1.0 + bump) * (0.9 + 0.2 * rng.uniform());
            }
        }
    }
    for (size_t i = 0; i < n; ++i) {
        auto rng = root.derive("poi", static_cast<uint64_t>(i));
        for (int j = 0; j < grid::kPoiCategories; ++j) {
            city.cells.cells[i].poi[static_cast<size_t>(j)] =
                rng.poisson(rates[static_cast<size_t>(cellClass[i])][static_cast<size_t>(j)]);
        }
    }

    // Rectangular region tiling, row-major ids.
    double rw = spec.width / spec.regionsX;
    double rh = spec.height / spec.regionsY;
    for (int ry = 0; ry < spec.regionsY; ++ry) {
        for (int rx = 0; rx < spec.regionsX; ++rx) {
            grid::Region region;
            region.id = static_cast<int64_t>(ry) * spec.regionsX + rx;
            double x0 = city.bbox.xmin + rx * rw, x1 = x0 + rw;
            double y0 = city.bbox.ymin + ry * rh, y1 = y0 + rh;
            region.parts.push_back({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
            city.regions.push_back(std::move(region));
        }
    }

    // Latent class composition per region via the overlap weights.
    size_t numRegions = city.regions.size();
    std::vector<double> mass(numRegions);
    std::vector<std::vector<double>> phi(numRegions,
                                         std::vector<double>(static_cast<size_t>(spec.latentClasses)));
    for (size_t r = 0; r < numRegions; ++r) {
        auto w = grid::regionCellOverlap(city.regions[r], city.cells);
        for (const auto& [cellId, omega] : w.cells) {
            phi[r][static_cast<size_t>(cellClass[static_cast<size_t>(cellId)])] += omega;
            mass[r] += omega;
        }
        if (mass[r] <= 0.0) {
            throw DataError("region " + std::to_string(city.regions[r].id) +
                            " does not overlap the lattice");
        }
    }

    std::vector<TaskDef> tasks;
    for (int u = 0; u < spec.numTasks; ++u) tasks.push_back(makeTaskDef(u, spec.latentClasses));

    std::vector<std::vector<double>> base(numRegions, std::vector<double>(static_cast<size_t>(spec.numTasks)));
    std::vector<std::vector<double>> noise(numRegions, std::vector<double>(static_cast<size_t>(spec.numTasks)));
    for (int u = 0; u < spec.numTasks; ++u) {
        std::vector<double> psi(static_cast<size_t>(spec.latentClasses));
        for (size_t r = 0; r < numRegions; ++r) {
            for (int c = 0; c < spec.latentClasses; ++c) psi[static_cast<size_t>(c)] = phi[r][static_cast<size_t>(c)] / mass[r];
            base[r][static_cast<size_t>(u)] = evalTask(tasks[static_cast<size_t>(u)], psi);
        }
        double mean = 0.0, var = 0.0;
        for (size_t r = 0; r < numRegions; ++r) mean += base[r][static_cast<size_t>(u)];
        mean /= static_cast<double>(numRegions);
        for (size_t r = 0; r < numRegions; ++r) {
            double d = base[r][static_cast<size_t>(u)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(numRegions);
        tasks[static_cast<size_t>(u)].sigma = spec.sigmaScale * std::sqrt(var);

        auto rng = root.derive("noise", static_cast<uint64_t>(u));
        for (size_t r = 0; r < numRegions; ++r) {
            noise[r][static_cast<size_t>(u)] =
                spec.sigmaScale == 0.0 ? 0.0 : tasks[static_cast<size_t>(u)].sigma * rng.normal();
        }
    }

    for (size_t r = 0; r < numRegions; ++r) {
        for (int u = 0; u < spec.numTasks; ++u) {
            city.targets.push_back({city.regions[r].id, u,
                                    base[r][static_cast<size_t>(u)] + noise[r][static_cast<size_t>(u)]});
        }
    }
    city.numTasks = spec.numTasks;

    nlohmann::json m;
    m["seed"] = spec.seed;
    m["edge_m"] = spec.edge;
    m["bbox"] = {{"xmin", city.bbox.xmin}, {"ymin", city.bbox.ymin},
                 {"xmax", city.bbox.xmax}, {"ymax", city.bbox.ymax}};
    m["latent_classes"] = spec.latentClasses;
    m["smooth_iters"] = spec.smoothIters;
    m["regions_x"] = spec.regionsX;
    m["regions_y"] = spec.regionsY;
    m["num_tasks"] = spec.numTasks;
    m["sigma_scale"] = spec.sigmaScale;
    m["cell_classes"] = cellClass;
    m["poi_rates"] = rates;
    m["regions"] = nlohmann::json::array();
    for (size_t r = 0; r < numRegions; ++r) {
        m["regions"].push_back({{"region_id", city.regions[r].id}, {"mass", mass[r]}, {"phi", phi[r]}});
    }
    m["tasks"] = nlohmann::json::array();
    for (int u = 0; u < spec.numTasks; ++u) {
        const auto& t = tasks[static_cast<size_t>(u)];
        m["tasks"].push_back({{"task_id", u}, {"kind", t.kind}, {"coeff", t.coeff}, {"sigma", t.sigma}});
    }
    m["noise"] = noise;
    out.manifestJson = m.dump(2) + "\n";
    return out;
}

void generateSyntheticTo(const std::string& dir, const SyntheticSpec& spec) {
    auto synth = generateSynthetic(spec);
    saveCity(dir, synth.city);
    std::ofstream out(dir + "/truth-manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + dir + "/truth-manifest.json");
    out << synth.manifestJson;
    if (!out.flush()) throw DataError("failed writing " + dir + "/truth-manifest.json");
}

std::vector<TargetRow> recomputeTargetsFromManifest(const std::string& manifestPath) {
    std::ifstream in(manifestPath);
    if (!in) throw DataError("cannot open " + manifestPath);
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifestPath + " is not valid JSON: " + e.what());
    }

    std::vector<TaskDef> tasks;
    for (const auto& t : m["tasks"]) {
        TaskDef def;
        def.kind = t["kind"].get<std::string>();
        def.coeff = t["coeff"].get<std::vector<double>>();
        def.sigma = t["sigma"].get<double>();
        tasks.push_back(std::move(def));
    }
    auto noise = m["noise"].get<std::vector<std::vector<double>>>();

    std::vector<TargetRow> rows;
    size_t r = 0;
    for (const auto& region : m["regions"]) {
        int64_t id = region["region_id"].get<int64_t>();
        double mass = region["mass"].get<double>();
        auto phi = region["phi"].get<std::vector<double>>();
        std::vector<double> psi(phi.size());
        for (size_t c = 0; c < phi.size(); ++c) psi[c] = phi[c] / mass;
        for (size_t u = 0; u < tasks.size(); ++u) {
            rows.push_back({id, static_cast<int>(u), evalTask(tasks[u], psi) + noise[r][u]});
        }
        ++r;
    }
    return rows;
}

}  // namespace uv::io

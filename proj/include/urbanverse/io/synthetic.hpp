#pragma once

#include <cstdint>
#include <string>

#include "urbanverse/io/city.hpp"

namespace uv::io {

// Desk-scale generated city with known ground truth. Cells get a latent class
// from a smoothed seeded random field; each class emits POIs with its own
// Poisson rate profile; targets are fixed functions of each region's latent
// class composition plus seeded Gaussian noise. Everything needed to recompute
// the targets exactly is written to truth-manifest.json.
struct SyntheticSpec {
    double width = 6000.0;   // bbox extent in meters, centered on the origin
    double height = 6000.0;
    double edge = 150.0;
    int latentClasses = 4;
    int smoothIters = 10;
    int regionsX = 20;
    int regionsY = 20;
    int numTasks = 3;
    double sigmaScale = 0.05;  // noise sd as a fraction of each task's target sd
    uint64_t seed = 0;
};

struct SyntheticCity {
    CityData city;
    std::string manifestJson;  // contents written to truth-manifest.json
};

SyntheticCity generateSynthetic(const SyntheticSpec& spec);

// Generates and writes grid.json, cells.csv, regions.json, targets.csv, and
// truth-manifest.json into dir.
void generateSyntheticTo(const std::string& dir, const SyntheticSpec& spec);

// Oracle hook: recomputes every target from a truth manifest's recorded
// compositions, task definitions, and noise draws.
std::vector<TargetRow> recomputeTargetsFromManifest(const std::string& manifestPath);

}  // namespace uv::io

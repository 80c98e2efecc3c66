#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "urbanverse/grid/geometry.hpp"
#include "urbanverse/io/synthetic.hpp"
#include "urbanverse/pipeline/config.hpp"

namespace uv::pipe {

// Stages print progress through this; the CLI wires it to stderr, tests
// usually leave it empty.
using Logger = std::function<void(const std::string&)>;

// Region embeddings travel between stages as embeddings.csv with header
// region_id,h_0,...,h_{dim-1}.
struct RegionEmbeddingTable {
    int64_t dim = 0;
    std::vector<int64_t> ids;
    std::vector<float> data;  // ids.size() x dim, row-major
    std::unordered_map<int64_t, int64_t> rowOf;

    std::vector<float> row(int64_t id) const;
};

RegionEmbeddingTable readEmbeddingsCsv(const std::string& path);
void writeEmbeddingsCsv(const std::string& path, const RegionEmbeddingTable& table);

// Deterministic region split: ids sorted, shuffled by seed, last holdout
// fraction (rounded) becomes the test set. Both halves come back sorted.
struct Split {
    std::vector<int64_t> train;
    std::vector<int64_t> test;
};

Split splitRegions(std::vector<int64_t> ids, double holdout, uint64_t seed);
Split loadSplit(const std::string& path);
void saveSplit(const std::string& path, const Split& split, double holdout, uint64_t seed);

// One row of predictions.csv; samples holds every reverse-pass draw.
struct PredictionRow {
    int64_t regionId = 0;
    int task = 0;
    double point = 0.0;
    std::vector<double> samples;
};

std::vector<PredictionRow> readPredictionsCsv(const std::string& path);

void runSynth(const std::string& outDir, const io::SyntheticSpec& spec, const RunConfig& cfg,
              const Logger& log = {});

struct GridArgs {
    std::string poisCsv;
    std::string regionsJson;   // optional
    std::string targetsCsv;    // optional
    std::string mappingJson;   // optional category-name mapping
    std::optional<grid::BBox> bbox;  // default: POI extent padded by one edge
};

void runGrid(const std::string& outDir, const GridArgs& args, const RunConfig& cfg,
             const Logger& log = {});

void runWalks(const std::string& outDir, const std::string& cityDir, const RunConfig& cfg,
              const Logger& log = {});

void runPretrain(const std::string& outDir, const std::string& cityDir, const RunConfig& cfg,
                 const Logger& log = {});

// Architecture comes from the encoder directory's config snapshot; the
// walk seed for extraction comes from cfg.
void runEmbed(const std::string& outDir, const std::string& cityDir,
              const std::string& encoderDir, const RunConfig& cfg, const Logger& log = {});

void runAggregate(const std::string& outDir, const std::string& cityDir,
                  const std::string& embedDir, const RunConfig& cfg, const Logger& log = {});

struct TrainArgs {
    std::string cityDir;
    std::string embeddings;  // embeddings.csv or the directory holding it
    int limitTasks = 0;      // 0 = every task in targets.csv
};

void runTrain(const std::string& outDir, const TrainArgs& args, const RunConfig& cfg,
              const Logger& log = {});

struct PredictArgs {
    std::string modelDir;
    std::string embeddings;
    std::string regions = "test";  // test | train | all | comma-separated ids
    std::optional<int> samples;
    std::optional<uint64_t> seed;
    std::optional<bool> medianPoint;
};

void runPredict(const std::string& outDir, const PredictArgs& args, const Logger& log = {});

struct EvalArgs {
    std::string predictions;  // predictions.csv or the directory holding it
    std::string cityDir;
    bool svg = false;
};

void runEval(const std::string& outDir, const EvalArgs& args, const Logger& log = {});

// Trains the full model plus one variant per ablation switch on a shared
// split and tabulates test metrics.
void runAblate(const std::string& outDir, const TrainArgs& args, const RunConfig& cfg,
               const Logger& log = {});

struct FinetuneArgs {
    std::string modelDir;
    std::string cityDir;
    std::string embeddings;
    int newTask = -1;  // default: first task id beyond the checkpoint
    std::optional<int> epochs;
    std::optional<double> learningRate;
    std::optional<uint64_t> seed;
};

void runFinetune(const std::string& outDir, const FinetuneArgs& args, const Logger& log = {});

}  // namespace uv::pipe

#pragma once

#include <cstdint>
#include <string>

namespace uv::pipe {

// Every knob of the pipeline with its stock defaults. Serialized verbatim
// into each stage's output directory so any artifact can be traced back to
// the exact configuration that produced it.
struct RunConfig {
    // lattice and walks
    double edgeM = 150.0;
    int k = 8;             // walks per root
    int l = 4;             // steps per walk
    double p = 1.0;        // return parameter
    double q = 0.1;        // in-out parameter

    // cell encoder
    double maskRatio = 0.3;
    int encLayers = 3;
    int decLayers = 1;
    int dim = 144;
    int heads = 4;
    double dropout = 0.1;
    int pretrainEpochs = 100;
    double lrPre = 1e-7;
    bool usePositions = true;
    bool frozenWalks = false;  // reuse one walk corpus for every epoch

    // diffusion head
    int steps = 100;
    double beta1 = 1e-4;
    double betaT = 0.02;
    double lrDiff = 5e-3;
    int diffEpochs = 1500;
    int retrievalK = 5;
    int samplingRounds = 10;
    int dnDim = 128;
    double weightDecay = 0.01;
    bool medianPoint = false;

    // ablation switches
    std::string prior = "retrieved";     // retrieved | gaussian
    std::string retrieval = "topk";      // topk | random
    std::string conditioning = "em";     // em | concat | xattn
    std::string head = "diffusion";      // diffusion | point

    // run behavior
    int batchSize = 64;
    double holdout = 0.2;  // region fraction held out by the training split
    int threads = 0;       // accepted and recorded; stages currently run single threaded
    uint64_t seed = 0;

    void validate() const;
    std::string toJson() const;
    static RunConfig fromJson(const std::string& text);
};

// Reads <dir>/config.json (written by every stage).
RunConfig loadConfigSnapshot(const std::string& dir);
void saveConfigSnapshot(const std::string& dir, const RunConfig& cfg);

}  // namespace uv::pipe

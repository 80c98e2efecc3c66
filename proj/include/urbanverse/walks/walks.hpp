#pragma once

#include <cstdint>
#include <vector>

#include "urbanverse/grid/hexgrid.hpp"
#include "urbanverse/numerics/rng.hpp"

namespace uv::walks {

// Undirected cell graph; adjacency lists are kept sorted so membership
// checks during biased steps are a binary search.
class CellGraph {
public:
    CellGraph() = default;
    explicit CellGraph(std::vector<std::vector<int64_t>> adjacency);
    static CellGraph fromCells(const grid::CellSet& cells);

    int64_t size() const { return static_cast<int64_t>(adj_.size()); }
    const std::vector<int64_t>& neighbors(int64_t v) const;
    bool adjacent(int64_t a, int64_t b) const;

private:
    std::vector<std::vector<int64_t>> adj_;
};

struct WalkSequence {
    int64_t root = -1;
    std::vector<int64_t> nodes;   // length k*l + 1, nodes[0] == root
    int64_t rootRepeats = 0;      // dead-end fills, worth a warning when nonzero
};

struct FeatureSequence {
    int64_t rows = 0;  // k*l + 1
    std::vector<float> data;  // rows x 15, row-major
};

// Unnormalized second-order step weights from `cur` given the previous
// node, aligned with neighbors(cur): 1/p to return, 1 to a node adjacent
// to prev, 1/q otherwise. prev < 0 means a first step (uniform).
std::vector<double> transitionWeights(const CellGraph& g, int64_t prev, int64_t cur,
                                      double p, double q);

// k independent l-step biased walks from the root, concatenated after the
// single root token. A root with no neighbors repeats itself.
WalkSequence sampleWalks(const CellGraph& g, int64_t root, int k, int l, double p, double q,
                         num::Rng& rng);

FeatureSequence buildFeatureSequence(const WalkSequence& seq, const grid::CellSet& cells);

}  // namespace uv::walks

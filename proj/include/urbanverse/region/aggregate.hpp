#pragma once

#include <cstdint>
#include <vector>

#include "urbanverse/encoder/cell_encoder.hpp"
#include "urbanverse/grid/hexgrid.hpp"

namespace uv::region {

struct RegionEmbedding {
    int64_t regionId = -1;
    std::vector<float> h;
};

// h = sum over overlapped cells of omega * x_cell. Weights are applied
// as-is (no renormalization), so larger regions accumulate more mass.
RegionEmbedding aggregate(const grid::OverlapWeights& weights,
                          const enc::CellEmbeddingSet& embeddings);

}  // namespace uv::region

#include "urbanverse/region/aggregate.hpp"

#include <algorithm>
#include <string>

#include "urbanverse/common.hpp"

namespace uv::region {

RegionEmbedding aggregate(const grid::OverlapWeights& weights,
                          const enc::CellEmbeddingSet& embeddings) {
    if (weights.cells.empty())
        throw DataError("region " + std::to_string(weights.regionId) +
                        " overlaps no cells (outside the gridded area)");

    // summation in cell-id order keeps the result independent of the
    // order the weight list arrived in
    auto sorted = weights.cells;
    std::sort(sorted.begin(), sorted.end());

    RegionEmbedding out;
    out.regionId = weights.regionId;
    out.h.assign(static_cast<size_t>(embeddings.dim), 0.0f);
    for (const auto& [cellId, omega] : sorted) {
        const float* x = embeddings.row(cellId);
        const auto w = static_cast<float>(omega);
        for (int64_t c = 0; c < embeddings.dim; ++c) out.h[static_cast<size_t>(c)] += w * x[c];
    }
    return out;
}

}  // namespace uv::region

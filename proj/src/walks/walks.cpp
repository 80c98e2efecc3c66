#include "urbanverse/walks/walks.hpp"

#include <algorithm>
#include <string>

#include "urbanverse/common.hpp"

namespace uv::walks {

CellGraph::CellGraph(std::vector<std::vector<int64_t>> adjacency) : adj_(std::move(adjacency)) {
    const int64_t n = size();
    for (int64_t v = 0; v < n; ++v) {
        auto& nb = adj_[static_cast<size_t>(v)];
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
        for (int64_t u : nb) {
            if (u == v) throw DataError("self loop at cell " + std::to_string(v));
            if (u < 0 || u >= n) throw DataError("edge endpoint " + std::to_string(u) + " out of range");
        }
    }
    for (int64_t v = 0; v < n; ++v)
        for (int64_t u : adj_[static_cast<size_t>(v)])
            if (!adjacent(u, v))
                throw DataError("asymmetric adjacency between " + std::to_string(v) + " and " + std::to_string(u));
}

CellGraph CellGraph::fromCells(const grid::CellSet& cells) {
    std::vector<std::vector<int64_t>> adj(static_cast<size_t>(cells.size()));
    for (const auto& c : cells.cells) adj[static_cast<size_t>(c.id)] = c.neighbors;
    return CellGraph(std::move(adj));
}

const std::vector<int64_t>& CellGraph::neighbors(int64_t v) const {
    if (v < 0 || v >= size()) throw DataError("unknown cell id " + std::to_string(v));
    return adj_[static_cast<size_t>(v)];
}

bool CellGraph::adjacent(int64_t a, int64_t b) const {
    const auto& nb = neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
}

std::vector<double> transitionWeights(const CellGraph& g, int64_t prev, int64_t cur,
                                      double p, double q) {
    const auto& nb = g.neighbors(cur);
    std::vector<double> w(nb.size(), 1.0);
    if (prev < 0) return w;
    for (size_t i = 0; i < nb.size(); ++i) {
        if (nb[i] == prev)
            w[i] = 1.0 / p;
        else if (!g.adjacent(nb[i], prev))
            w[i] = 1.0 / q;
    }
    return w;
}

namespace {

size_t sampleIndex(const std::vector<double>& weights, num::Rng& rng) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double draw = rng.uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (draw < acc) return i;
    }
    return weights.size() - 1;
}

}  // namespace

WalkSequence sampleWalks(const CellGraph& g, int64_t root, int k, int l, double p, double q,
                         num::Rng& rng) {
    if (k < 1 || l < 1)
        throw ConfigError("walk counts must be positive: k=" + std::to_string(k) + " l=" + std::to_string(l));
    if (p <= 0.0 || q <= 0.0)
        throw ConfigError("walk bias parameters must be positive: p=" + std::to_string(p) +
                          " q=" + std::to_string(q));
    (void)g.neighbors(root);

    WalkSequence seq;
    seq.root = root;
    seq.nodes.reserve(static_cast<size_t>(k) * l + 1);
    seq.nodes.push_back(root);
    for (int walk = 0; walk < k; ++walk) {
        int64_t prev = -1;
        int64_t cur = root;
        for (int step = 0; step < l; ++step) {
            const auto& nb = g.neighbors(cur);
            if (nb.empty()) {
                seq.nodes.push_back(root);
                seq.rootRepeats += 1;
                prev = cur;
                cur = root;
                continue;
            }
            const auto w = transitionWeights(g, prev, cur, p, q);
            const int64_t next = nb[sampleIndex(w, rng)];
            seq.nodes.push_back(next);
            prev = cur;
            cur = next;
        }
    }
    return seq;
}

FeatureSequence buildFeatureSequence(const WalkSequence& seq, const grid::CellSet& cells) {
    FeatureSequence fs;
    fs.rows = static_cast<int64_t>(seq.nodes.size());
    fs.data.reserve(static_cast<size_t>(fs.rows) * grid::kPoiCategories);
    for (int64_t id : seq.nodes) {
        const auto& cell = cells.byId(id);
        for (int64_t v : cell.poi) fs.data.push_back(static_cast<float>(v));
    }
    return fs;
}

}  // namespace uv::walks

#pragma once
// Topological statistics that condition the reader's edge gates.
//
// Node features phi(v) = [log(1+d), clustering, core number, mean neighbour
// degree]; edge features psi(u,v) = [|d_u-d_v|, common neighbours, Jaccard];
// graph summary r_G = [mean(phi); std(phi); density].

#include <array>
#include <optional>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sage/graph_store.hpp"
#include "sage/tensor.hpp"

namespace sage {

struct StructuralGraph {
    std::size_t n = 0;
    std::vector<std::vector<std::size_t>> adj;          // sorted, no self
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // u < v, sorted

    std::size_t degree(std::size_t v) const { return adj[v].size(); }
    std::size_t num_edges() const { return edges.size(); }
};

// Symmetric, self-loop-free, binarised adjacency from arbitrary (u,v) pairs.
StructuralGraph structural_graph_from_pairs(std::size_t n,
                                            const std::vector<std::pair<std::size_t, std::size_t>>& pairs);
StructuralGraph binarized_structural_graph(const GraphMemory& g);

struct NodeStructFeat {
    double log1p_degree = 0.0;
    double clustering = 0.0;
    int core_number = 0;
    double avg_neighbor_degree = 0.0;

    std::array<double, 4> vec() const {
        return {log1p_degree, clustering, static_cast<double>(core_number), avg_neighbor_degree};
    }
};

std::vector<int> core_numbers(const StructuralGraph& sg);
std::vector<NodeStructFeat> node_features(const StructuralGraph& sg);

struct EdgePairFeat {
    double degree_diff = 0.0;
    double common_neighbors = 0.0;
    double jaccard = 0.0;

    std::array<double, 3> vec() const { return {degree_diff, common_neighbors, jaccard}; }
};

inline constexpr double kJaccardEps = 1e-9;

// One record per undirected edge, aligned with sg.edges.
std::vector<EdgePairFeat> edge_pair_features(const StructuralGraph& sg, double eps = kJaccardEps);

inline constexpr std::size_t kNodeFeatDim = 4;
inline constexpr std::size_t kEdgeFeatDim = 3;
inline constexpr std::size_t kSummaryDim = 9;
inline constexpr double kDegenerateStd = 1e-12;

struct GraphSummary {
    std::array<double, kSummaryDim> values{};
    double density() const { return values[8]; }
};

// Global mean/std over a set of training-graph summaries.
struct SummaryNorm {
    std::array<double, kSummaryDim> mean{};
    std::array<double, kSummaryDim> std{};
    bool fitted = false;
};
SummaryNorm fit_summary_norm(const std::vector<GraphSummary>& summaries);

struct NormalizedFeatures {
    nn::Tensor node;     // [n, 4]
    nn::Tensor edge;     // [m, 3]
    nn::Tensor summary;  // [9]
    GraphSummary raw_summary;
};

GraphSummary graph_summary(const StructuralGraph& sg, const std::vector<NodeStructFeat>& nodes);

// z-scores node and edge features within the graph (centering only on
// degenerate dimensions) and normalises the summary by global stats when
// given.
NormalizedFeatures graph_summary_and_normalize(const StructuralGraph& sg,
                                               const std::vector<NodeStructFeat>& nodes,
                                               const std::vector<EdgePairFeat>& edges,
                                               const SummaryNorm* norm = nullptr);

// Contiguous [begin, end) ranges of at most chunk_size items.
std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t count, std::size_t chunk_size);

template <typename T>
std::vector<std::vector<T>> chunk_edges(const std::vector<T>& edges, std::size_t chunk_size) {
    std::vector<std::vector<T>> out;
    for (auto [b, e] : chunk_ranges(edges.size(), chunk_size)) {
        out.emplace_back(edges.begin() + static_cast<std::ptrdiff_t>(b),
                         edges.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return out;
}

// Content hash of the structural graph, used to key feature caches.
std::string structural_hash(const StructuralGraph& sg);

nlohmann::json features_to_json(const StructuralGraph& sg, const NormalizedFeatures& f);
// Loads cached features; nullopt when the stored hash does not match sg.
std::optional<NormalizedFeatures> features_from_json(const nlohmann::json& j, const StructuralGraph& sg);

}  // namespace sage

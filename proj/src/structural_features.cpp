#include "sage/structural_features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sage/text.hpp"

namespace sage {

using nn::Shape;
using nn::Tensor;

StructuralGraph structural_graph_from_pairs(std::size_t n,
                                            const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    StructuralGraph sg;
    sg.n = n;
    sg.adj.assign(n, {});
    std::vector<std::pair<std::size_t, std::size_t>> und;
    for (auto [u, v] : pairs) {
        if (u >= n || v >= n) throw std::out_of_range("structural edge endpoint out of range");
        if (u == v) continue;
        und.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(und.begin(), und.end());
    und.erase(std::unique(und.begin(), und.end()), und.end());
    for (auto [u, v] : und) {
        sg.adj[u].push_back(v);
        sg.adj[v].push_back(u);
    }
    for (auto& a : sg.adj) std::sort(a.begin(), a.end());
    sg.edges = std::move(und);
    return sg;
}

StructuralGraph binarized_structural_graph(const GraphMemory& g) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(g.ee_edges().size());
    for (const auto& e : g.ee_edges()) pairs.emplace_back(e.head, e.tail);
    return structural_graph_from_pairs(g.num_entities(), pairs);
}

std::vector<int> core_numbers(const StructuralGraph& sg) {
    // Bucket peeling (Batagelj-Zaversnik).
    std::size_t n = sg.n;
    std::vector<int> deg(n), core(n, 0);
    int maxd = 0;
    for (std::size_t v = 0; v < n; ++v) {
        deg[v] = static_cast<int>(sg.degree(v));
        maxd = std::max(maxd, deg[v]);
    }
    std::vector<std::size_t> bin(static_cast<std::size_t>(maxd) + 1, 0);
    for (std::size_t v = 0; v < n; ++v) ++bin[static_cast<std::size_t>(deg[v])];
    std::size_t start = 0;
    for (auto& b : bin) {
        std::size_t c = b;
        b = start;
        start += c;
    }
    std::vector<std::size_t> pos(n), vert(n);
    for (std::size_t v = 0; v < n; ++v) {
        pos[v] = bin[static_cast<std::size_t>(deg[v])]++;
        vert[pos[v]] = v;
    }
    for (std::size_t d = bin.size(); d-- > 1;) bin[d] = bin[d - 1];
    if (!bin.empty()) bin[0] = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t v = vert[i];
        core[v] = deg[v];
        for (std::size_t u : sg.adj[v]) {
            if (deg[u] > deg[v]) {
                std::size_t du = static_cast<std::size_t>(deg[u]);
                std::size_t pu = pos[u];
                std::size_t pw = bin[du];
                std::size_t w = vert[pw];
                if (u != w) {
                    pos[u] = pw;
                    vert[pu] = w;
                    pos[w] = pu;
                    vert[pw] = u;
                }
                ++bin[du];
                --deg[u];
            }
        }
    }
    return core;
}

namespace {
std::size_t sorted_intersection(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::size_t i = 0, j = 0, c = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) ++i;
        else if (b[j] < a[i]) ++j;
        else {
            ++c;
            ++i;
            ++j;
        }
    }
    return c;
}
}  // namespace

std::vector<NodeStructFeat> node_features(const StructuralGraph& sg) {
    auto core = core_numbers(sg);
    std::vector<NodeStructFeat> out(sg.n);
    for (std::size_t v = 0; v < sg.n; ++v) {
        auto& f = out[v];
        std::size_t d = sg.degree(v);
        f.log1p_degree = std::log1p(static_cast<double>(d));
        f.core_number = core[v];
        if (d >= 2) {
            std::size_t tri2 = 0;  // each triangle counted twice
            for (std::size_t u : sg.adj[v]) tri2 += sorted_intersection(sg.adj[v], sg.adj[u]);
            double dd = static_cast<double>(d);
            f.clustering = static_cast<double>(tri2) / (dd * (dd - 1.0));
        }
        if (d > 0) {
            double s = 0.0;
            for (std::size_t u : sg.adj[v]) s += static_cast<double>(sg.degree(u));
            f.avg_neighbor_degree = s / static_cast<double>(d);
        }
    }
    return out;
}

std::vector<EdgePairFeat> edge_pair_features(const StructuralGraph& sg, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("edge_pair_features: eps must be > 0");
    std::vector<EdgePairFeat> out;
    out.reserve(sg.edges.size());
    for (auto [u, v] : sg.edges) {
        EdgePairFeat f;
        double du = static_cast<double>(sg.degree(u));
        double dv = static_cast<double>(sg.degree(v));
        f.degree_diff = std::abs(du - dv);
        double cn = static_cast<double>(sorted_intersection(sg.adj[u], sg.adj[v]));
        f.common_neighbors = cn;
        double uni = du + dv - cn;
        f.jaccard = cn / (uni + eps);
        out.push_back(f);
    }
    return out;
}

GraphSummary graph_summary(const StructuralGraph& sg, const std::vector<NodeStructFeat>& nodes) {
    GraphSummary s;
    std::size_t n = nodes.size();
    if (n == 0) return s;
    std::array<double, 4> mean{}, var{};
    for (const auto& f : nodes) {
        auto v = f.vec();
        for (int k = 0; k < 4; ++k) mean[k] += v[k];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (const auto& f : nodes) {
        auto v = f.vec();
        for (int k = 0; k < 4; ++k) var[k] += (v[k] - mean[k]) * (v[k] - mean[k]);
    }
    for (int k = 0; k < 4; ++k) {
        s.values[k] = mean[k];
        s.values[4 + k] = std::sqrt(var[k] / static_cast<double>(n));
    }
    if (sg.n >= 2) {
        double nn_ = static_cast<double>(sg.n);
        s.values[8] = 2.0 * static_cast<double>(sg.num_edges()) / (nn_ * (nn_ - 1.0));
    }
    return s;
}

SummaryNorm fit_summary_norm(const std::vector<GraphSummary>& summaries) {
    SummaryNorm norm;
    if (summaries.empty()) return norm;
    double n = static_cast<double>(summaries.size());
    for (const auto& s : summaries)
        for (std::size_t k = 0; k < kSummaryDim; ++k) norm.mean[k] += s.values[k];
    for (auto& m : norm.mean) m /= n;
    for (const auto& s : summaries)
        for (std::size_t k = 0; k < kSummaryDim; ++k) {
            double d = s.values[k] - norm.mean[k];
            norm.std[k] += d * d;
        }
    for (auto& v : norm.std) v = std::sqrt(v / n);
    norm.fitted = true;
    return norm;
}

namespace {
// Column-wise z-score of a row-major [rows, cols] block in place.
void zscore_columns(Tensor& t) {
    std::size_t rows = t.rows(), cols = t.cols();
    if (rows == 0) return;
    for (std::size_t c = 0; c < cols; ++c) {
        double mu = 0.0;
        for (std::size_t r = 0; r < rows; ++r) mu += t.at(r, c);
        mu /= static_cast<double>(rows);
        double var = 0.0;
        for (std::size_t r = 0; r < rows; ++r) var += (t.at(r, c) - mu) * (t.at(r, c) - mu);
        double sd = std::sqrt(var / static_cast<double>(rows));
        double div = sd < kDegenerateStd ? 1.0 : sd;
        for (std::size_t r = 0; r < rows; ++r) t.at(r, c) = (t.at(r, c) - mu) / div;
    }
}
}  // namespace

NormalizedFeatures graph_summary_and_normalize(const StructuralGraph& sg,
                                               const std::vector<NodeStructFeat>& nodes,
                                               const std::vector<EdgePairFeat>& edges,
                                               const SummaryNorm* norm) {
    if (nodes.size() != sg.n) throw std::invalid_argument("node feature count does not match graph");
    if (edges.size() != sg.num_edges()) throw std::invalid_argument("edge feature count does not match graph");
    NormalizedFeatures out;
    out.node = Tensor(Shape{sg.n, kNodeFeatDim});
    for (std::size_t v = 0; v < sg.n; ++v) {
        auto f = nodes[v].vec();
        for (std::size_t k = 0; k < kNodeFeatDim; ++k) out.node.at(v, k) = f[k];
    }
    out.edge = Tensor(Shape{edges.size(), kEdgeFeatDim});
    for (std::size_t i = 0; i < edges.size(); ++i) {
        auto f = edges[i].vec();
        for (std::size_t k = 0; k < kEdgeFeatDim; ++k) out.edge.at(i, k) = f[k];
    }
    zscore_columns(out.node);
    zscore_columns(out.edge);
    out.raw_summary = graph_summary(sg, nodes);
    out.summary = Tensor(Shape{kSummaryDim});
    for (std::size_t k = 0; k < kSummaryDim; ++k) {
        double v = out.raw_summary.values[k];
        if (norm != nullptr && norm->fitted) {
            double sd = norm->std[k] < kDegenerateStd ? 1.0 : norm->std[k];
            v = (v - norm->mean[k]) / sd;
        }
        out.summary[k] = v;
    }
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t count, std::size_t chunk_size) {
    if (chunk_size == 0) throw std::invalid_argument("chunk size must be >= 1");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < count; b += chunk_size) out.emplace_back(b, std::min(count, b + chunk_size));
    return out;
}

std::string structural_hash(const StructuralGraph& sg) {
    std::string s = std::to_string(sg.n) + ";";
    for (auto [u, v] : sg.edges) s += std::to_string(u) + "-" + std::to_string(v) + ",";
    return text::content_hash(s);
}

nlohmann::json features_to_json(const StructuralGraph& sg, const NormalizedFeatures& f) {
    return {{"format", "sage.features"},
            {"version", 1},
            {"structural_hash", structural_hash(sg)},
            {"node", f.node.values()},
            {"edge", f.edge.values()},
            {"summary", f.summary.values()},
            {"raw_summary", f.raw_summary.values}};
}

std::optional<NormalizedFeatures> features_from_json(const nlohmann::json& j, const StructuralGraph& sg) {
    if (j.value("format", "") != "sage.features" || j.value("version", 0) != 1) return std::nullopt;
    if (j.value("structural_hash", "") != structural_hash(sg)) return std::nullopt;
    NormalizedFeatures f;
    f.node = Tensor(Shape{sg.n, kNodeFeatDim}, j.at("node").get<std::vector<double>>());
    f.edge = Tensor(Shape{sg.num_edges(), kEdgeFeatDim}, j.at("edge").get<std::vector<double>>());
    f.summary = Tensor(Shape{kSummaryDim}, j.at("summary").get<std::vector<double>>());
    f.raw_summary.values = j.at("raw_summary").get<std::array<double, kSummaryDim>>();
    return f;
}

}  // namespace sage

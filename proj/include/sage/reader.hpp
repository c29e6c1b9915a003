#pragma once
// Gated graph reader: soft addressing over entities, structurally gated
// propagation with a context and a schema channel, selector scoring and
// entity-to-document projection.

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sage/autograd.hpp"
#include "sage/embedder.hpp"
#include "sage/graph_store.hpp"
#include "sage/query_planner.hpp"
#include "sage/reader_params.hpp"
#include "sage/structural_features.hpp"

namespace sage {

// Message-passing view of a structural graph. Every undirected edge i yields
// two directed edges (2i: u->v, 2i+1: v->u) sharing edge-feature row i. Self
// loops are implicit with unit weight and unit gate.
struct PropagationGraph {
    std::size_t n = 0;
    std::vector<std::size_t> src, dst, pair_row;
    std::vector<double> eta;       // w_uv / sqrt(d~_u d~_v)
    std::vector<double> self_eta;  // 1 / d~_v
    nn::Tensor node_feat;          // [n, 4] normalised
    nn::Tensor edge_feat;          // [m, 3] normalised
    nn::Tensor summary;            // [9] normalised

    std::size_t num_directed() const { return src.size(); }
};

PropagationGraph make_propagation_graph(const StructuralGraph& sg, const NormalizedFeatures& f);

// Entity text used for the node feature input: name plus incident relations.
std::string entity_description(const GraphMemory& g, std::size_t e);

struct PreparedGraph {
    GraphMemory graph;
    StructuralGraph sg;
    NormalizedFeatures feats;
    PropagationGraph prop;
    EntityDocMatrix M;
    nn::Tensor X;  // [n, emb] entity description embeddings
};

PreparedGraph prepare_graph(const GraphMemory& g, const TextEmbedder& emb, const SummaryNorm& norm);

inline constexpr std::size_t kEntryTerms = 6;  // exact, alias, cosine, type, cons, link

// Relation tokens that signal an answer type.
const std::vector<std::string>& answer_type_keywords(std::string_view answer_type);

// Per-entity cue matrix [n, 6], independent of learnable weights.
nn::Tensor entry_components(const QueryPlan& plan, std::string_view question, const PreparedGraph& pg,
                            const TextEmbedder& emb);

struct EntryScores {
    std::vector<double> total;
    nn::Tensor components;  // [n, 6]
};
EntryScores entry_scores(const QueryPlan& plan, std::string_view question, const PreparedGraph& pg,
                         const TextEmbedder& emb, const std::vector<double>& lambda);

std::vector<double> initial_activation(const std::vector<double>& scores, double T0);

struct QueryInputs {
    nn::Tensor components;      // [n, 6]
    std::vector<double> q_emb;  // Emb(query text)
};

// Caches one tape leaf per parameter so shared weights appear once per tape.
class ParamBinder {
public:
    explicit ParamBinder(nn::Tape& t) : tape_(t) {}
    nn::Var operator()(nn::Parameter& p);
    nn::Tape& tape() { return tape_; }

private:
    nn::Tape& tape_;
    std::unordered_map<nn::Parameter*, nn::Var> bound_;
};

struct ForwardOptions {
    std::size_t chunk_size = 0;  // 0: use cfg.C_e
    bool record_gates = false;
    bool training = false;
    nn::Rng* rng = nullptr;  // dropout source when training
    bool init_entities_weight = false;  // scale a_e by 1/max(f(e),1)
};

struct ReaderForward {
    nn::Var s, p0, H0, H_ctx, H_sch, H, z, a, zeta, pi, a_final;
    bool has_schema = false;
    std::vector<nn::Tensor> gates;  // context channel, per layer [2m, d]
};

nn::Var mlp2(ParamBinder& bind, Mlp2& m, nn::Var x);

// One propagation layer. gated=false uses unit gates (schema channel). prompt,
// when valid, is added to every row of the layer input.
nn::Var propagate_layer(ParamBinder& bind, LayerParams& lp, const ReaderConfig& cfg, const PropagationGraph& pg,
                        nn::Var H, std::size_t layer_index, bool gated, nn::Var prompt, std::size_t chunk_size,
                        nn::Tensor* gate_trace);

// L layers on one channel.
nn::Var encode_channel(ParamBinder& bind, ReaderParams& params, const PropagationGraph& pg, nn::Var H,
                       bool gated, bool with_prompts, std::size_t chunk_size, std::vector<nn::Tensor>* traces);

ReaderForward reader_forward(ParamBinder& bind, ReaderParams& params, const PreparedGraph& pg,
                             const QueryInputs& in, const ForwardOptions& opt = {});

// s_d = M^T s~ with s~ chosen by mode; documents without anchors get -inf.
std::vector<double> document_scores(const std::vector<double>& a_final, const EntityDocMatrix& M,
                                    DocScoreMode mode, std::size_t K_e);

// Indices of the k largest finite scores, ties by ascending index.
std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k);

struct RetrievalOptions {
    std::size_t k = 5;
    DocScoreMode mode = DocScoreMode::Raw;
    std::size_t K_e = 20;
    std::size_t chunk_size = 4096;
    bool init_entities_weight = false;
    bool record_gates = false;
    std::size_t seed_budget = 3;
    bool use_pseudo_queries = true;
};

RetrievalOptions retrieval_options_from(const ReaderConfig& cfg, std::size_t k);

struct RetrievalResult {
    QueryPlan plan;
    std::vector<double> a;
    std::vector<double> a_final;
    std::vector<double> pi;
    std::vector<double> doc_scores;
    std::vector<std::size_t> top_docs;
    std::vector<std::size_t> subgraph_nodes;
    std::vector<std::pair<std::size_t, std::size_t>> subgraph_edges;
    std::vector<std::vector<std::size_t>> paths;
    std::vector<nn::Tensor> gates;
    bool empty_graph = false;
};

RetrievalResult retrieve(std::string_view question, const PreparedGraph& pg, const QueryPlan& plan,
                         const TextEmbedder& emb, ReaderParams& params, const RetrievalOptions& opt);

// Plans with client when given (falling back to the deterministic planner on
// failure), otherwise deterministically, then retrieves.
RetrievalResult retrieve(std::string_view question, const PreparedGraph& pg, LLMClient* client,
                         const TextEmbedder& emb, ReaderParams& params, const RetrievalOptions& opt);

nlohmann::json retrieval_report(std::string_view question, const PreparedGraph& pg, const RetrievalResult& r);

}  // namespace sage

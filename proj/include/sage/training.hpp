#pragma once
// Reader training: contrastive structural pretraining and supervised
// fine-tuning with entity-level, list and selector objectives.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/optim.hpp"
#include "sage/reader.hpp"

namespace sage {

inline constexpr double kLossEps = 1e-9;

// ---- pretraining ----------------------------------------------------------

enum class AugOp { EdgePerturb, FeatureMask, NodeDrop, Subgraph };
std::string to_string(AugOp op);

struct AugmentRates {
    double edge = 0.2;     // fraction of edges dropped (and added)
    double feature = 0.2;  // fraction of feature dims zeroed
    double node = 0.1;     // fraction of nodes dropped; subgraph keeps 1 - node
};

struct GraphView {
    StructuralGraph sg;
    nn::Tensor X;                        // [n_view, emb]
    std::vector<std::size_t> node_ids;   // view node -> base node
    PropagationGraph prop;
};

struct GraphViews {
    GraphView base;
    GraphView view1, view2;
    nn::Tensor X_neg;  // row permutation of base.X
    std::array<AugOp, 2> ops{};
};

// Builds a view with freshly computed structural features.
GraphView make_view(StructuralGraph sg, nn::Tensor X, std::vector<std::size_t> node_ids,
                    const SummaryNorm* norm = nullptr);

GraphView augment_view(const GraphView& base, AugOp op, const AugmentRates& rates, nn::Rng& rng,
                       const SummaryNorm* norm = nullptr);

// Two ops drawn uniformly from the four (seeded) unless given explicitly.
GraphViews augment_views(const StructuralGraph& sg, const nn::Tensor& X, const AugmentRates& rates,
                         std::uint64_t seed, const SummaryNorm* norm = nullptr);
GraphViews augment_views(const StructuralGraph& sg, const nn::Tensor& X, std::array<AugOp, 2> ops,
                         const AugmentRates& rates, std::uint64_t seed, const SummaryNorm* norm = nullptr);

// Both channels on H0 = X W_x^T; the feature prompt p_f stays neutral.
nn::Var pretrain_encode(ParamBinder& bind, ReaderParams& params, const PropagationGraph& pg, const nn::Tensor& X,
                        std::size_t chunk_size = 0);

nn::Var graphcl_pretrain_loss(ParamBinder& bind, ReaderParams& params, const GraphViews& views,
                              std::size_t chunk_size = 0);

struct PretrainConfig {
    std::size_t steps = 20;
    AugmentRates rates;
    nn::AdamConfig adam{.lr = 5e-3};
    std::uint64_t seed = 11;
};

struct PretrainResult {
    std::vector<double> losses;
    bool diverged = false;
};

// Graphs are visited round-robin; on a non-finite loss the last good
// parameters are restored and training stops.
PretrainResult pretrain(ReaderParams& params, const std::vector<const PreparedGraph*>& graphs,
                        const PretrainConfig& cfg);

// ---- fine-tuning ----------------------------------------------------------

struct LossWeights {
    double lambda_bce = 0.3;
    double lambda_list = 0.7;
    double T_a = 1.0;  // adversarial temperature, 0 = uniform negatives
    double w_nce = 0.1;
    double w_size = 0.01;
    double w_con = 0.01;
    double T_n = 0.1;
    double w_doc = 0.0;  // optional document-level loss
};

// Per-sample weighted BCE with logits; y holds {0,1} targets.
nn::Var weighted_bce_loss(const std::vector<nn::Var>& a, const std::vector<nn::Tensor>& y, double T_a);

// Multi-positive list cross entropy; samples without positives are skipped.
// Returns a zero constant when every sample is empty and sets *all_empty.
nn::Var multi_positive_list_loss(const std::vector<nn::Var>& a, const std::vector<std::vector<std::size_t>>& positives,
                                 bool* all_empty = nullptr);

struct SelectorTerms {
    nn::Var nce, size, con;
};

// pi[b]: [n_b], H[b]: [n_b, d], z[b]: [d]; edges per sample (u < v).
SelectorTerms selector_regularizers(const std::vector<nn::Var>& pi, const std::vector<nn::Var>& H,
                                    const std::vector<nn::Var>& z,
                                    const std::vector<const std::vector<std::pair<std::size_t, std::size_t>>*>& edges,
                                    double T_n);

// Weighted BCE on projected document logits S = M^T a.
nn::Var doc_level_loss(const std::vector<nn::Var>& a, const std::vector<const EntityDocMatrix*>& M,
                       const std::vector<nn::Tensor>& z, double T_a);

struct FinetuneSample {
    std::string question;
    QueryPlan plan;
    const PreparedGraph* graph = nullptr;
    QueryInputs inputs;
    nn::Tensor y;                       // [n] support-entity mask
    std::vector<std::size_t> positives;  // entity ids with y = 1
    nn::Tensor z;                       // [n_docs] support-doc mask
    std::vector<std::size_t> gold_docs;
};

FinetuneSample make_finetune_sample(std::string question, QueryPlan plan, const PreparedGraph* graph,
                                    const TextEmbedder& emb, const std::vector<std::string>& support_entities,
                                    const std::vector<std::string>& support_doc_ids);

struct LossBreakdown {
    double total = 0, bce = 0, list = 0, nce = 0, size = 0, con = 0, doc = 0;
    nlohmann::json to_json() const;
};

nn::Var finetune_loss(ParamBinder& bind, ReaderParams& params, const std::vector<const FinetuneSample*>& batch,
                      const LossWeights& w, const ForwardOptions& fo, LossBreakdown* out = nullptr);

struct FinetuneConfig {
    LossWeights weights;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    nn::AdamConfig adam{.lr = 1e-2, .weight_decay = 0.1};
    std::size_t patience = 10;  // epochs without held-out Recall@k gain; 0 disables
    std::size_t eval_k = 5;
    std::uint64_t seed = 13;
};

struct FinetuneResult {
    std::vector<LossBreakdown> epoch_losses;
    std::vector<double> heldout_recall;
    std::size_t best_epoch = 0;
    bool diverged = false;
    bool early_stopped = false;
};

using MetricsSink = std::function<void(const nlohmann::json&)>;

// Held-out Recall@k under the reader's own plans.
double heldout_recall(ReaderParams& params, const std::vector<FinetuneSample>& samples, const TextEmbedder& emb,
                      std::size_t k);

// Keeps the parameters of the best held-out epoch when held-out data is given.
FinetuneResult finetune(ReaderParams& params, const std::vector<FinetuneSample>& train,
                        const std::vector<FinetuneSample>& heldout, const TextEmbedder& emb,
                        const FinetuneConfig& cfg, const MetricsSink& sink = {});

}  // namespace sage

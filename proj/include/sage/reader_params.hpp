#pragma once
// Learnable state of the gated graph reader and its hyperparameters.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sage/autograd.hpp"
#include "sage/structural_features.hpp"

namespace sage {

enum class DocScoreMode { Raw, TopK, Idf, IdfTopK };
DocScoreMode parse_doc_score_mode(std::string_view s);
std::string to_string(DocScoreMode m);

struct ReaderConfig {
    std::size_t emb_dim = 256;
    std::size_t hidden = 32;
    std::size_t layers = 3;
    std::size_t prompt_bases = 4;
    std::size_t gate_enc_dim = 8;
    std::size_t gate_hidden = 16;

    double T0 = 0.1;        // soft-address temperature
    double eta = 0.5;       // activation exponent
    double eps_p = 1e-6;    // activation floor
    double delta = 0.1;     // gate bound
    double T_p = 1.0;       // prompt-mixture temperature
    double T_s = 1.0;       // selector temperature
    double lambda_s = 0.3;  // selector fusion weight
    double tau_pi = 0.5;    // subgraph threshold
    double beta_sch = 0.5;  // schema-channel mixing
    std::size_t K_e = 20;
    std::size_t C_e = 4096;
    bool use_alignment = false;
    double align_dropout = 0.0;
    bool init_entities_weight = false;
    DocScoreMode doc_mode = DocScoreMode::Raw;
    std::uint64_t seed = 7;

    void validate() const;
};

nlohmann::json config_to_json(const ReaderConfig& c);
// Overlays keys from j onto base; unknown keys are rejected.
ReaderConfig config_from_json(const nlohmann::json& j, ReaderConfig base = {});

// Two-layer tanh MLP: W2 tanh(W1 x + b1) + b2.
struct Mlp2 {
    nn::Parameter w1, b1, w2, b2;
};

struct LayerParams {
    nn::Parameter W_m, b, slope, ln_gamma, ln_beta;
    Mlp2 enc_node, enc_pair, enc_graph;  // E_n, E_p, E_g
    Mlp2 gate;                           // MLP_g; final layer starts at zero
    nn::Parameter prompt_bases;          // [K, d]
    nn::Parameter prompt_logits;         // [K]
};

struct ReaderParams {
    ReaderConfig cfg;
    nn::Parameter lambda;    // [6] addressing weights
    nn::Parameter W_q, W_x;  // [d, emb]
    nn::Parameter p_f;       // [d] feature prompt
    nn::Parameter W_a, b_a, a_slope, a_ln_gamma, a_ln_beta;  // alignment layer
    std::vector<LayerParams> layers;
    nn::Parameter W_n, W_s;  // selector projections [d, d]
    nn::Parameter W_D;       // pretraining discriminator [d, d]
    nn::Parameter summary_mean, summary_std;  // buffers, [9] each
    nn::Parameter summary_fitted;             // buffer, [1]

    std::vector<nn::Parameter*> all();
    std::vector<const nn::Parameter*> all() const;
    std::vector<nn::Parameter*> trainable();

    SummaryNorm summary_norm() const;
    void set_summary_norm(const SummaryNorm& n);
};

ReaderParams init_reader_params(const ReaderConfig& cfg);

inline constexpr const char* kReaderFormat = "sage.reader";
inline constexpr int kReaderFormatVersion = 1;

nlohmann::json reader_to_json(const ReaderParams& p);
ReaderParams reader_from_json(const nlohmann::json& j);

}  // namespace sage

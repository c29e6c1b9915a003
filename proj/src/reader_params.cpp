#include "sage/reader_params.hpp"

#include <set>
#include <stdexcept>

#include "sage/optim.hpp"

namespace sage {

using nn::InitScheme;
using nn::Parameter;
using nn::Shape;
using nn::Tensor;

DocScoreMode parse_doc_score_mode(std::string_view s) {
    if (s == "raw") return DocScoreMode::Raw;
    if (s == "topk") return DocScoreMode::TopK;
    if (s == "idf") return DocScoreMode::Idf;
    if (s == "idf_topk") return DocScoreMode::IdfTopK;
    throw std::invalid_argument("unknown document scoring mode: " + std::string(s));
}

std::string to_string(DocScoreMode m) {
    switch (m) {
        case DocScoreMode::Raw: return "raw";
        case DocScoreMode::TopK: return "topk";
        case DocScoreMode::Idf: return "idf";
        case DocScoreMode::IdfTopK: return "idf_topk";
    }
    return "raw";
}

void ReaderConfig::validate() const {
    auto req = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("reader config: ") + what);
    };
    req(emb_dim > 0 && hidden > 0 && layers > 0, "dimensions must be positive");
    req(prompt_bases >= 1, "prompt_bases must be >= 1");
    req(gate_enc_dim > 0 && gate_hidden > 0, "gate dimensions must be positive");
    req(T0 > 0 && T_p > 0 && T_s > 0, "temperatures must be positive");
    req(eta >= 0 && eta <= 1, "eta must lie in [0,1]");
    req(eps_p > 0, "eps_p must be positive");
    req(delta > 0, "delta must be positive");
    req(K_e >= 1 && C_e >= 1, "K_e and C_e must be >= 1");
    req(align_dropout >= 0 && align_dropout < 1, "align_dropout must lie in [0,1)");
}

nlohmann::json config_to_json(const ReaderConfig& c) {
    return {{"emb_dim", c.emb_dim},       {"hidden", c.hidden},
            {"layers", c.layers},         {"prompt_bases", c.prompt_bases},
            {"gate_enc_dim", c.gate_enc_dim}, {"gate_hidden", c.gate_hidden},
            {"T0", c.T0},                 {"eta", c.eta},
            {"eps_p", c.eps_p},           {"delta", c.delta},
            {"T_p", c.T_p},               {"T_s", c.T_s},
            {"lambda_s", c.lambda_s},     {"tau_pi", c.tau_pi},
            {"beta_sch", c.beta_sch},     {"K_e", c.K_e},
            {"C_e", c.C_e},               {"use_alignment", c.use_alignment},
            {"align_dropout", c.align_dropout}, {"init_entities_weight", c.init_entities_weight},
            {"doc_mode", to_string(c.doc_mode)}, {"seed", c.seed}};
}

ReaderConfig config_from_json(const nlohmann::json& j, ReaderConfig c) {
    if (!j.is_object()) throw std::invalid_argument("reader config must be an object");
    auto known = config_to_json(c);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw std::invalid_argument("unknown reader config key: " + it.key());
    }
    auto get = [&](const char* k, auto& dst) {
        if (j.contains(k)) dst = j.at(k).get<std::remove_reference_t<decltype(dst)>>();
    };
    get("emb_dim", c.emb_dim);
    get("hidden", c.hidden);
    get("layers", c.layers);
    get("prompt_bases", c.prompt_bases);
    get("gate_enc_dim", c.gate_enc_dim);
    get("gate_hidden", c.gate_hidden);
    get("T0", c.T0);
    get("eta", c.eta);
    get("eps_p", c.eps_p);
    get("delta", c.delta);
    get("T_p", c.T_p);
    get("T_s", c.T_s);
    get("lambda_s", c.lambda_s);
    get("tau_pi", c.tau_pi);
    get("beta_sch", c.beta_sch);
    get("K_e", c.K_e);
    get("C_e", c.C_e);
    get("use_alignment", c.use_alignment);
    get("align_dropout", c.align_dropout);
    get("init_entities_weight", c.init_entities_weight);
    if (j.contains("doc_mode")) c.doc_mode = parse_doc_score_mode(j.at("doc_mode").get<std::string>());
    get("seed", c.seed);
    c.validate();
    return c;
}

namespace {

struct Initializer {
    std::uint64_t seed;
    std::uint64_t stream = 0;

    Parameter make(const std::string& name, Shape shape, InitScheme scheme, double gain = 1.0) {
        return Parameter(name, nn::seeded_init(shape, scheme, nn::derive_seed(seed, ++stream), gain));
    }
    Mlp2 mlp(const std::string& name, std::size_t in, std::size_t hid, std::size_t out, bool zero_last) {
        Mlp2 m;
        m.w1 = make(name + ".w1", {hid, in}, InitScheme::UniformFanIn);
        m.b1 = make(name + ".b1", {hid}, InitScheme::Zeros);
        m.w2 = make(name + ".w2", {out, hid}, zero_last ? InitScheme::Zeros : InitScheme::UniformFanIn);
        m.b2 = make(name + ".b2", {out}, InitScheme::Zeros);
        return m;
    }
};

void push_mlp(std::vector<Parameter*>& v, Mlp2& m) {
    v.insert(v.end(), {&m.w1, &m.b1, &m.w2, &m.b2});
}

}  // namespace

ReaderParams init_reader_params(const ReaderConfig& cfg) {
    cfg.validate();
    ReaderParams p;
    p.cfg = cfg;
    Initializer in{cfg.seed};
    std::size_t d = cfg.hidden, e = cfg.emb_dim;
    p.lambda = in.make("lambda", {6}, InitScheme::Ones);
    p.W_q = in.make("W_q", {d, e}, InitScheme::UniformFanIn);
    p.W_x = in.make("W_x", {d, e}, InitScheme::UniformFanIn);
    p.p_f = in.make("p_f", {d}, InitScheme::Ones);
    p.W_a = in.make("align.W_a", {d, d}, InitScheme::Identity);
    p.b_a = in.make("align.b_a", {d}, InitScheme::Zeros);
    p.a_slope = Parameter("align.slope", Tensor(Shape{1}, 0.25));
    p.a_ln_gamma = in.make("align.ln_gamma", {d}, InitScheme::Ones);
    p.a_ln_beta = in.make("align.ln_beta", {d}, InitScheme::Zeros);
    std::size_t g_in = 4 * cfg.gate_enc_dim;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::string pre = "layer" + std::to_string(l + 1) + ".";
        LayerParams lp;
        lp.W_m = in.make(pre + "W_m", {d, d}, InitScheme::UniformFanIn);
        lp.b = in.make(pre + "b", {d}, InitScheme::Zeros);
        lp.slope = Parameter(pre + "slope", Tensor(Shape{1}, 0.25));
        lp.ln_gamma = in.make(pre + "ln_gamma", {d}, InitScheme::Ones);
        lp.ln_beta = in.make(pre + "ln_beta", {d}, InitScheme::Zeros);
        lp.enc_node = in.mlp(pre + "E_n", kNodeFeatDim, cfg.gate_enc_dim, cfg.gate_enc_dim, false);
        lp.enc_pair = in.mlp(pre + "E_p", kEdgeFeatDim, cfg.gate_enc_dim, cfg.gate_enc_dim, false);
        lp.enc_graph = in.mlp(pre + "E_g", kSummaryDim, cfg.gate_enc_dim, cfg.gate_enc_dim, false);
        lp.gate = in.mlp(pre + "gate", g_in, cfg.gate_hidden, d, true);
        lp.prompt_bases = in.make(pre + "prompt_bases", {cfg.prompt_bases, d}, InitScheme::UniformFanIn, 0.1);
        lp.prompt_logits = in.make(pre + "prompt_logits", {cfg.prompt_bases}, InitScheme::Zeros);
        p.layers.push_back(std::move(lp));
    }
    p.W_n = in.make("selector.W_n", {d, d}, InitScheme::UniformFanIn);
    p.W_s = in.make("selector.W_s", {d, d}, InitScheme::UniformFanIn);
    p.W_D = in.make("W_D", {d, d}, InitScheme::UniformFanIn);
    p.summary_mean = Parameter("buffer.summary_mean", Tensor(Shape{kSummaryDim}), false);
    p.summary_std = Parameter("buffer.summary_std", Tensor(Shape{kSummaryDim}), false);
    p.summary_fitted = Parameter("buffer.summary_fitted", Tensor(Shape{1}), false);
    return p;
}

std::vector<Parameter*> ReaderParams::all() {
    std::vector<Parameter*> v = {&lambda, &W_q, &W_x, &p_f, &W_a, &b_a, &a_slope, &a_ln_gamma, &a_ln_beta};
    for (auto& lp : layers) {
        v.insert(v.end(), {&lp.W_m, &lp.b, &lp.slope, &lp.ln_gamma, &lp.ln_beta});
        push_mlp(v, lp.enc_node);
        push_mlp(v, lp.enc_pair);
        push_mlp(v, lp.enc_graph);
        push_mlp(v, lp.gate);
        v.insert(v.end(), {&lp.prompt_bases, &lp.prompt_logits});
    }
    v.insert(v.end(), {&W_n, &W_s, &W_D, &summary_mean, &summary_std, &summary_fitted});
    return v;
}

std::vector<const Parameter*> ReaderParams::all() const {
    auto v = const_cast<ReaderParams*>(this)->all();
    return {v.begin(), v.end()};
}

std::vector<Parameter*> ReaderParams::trainable() {
    std::vector<Parameter*> out;
    for (auto* p : all()) {
        if (!p->trainable) continue;
        // alignment parameters only train when the layer is in use
        if (!cfg.use_alignment && p->name.rfind("align.", 0) == 0) continue;
        out.push_back(p);
    }
    return out;
}

SummaryNorm ReaderParams::summary_norm() const {
    SummaryNorm n;
    n.fitted = summary_fitted.value[0] != 0.0;
    for (std::size_t k = 0; k < kSummaryDim; ++k) {
        n.mean[k] = summary_mean.value[k];
        n.std[k] = summary_std.value[k];
    }
    return n;
}

void ReaderParams::set_summary_norm(const SummaryNorm& n) {
    for (std::size_t k = 0; k < kSummaryDim; ++k) {
        summary_mean.value[k] = n.mean[k];
        summary_std.value[k] = n.std[k];
    }
    summary_fitted.value[0] = n.fitted ? 1.0 : 0.0;
}

nlohmann::json reader_to_json(const ReaderParams& p) {
    return {{"format", kReaderFormat},
            {"version", kReaderFormatVersion},
            {"config", config_to_json(p.cfg)},
            {"params", nn::params_to_json(p.all())}};
}

ReaderParams reader_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kReaderFormat) throw std::runtime_error("not a reader checkpoint");
    if (j.value("version", 0) != kReaderFormatVersion) throw std::runtime_error("unsupported reader checkpoint version");
    ReaderParams p = init_reader_params(config_from_json(j.at("config")));
    nn::params_from_json(j.at("params"), p.all());
    return p;
}

}  // namespace sage

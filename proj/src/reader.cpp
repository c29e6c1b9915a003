#include "sage/reader.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "sage/text.hpp"

namespace sage {

using nn::Shape;
using nn::Tensor;
using nn::Var;

PropagationGraph make_propagation_graph(const StructuralGraph& sg, const NormalizedFeatures& f) {
    PropagationGraph pg;
    pg.n = sg.n;
    std::vector<double> dt(sg.n);
    for (std::size_t v = 0; v < sg.n; ++v) dt[v] = static_cast<double>(sg.degree(v)) + 1.0;
    pg.self_eta.resize(sg.n);
    for (std::size_t v = 0; v < sg.n; ++v) pg.self_eta[v] = 1.0 / dt[v];
    for (std::size_t i = 0; i < sg.edges.size(); ++i) {
        auto [u, v] = sg.edges[i];
        double eta = 1.0 / std::sqrt(dt[u] * dt[v]);
        pg.src.push_back(u);
        pg.dst.push_back(v);
        pg.pair_row.push_back(i);
        pg.eta.push_back(eta);
        pg.src.push_back(v);
        pg.dst.push_back(u);
        pg.pair_row.push_back(i);
        pg.eta.push_back(eta);
    }
    pg.node_feat = f.node;
    pg.edge_feat = f.edge;
    pg.summary = f.summary;
    if (pg.node_feat.numel() == 0) pg.node_feat = Tensor(Shape{sg.n, kNodeFeatDim});
    if (pg.edge_feat.numel() == 0) pg.edge_feat = Tensor(Shape{sg.edges.size(), kEdgeFeatDim});
    return pg;
}

std::string entity_description(const GraphMemory& g, std::size_t e) {
    std::string d = g.entity_name(e);
    for (auto r : g.incident_relations(e)) d += " " + g.relation_names()[r];
    return d;
}

PreparedGraph prepare_graph(const GraphMemory& g, const TextEmbedder& emb, const SummaryNorm& norm) {
    PreparedGraph pg;
    pg.graph = g;
    pg.sg = binarized_structural_graph(g);
    auto nodes = node_features(pg.sg);
    auto edges = edge_pair_features(pg.sg);
    pg.feats = graph_summary_and_normalize(pg.sg, nodes, edges, norm.fitted ? &norm : nullptr);
    pg.prop = make_propagation_graph(pg.sg, pg.feats);
    pg.M = entity_doc_matrix(g);
    pg.X = Tensor(Shape{g.num_entities(), emb.dim()});
    for (std::size_t e = 0; e < g.num_entities(); ++e) {
        auto v = emb.embed(entity_description(g, e));
        for (std::size_t k = 0; k < v.size(); ++k) pg.X.at(e, k) = v[k];
    }
    return pg;
}

const std::vector<std::string>& answer_type_keywords(std::string_view answer_type) {
    static const std::vector<std::string> person = {
        "presented", "founded", "founder", "directed", "director", "wrote", "written", "author",
        "married", "spouse", "wife", "husband", "son", "daughter", "father", "mother", "child",
        "member", "president", "leader", "played", "starred", "created", "hosted", "mentored",
        "coached", "employed", "chaired", "led"};
    static const std::vector<std::string> date = {"born", "died", "date", "year", "founded",
                                                  "released", "established", "opened", "started"};
    static const std::vector<std::string> place = {"located", "born", "city", "country", "capital",
                                                   "headquartered", "headquarters", "based", "lives",
                                                   "situated", "place", "town"};
    static const std::vector<std::string> none;
    if (answer_type == "person") return person;
    if (answer_type == "date") return date;
    if (answer_type == "place") return place;
    return none;
}

namespace {

double token_jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : a) inter += b.count(t);
    std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::string> query_spans(std::string_view question) {
    // Capitalised multi-word runs, excluding a sentence-initial question word.
    std::vector<std::string> spans;
    std::string span;
    std::string word;
    static const std::set<std::string> skip = {"which", "who", "whom", "whose", "what", "when",
                                               "where", "why", "how", "in", "on", "the", "a", "an",
                                               "is", "was", "did", "does"};
    auto end_word = [&](bool breaks) {
        if (!word.empty()) {
            bool cap = text::is_capitalized_word(word) && !skip.count(text::canonicalize(word));
            if (cap) {
                if (!span.empty()) span.push_back(' ');
                span += word;
            } else if (!span.empty()) {
                spans.push_back(span);
                span.clear();
            }
            word.clear();
        }
        if (breaks && !span.empty()) {
            spans.push_back(span);
            span.clear();
        }
    };
    for (char c : question) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-') word.push_back(c);
        else end_word(c != ' ');
    }
    end_word(true);
    return spans;
}

}  // namespace

Tensor entry_components(const QueryPlan& plan, std::string_view question, const PreparedGraph& pg,
                        const TextEmbedder& emb) {
    const GraphMemory& g = pg.graph;
    std::size_t n = g.num_entities();
    Tensor C(Shape{n, kEntryTerms});

    std::set<std::string> exact;
    for (const auto& e : plan.explicit_entities) exact.insert(text::canonicalize(e));
    std::set<std::string> alias;
    for (const auto& [k, vals] : plan.aliases)
        for (const auto& a : vals) alias.insert(text::canonicalize(a));

    std::vector<std::vector<double>> pq_emb;
    for (const auto& q : plan.pseudo_queries) pq_emb.push_back(emb.embed(q.text));

    const auto& kws = answer_type_keywords(plan.answer_type);
    std::set<std::string> kw(kws.begin(), kws.end());

    std::set<std::string> cons_tokens;
    for (const auto& [k, v] : plan.hard_constraints)
        for (const auto& t : text::tokenize(v)) cons_tokens.insert(t);

    std::vector<std::set<std::string>> spans;
    for (const auto& s : query_spans(question)) spans.push_back(text::token_set(s));

    for (std::size_t e = 0; e < n; ++e) {
        const std::string& name = g.entity_name(e);
        C.at(e, 0) = exact.count(name) ? 1.0 : 0.0;
        C.at(e, 1) = alias.count(name) ? 1.0 : 0.0;
        if (!pq_emb.empty()) {
            std::vector<double> x(pg.X.row(e).begin(), pg.X.row(e).end());
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& q : pq_emb) best = std::max(best, cosine(x, q));
            C.at(e, 2) = best;
        }
        if (!kw.empty()) {
            bool hit = false;
            for (auto r : g.incident_relations(e)) {
                for (const auto& t : text::tokenize(g.relation_names()[r])) hit = hit || kw.count(t) > 0;
            }
            C.at(e, 3) = hit ? 1.0 : 0.0;
        }
        if (!cons_tokens.empty() && !pg.M.rows[e].empty()) {
            std::set<std::string> doc_tokens;
            for (auto d : pg.M.rows[e]) {
                const auto& ts = g.document(d).token_set;
                doc_tokens.insert(ts.begin(), ts.end());
            }
            bool all = std::all_of(cons_tokens.begin(), cons_tokens.end(),
                                   [&](const std::string& t) { return doc_tokens.count(t) > 0; });
            C.at(e, 4) = all ? 1.0 : 0.0;
        }
        auto name_toks = text::token_set(name);
        double link = 0.0;
        for (const auto& s : spans) link += token_jaccard(s, name_toks);
        C.at(e, 5) = link;
    }
    return C;
}

EntryScores entry_scores(const QueryPlan& plan, std::string_view question, const PreparedGraph& pg,
                         const TextEmbedder& emb, const std::vector<double>& lambda) {
    if (lambda.size() != kEntryTerms) throw std::invalid_argument("entry_scores: expected 6 weights");
    EntryScores out;
    out.components = entry_components(plan, question, pg, emb);
    std::size_t n = out.components.rows();
    if (out.components.rank() < 2) n = 0;
    out.total.assign(pg.graph.num_entities(), 0.0);
    for (std::size_t e = 0; e < n; ++e)
        for (std::size_t k = 0; k < kEntryTerms; ++k) out.total[e] += lambda[k] * out.components.at(e, k);
    return out;
}

std::vector<double> initial_activation(const std::vector<double>& scores, double T0) {
    if (!(T0 > 0.0)) throw std::invalid_argument("initial_activation: T0 must be > 0");
    std::vector<double> p(scores.size());
    if (scores.empty()) return p;
    double m = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p[i] = std::exp((scores[i] - m) / T0);
        z += p[i];
    }
    for (auto& x : p) x /= z;
    return p;
}

Var ParamBinder::operator()(nn::Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Var v = tape_.param(p);
    bound_.emplace(&p, v);
    return v;
}

Var mlp2(ParamBinder& bind, Mlp2& m, Var x) {
    Var h = nn::tanh(nn::linear(x, bind(m.w1), bind(m.b1)));
    return nn::linear(h, bind(m.w2), bind(m.b2));
}

Var propagate_layer(ParamBinder& bind, LayerParams& lp, const ReaderConfig& cfg, const PropagationGraph& pg,
                    Var H, std::size_t layer_index, bool gated, Var prompt, std::size_t chunk_size,
                    Tensor* gate_trace) {
    nn::Tape& t = bind.tape();
    std::size_t n = pg.n, d = cfg.hidden;
    if (H.value().rank() != 2 || H.value().rows() != n || H.value().cols() != d) {
        throw std::invalid_argument("propagate_layer: expected H of shape " + nn::shape_str({n, d}) + ", got " +
                                    nn::shape_str(H.value().shape()));
    }
    Var Hin = prompt.valid() ? nn::add_row(H, prompt) : H;
    Var WH = nn::linear(Hin, bind(lp.W_m));

    Tensor self_coef(Shape{n, d});
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t c = 0; c < d; ++c) self_coef.at(v, c) = pg.self_eta[v];
    Var agg = nn::mul_const(WH, self_coef);

    std::size_t me = pg.num_directed();
    Var node_enc, pair_enc, graph_enc;
    if (gated && me > 0) {
        node_enc = mlp2(bind, lp.enc_node, t.constant(pg.node_feat));
        pair_enc = mlp2(bind, lp.enc_pair, t.constant(pg.edge_feat));
        graph_enc = mlp2(bind, lp.enc_graph, t.constant(pg.summary));
    }
    if (gate_trace != nullptr) *gate_trace = Tensor(Shape{me, d}, 1.0);
    for (auto [b, e] : chunk_ranges(me, chunk_size)) {
        std::size_t c = e - b;
        std::span<const std::size_t> src(pg.src.data() + b, c);
        std::span<const std::size_t> dst(pg.dst.data() + b, c);
        Var msg = nn::gather_rows(WH, src);
        if (gated) {
            std::span<const std::size_t> rows(pg.pair_row.data() + b, c);
            Var ctx = nn::concat_cols({nn::gather_rows(node_enc, src), nn::gather_rows(node_enc, dst),
                                       nn::gather_rows(pair_enc, rows), nn::broadcast_rows(graph_enc, c)});
            Var g = nn::add_scalar(nn::scale(nn::tanh(mlp2(bind, lp.gate, ctx)), cfg.delta), 1.0);
            if (gate_trace != nullptr) {
                const Tensor& gv = g.value();
                for (std::size_t i = 0; i < c; ++i)
                    for (std::size_t k = 0; k < d; ++k) gate_trace->at(b + i, k) = gv.at(i, k);
            }
            msg = nn::mul(msg, g);
        }
        Tensor coef(Shape{c, d});
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t k = 0; k < d; ++k) coef.at(i, k) = pg.eta[b + i];
        msg = nn::mul_const(msg, coef);
        agg = nn::add(agg, nn::scatter_add_rows(msg, dst, n));
    }
    Var upd = nn::prelu(nn::add_row(agg, bind(lp.b)), bind(lp.slope));
    Var out = nn::layer_norm(nn::add(Hin, upd), bind(lp.ln_gamma), bind(lp.ln_beta));
    if (layer_index > 0) out = nn::add(out, H);
    return out;
}

Var encode_channel(ParamBinder& bind, ReaderParams& params, const PropagationGraph& pg, Var H, bool gated,
                   bool with_prompts, std::size_t chunk_size, std::vector<Tensor>* traces) {
    const ReaderConfig& cfg = params.cfg;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        LayerParams& lp = params.layers[l];
        Var prompt;
        if (with_prompts) {
            Var w = nn::softmax(nn::scale(bind(lp.prompt_logits), 1.0 / cfg.T_p));
            Var P = nn::matmul(nn::reshape(w, Shape{1, cfg.prompt_bases}), bind(lp.prompt_bases));
            prompt = nn::reshape(P, Shape{cfg.hidden});
        }
        Tensor trace;
        H = propagate_layer(bind, lp, cfg, pg, H, l, gated, prompt, chunk_size, traces ? &trace : nullptr);
        if (traces) traces->push_back(std::move(trace));
    }
    return H;
}

ReaderForward reader_forward(ParamBinder& bind, ReaderParams& params, const PreparedGraph& pg,
                             const QueryInputs& in, const ForwardOptions& opt) {
    nn::Tape& t = bind.tape();
    const ReaderConfig& cfg = params.cfg;
    std::size_t n = pg.graph.num_entities();
    if (n == 0) throw std::invalid_argument("reader_forward: empty graph");
    if (in.components.rows() != n || in.components.cols() != kEntryTerms) {
        throw std::invalid_argument("reader_forward: component matrix has shape " +
                                    nn::shape_str(in.components.shape()));
    }
    if (in.q_emb.size() != cfg.emb_dim) throw std::invalid_argument("reader_forward: query embedding width mismatch");
    std::size_t chunk = opt.chunk_size ? opt.chunk_size : cfg.C_e;

    ReaderForward f;
    f.s = nn::rowdot(t.constant(in.components), bind(params.lambda));
    f.p0 = nn::softmax(nn::scale(f.s, 1.0 / cfg.T0));
    Var act = nn::pow_const(nn::add_scalar(f.p0, cfg.eps_p), cfg.eta);
    f.z = nn::linear(t.constant(Tensor::vector(in.q_emb)), bind(params.W_q));
    Var XW = nn::linear(t.constant(pg.X), bind(params.W_x));
    f.H0 = nn::add(nn::matmul(nn::reshape(act, Shape{n, 1}), nn::reshape(f.z, Shape{1, cfg.hidden})), XW);

    Var Hin = f.H0;
    if (cfg.use_alignment) {
        Var A = nn::prelu(nn::linear(Hin, bind(params.W_a), bind(params.b_a)), bind(params.a_slope));
        A = nn::layer_norm(A, bind(params.a_ln_gamma), bind(params.a_ln_beta));
        if (opt.training && opt.rng != nullptr) A = nn::dropout(A, cfg.align_dropout, *opt.rng);
        Hin = A;
    }
    Hin = nn::mul_row(Hin, bind(params.p_f));

    f.H_ctx = encode_channel(bind, params, pg.prop, Hin, true, false, chunk, opt.record_gates ? &f.gates : nullptr);
    if (cfg.beta_sch != 0.0) {
        f.H_sch = encode_channel(bind, params, pg.prop, Hin, false, true, chunk, nullptr);
        f.has_schema = true;
        f.H = nn::add(f.H_ctx, nn::scale(f.H_sch, cfg.beta_sch));
    } else {
        f.H = f.H_ctx;
    }

    f.a = nn::rowdot(f.H, f.z);
    if (opt.init_entities_weight) {
        Tensor w(Shape{n});
        for (std::size_t e = 0; e < n; ++e) w[e] = 1.0 / std::max(1.0, pg.M.freq[e]);
        f.a = nn::mul_const(f.a, w);
    }
    Var hn = nn::linear(f.H, bind(params.W_n));
    Var zs = nn::linear(f.z, bind(params.W_s));
    f.zeta = nn::scale(nn::rowdot(hn, zs), 1.0 / cfg.T_s);
    f.pi = nn::sigmoid(f.zeta);
    f.a_final = nn::add(f.a, nn::scale(f.zeta, cfg.lambda_s));
    return f;
}

std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isfinite(scores[i])) idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    if (idx.size() > k) idx.resize(k);
    return idx;
}

std::vector<double> document_scores(const std::vector<double>& a_final, const EntityDocMatrix& M,
                                    DocScoreMode mode, std::size_t K_e) {
    if (a_final.size() != M.n_entities) throw std::invalid_argument("document_scores: entity count mismatch");
    bool topk = mode == DocScoreMode::TopK || mode == DocScoreMode::IdfTopK;
    bool idf = mode == DocScoreMode::Idf || mode == DocScoreMode::IdfTopK;
    if (topk && K_e == 0) throw std::invalid_argument("document_scores: K_e must be >= 1");
    std::vector<double> s = a_final;
    if (topk) {
        std::vector<double> keep(s.size(), 0.0);
        std::vector<std::size_t> order(s.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
        for (std::size_t i = 0; i < std::min(K_e, order.size()); ++i) keep[order[i]] = 1.0;
        for (std::size_t i = 0; i < s.size(); ++i) s[i] *= keep[i];
    }
    if (idf) {
        for (std::size_t i = 0; i < s.size(); ++i) s[i] *= M.weight[i];
    }
    std::vector<double> out(M.n_docs, 0.0);
    for (std::size_t d = 0; d < M.n_docs; ++d) {
        if (M.cols[d].empty()) {
            out[d] = -std::numeric_limits<double>::infinity();
            continue;
        }
        for (auto e : M.cols[d]) out[d] += s[e];
    }
    return out;
}

RetrievalOptions retrieval_options_from(const ReaderConfig& cfg, std::size_t k) {
    RetrievalOptions o;
    o.k = k;
    o.mode = cfg.doc_mode;
    o.K_e = cfg.K_e;
    o.chunk_size = cfg.C_e;
    o.init_entities_weight = cfg.init_entities_weight;
    return o;
}

namespace {

std::vector<std::vector<std::size_t>> gate_paths(const PreparedGraph& pg, const std::vector<Tensor>& gates,
                                                 const std::vector<char>& start, const std::vector<char>& in_sub,
                                                 std::size_t max_len, std::size_t beam) {
    const auto& prop = pg.prop;
    // mean gate value per directed edge over layers and dims
    std::vector<double> w(prop.num_directed(), 1.0);
    if (!gates.empty()) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            double s = 0.0;
            std::size_t cnt = 0;
            for (const auto& g : gates) {
                for (std::size_t k = 0; k < g.cols(); ++k) s += g.at(i, k);
                cnt += g.cols();
            }
            w[i] = cnt ? s / static_cast<double>(cnt) : 1.0;
        }
    }
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> out_edges(prop.n);
    for (std::size_t i = 0; i < prop.num_directed(); ++i) out_edges[prop.src[i]].push_back({prop.dst[i], i});

    struct Path {
        std::vector<std::size_t> nodes;
        double score;
    };
    std::vector<Path> frontier;
    for (std::size_t v = 0; v < prop.n; ++v)
        if (start[v]) frontier.push_back({{v}, 0.0});
    std::vector<Path> done;
    for (std::size_t step = 0; step < max_len && !frontier.empty(); ++step) {
        std::vector<Path> next;
        for (const auto& p : frontier) {
            for (auto [v, ei] : out_edges[p.nodes.back()]) {
                if (!in_sub[v]) continue;
                if (std::find(p.nodes.begin(), p.nodes.end(), v) != p.nodes.end()) continue;
                Path q = p;
                q.nodes.push_back(v);
                q.score += w[ei];
                next.push_back(std::move(q));
            }
        }
        std::stable_sort(next.begin(), next.end(), [](const Path& a, const Path& b) { return a.score > b.score; });
        if (next.size() > beam) next.resize(beam);
        for (const auto& p : next) done.push_back(p);
        frontier = std::move(next);
    }
    std::stable_sort(done.begin(), done.end(), [](const Path& a, const Path& b) {
        if (a.nodes.size() != b.nodes.size()) return a.nodes.size() > b.nodes.size();
        return a.score > b.score;
    });
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < std::min(beam, done.size()); ++i) out.push_back(done[i].nodes);
    return out;
}

}  // namespace

RetrievalResult retrieve(std::string_view question, const PreparedGraph& pg, const QueryPlan& plan,
                         const TextEmbedder& emb, ReaderParams& params, const RetrievalOptions& opt) {
    if (opt.k == 0) throw std::invalid_argument("retrieve: k must be >= 1");
    RetrievalResult r;
    r.plan = plan;
    std::size_t n = pg.graph.num_entities();
    if (n == 0) {
        r.empty_graph = true;
        r.doc_scores.assign(pg.graph.num_documents(), -std::numeric_limits<double>::infinity());
        return r;
    }
    QueryInputs in;
    in.components = entry_components(plan, question, pg, emb);

    ForwardOptions fo;
    fo.chunk_size = opt.chunk_size;
    fo.record_gates = true;
    fo.init_entities_weight = opt.init_entities_weight;

    // main query
    std::vector<double> fused;
    {
        nn::Tape tape;
        ParamBinder bind(tape);
        in.q_emb = emb.embed(question);
        auto f = reader_forward(bind, params, pg, in, fo);
        r.a = f.a.value().values();
        r.a_final = f.a_final.value().values();
        r.pi = f.pi.value().values();
        r.gates = std::move(f.gates);
        fused = document_scores(r.a_final, pg.M, opt.mode, opt.K_e);
    }
    if (opt.use_pseudo_queries) {
        fo.record_gates = false;
        for (const auto& pq : plan.pseudo_queries) {
            if (pq.confidence == 0.0) continue;
            nn::Tape tape;
            ParamBinder bind(tape);
            in.q_emb = emb.embed(pq.text);
            auto f = reader_forward(bind, params, pg, in, fo);
            auto s = document_scores(f.a_final.value().values(), pg.M, opt.mode, opt.K_e);
            for (std::size_t d = 0; d < fused.size(); ++d) fused[d] += pq.confidence * s[d];
        }
    }
    r.doc_scores = fused;
    r.top_docs = top_k_indices(fused, opt.k);

    std::vector<char> in_sub(n, 0);
    for (std::size_t e = 0; e < n; ++e) {
        if (r.pi[e] > params.cfg.tau_pi) {
            in_sub[e] = 1;
            r.subgraph_nodes.push_back(e);
        }
    }
    for (const auto& [u, v] : pg.sg.edges) {
        if (in_sub[u] && in_sub[v]) r.subgraph_edges.emplace_back(u, v);
    }
    auto mask = query_entity_mask(pg.graph, question, opt.seed_budget);
    r.paths = gate_paths(pg, r.gates, mask.mask, in_sub, params.cfg.layers, 4);
    if (!opt.record_gates) r.gates.clear();
    return r;
}

RetrievalResult retrieve(std::string_view question, const PreparedGraph& pg, LLMClient* client,
                         const TextEmbedder& emb, ReaderParams& params, const RetrievalOptions& opt) {
    QueryPlan plan = client ? plan_llm(question, *client, kDefaultPseudoQueries, 3, &pg.graph).plan
                            : plan_deterministic(question, &pg.graph, kDefaultPseudoQueries);
    return retrieve(question, pg, plan, emb, params, opt);
}

nlohmann::json retrieval_report(std::string_view question, const PreparedGraph& pg, const RetrievalResult& r) {
    using nlohmann::json;
    const GraphMemory& g = pg.graph;
    json docs = json::array();
    for (auto d : r.top_docs) docs.push_back({{"id", g.document(d).id}, {"score", r.doc_scores[d]}});
    std::vector<std::size_t> ents = top_k_indices(r.a_final, 20);
    json ej = json::array();
    for (auto e : ents) {
        ej.push_back({{"entity", g.entity_name(e)}, {"score", r.a_final[e]}, {"pi", r.pi[e]}});
    }
    json edges = json::array();
    for (auto [u, v] : r.subgraph_edges) edges.push_back({g.entity_name(u), g.entity_name(v)});
    json paths = json::array();
    for (const auto& p : r.paths) {
        json pj = json::array();
        for (auto v : p) pj.push_back(g.entity_name(v));
        paths.push_back(pj);
    }
    json out = {{"query", std::string(question)},
                {"plan", plan_to_json(r.plan)},
                {"top_docs", docs},
                {"top_entities", ej},
                {"subgraph_edges", edges},
                {"paths", paths},
                {"empty_graph", r.empty_graph}};
    if (!r.gates.empty()) {
        json gj = json::array();
        for (const auto& gt : r.gates) {
            json layer = json::array();
            for (std::size_t i = 0; i < gt.rows() && gt.rank() == 2; ++i) {
                double s = 0.0;
                for (std::size_t k = 0; k < gt.cols(); ++k) s += gt.at(i, k);
                layer.push_back({{"src", g.entity_name(pg.prop.src[i])},
                                 {"dst", g.entity_name(pg.prop.dst[i])},
                                 {"mean_gate", s / static_cast<double>(gt.cols())}});
            }
            gj.push_back(layer);
        }
        out["gate_traces"] = gj;
    }
    return out;
}

}  // namespace sage

#include "sage/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <stdexcept>

#include "sage/metrics.hpp"
#include "sage/text.hpp"

namespace sage {

using nn::Shape;
using nn::Tensor;
using nn::Var;

std::string to_string(AugOp op) {
    switch (op) {
        case AugOp::EdgePerturb: return "edge_perturb";
        case AugOp::FeatureMask: return "feature_mask";
        case AugOp::NodeDrop: return "node_drop";
        case AugOp::Subgraph: return "subgraph";
    }
    return "edge_perturb";
}

namespace {

void check_rate(double r, const char* what) {
    if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument(std::string("augmentation rate out of [0,1): ") + what);
}

std::size_t rate_count(double rate, std::size_t total) {
    return static_cast<std::size_t>(std::floor(rate * static_cast<double>(total) + 0.5));
}

GraphView induced_view(const GraphView& base, const std::vector<std::size_t>& keep_sorted, const SummaryNorm* norm) {
    std::vector<std::size_t> remap(base.sg.n, SIZE_MAX);
    for (std::size_t i = 0; i < keep_sorted.size(); ++i) remap[keep_sorted[i]] = i;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (auto [u, v] : base.sg.edges) {
        if (remap[u] != SIZE_MAX && remap[v] != SIZE_MAX) pairs.emplace_back(remap[u], remap[v]);
    }
    Tensor X(Shape{keep_sorted.size(), base.X.cols()});
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < keep_sorted.size(); ++i) {
        auto src = base.X.row(keep_sorted[i]);
        std::copy(src.begin(), src.end(), X.row(i).begin());
        ids.push_back(base.node_ids[keep_sorted[i]]);
    }
    return make_view(structural_graph_from_pairs(keep_sorted.size(), pairs), std::move(X), std::move(ids), norm);
}

}  // namespace

GraphView make_view(StructuralGraph sg, Tensor X, std::vector<std::size_t> node_ids, const SummaryNorm* norm) {
    if (X.rows() != sg.n && sg.n > 0) throw std::invalid_argument("make_view: feature rows do not match nodes");
    GraphView v;
    v.sg = std::move(sg);
    v.X = std::move(X);
    v.node_ids = std::move(node_ids);
    auto nodes = node_features(v.sg);
    auto edges = edge_pair_features(v.sg);
    v.prop = make_propagation_graph(v.sg, graph_summary_and_normalize(v.sg, nodes, edges, norm));
    return v;
}

GraphView augment_view(const GraphView& base, AugOp op, const AugmentRates& rates, nn::Rng& rng,
                       const SummaryNorm* norm) {
    check_rate(rates.edge, "edge");
    check_rate(rates.feature, "feature");
    check_rate(rates.node, "node");
    std::size_t n = base.sg.n;
    switch (op) {
        case AugOp::EdgePerturb: {
            std::size_t m = base.sg.edges.size();
            std::size_t k = rate_count(rates.edge, m);
            if (k == 0) return base;
            std::vector<std::size_t> order(m);
            for (std::size_t i = 0; i < m; ++i) order[i] = i;
            rng.shuffle(order);
            std::set<std::pair<std::size_t, std::size_t>> kept;
            for (std::size_t i = k; i < m; ++i) kept.insert(base.sg.edges[order[i]]);
            std::set<std::pair<std::size_t, std::size_t>> existing(base.sg.edges.begin(), base.sg.edges.end());
            std::size_t added = 0;
            std::size_t max_pairs = n * (n - 1) / 2;
            for (std::size_t tries = 0; added < k && existing.size() + added < max_pairs && tries < 20 * k; ++tries) {
                std::size_t u = rng.index(n), v = rng.index(n);
                if (u == v) continue;
                auto e = std::minmax(u, v);
                std::pair<std::size_t, std::size_t> p{e.first, e.second};
                if (existing.count(p) || kept.count(p)) continue;
                kept.insert(p);
                ++added;
            }
            return make_view(structural_graph_from_pairs(n, {kept.begin(), kept.end()}), base.X, base.node_ids, norm);
        }
        case AugOp::FeatureMask: {
            std::size_t dims = base.X.cols();
            std::size_t k = rate_count(rates.feature, dims);
            if (k == 0) return base;
            std::vector<std::size_t> order(dims);
            for (std::size_t i = 0; i < dims; ++i) order[i] = i;
            rng.shuffle(order);
            GraphView v = base;
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t r = 0; r < v.X.rows(); ++r) v.X.at(r, order[i]) = 0.0;
            return v;
        }
        case AugOp::NodeDrop: {
            std::size_t k = std::min(rate_count(rates.node, n), n > 0 ? n - 1 : 0);
            if (k == 0) return base;
            std::vector<std::size_t> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = i;
            rng.shuffle(order);
            std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
            std::sort(keep.begin(), keep.end());
            return induced_view(base, keep, norm);
        }
        case AugOp::Subgraph: {
            std::size_t target = n - std::min(rate_count(rates.node, n), n > 0 ? n - 1 : 0);
            if (target == n) return base;
            // BFS ball from a random root, reseeding on exhausted components
            std::vector<char> seen(n, 0);
            std::vector<std::size_t> keep;
            std::deque<std::size_t> q;
            while (keep.size() < target) {
                if (q.empty()) {
                    std::size_t r = rng.index(n);
                    while (seen[r]) r = (r + 1) % n;
                    seen[r] = 1;
                    q.push_back(r);
                }
                std::size_t u = q.front();
                q.pop_front();
                keep.push_back(u);
                for (auto v : base.sg.adj[u]) {
                    if (!seen[v]) {
                        seen[v] = 1;
                        q.push_back(v);
                    }
                }
            }
            std::sort(keep.begin(), keep.end());
            return induced_view(base, keep, norm);
        }
    }
    return base;
}

GraphViews augment_views(const StructuralGraph& sg, const Tensor& X, std::array<AugOp, 2> ops,
                         const AugmentRates& rates, std::uint64_t seed, const SummaryNorm* norm) {
    nn::Rng rng(seed);
    GraphViews v;
    std::vector<std::size_t> ids(sg.n);
    for (std::size_t i = 0; i < sg.n; ++i) ids[i] = i;
    v.base = make_view(sg, X, ids, norm);
    v.ops = ops;
    v.view1 = augment_view(v.base, ops[0], rates, rng, norm);
    v.view2 = augment_view(v.base, ops[1], rates, rng, norm);
    std::vector<std::size_t> perm(sg.n);
    for (std::size_t i = 0; i < sg.n; ++i) perm[i] = i;
    rng.shuffle(perm);
    v.X_neg = Tensor(X.shape());
    for (std::size_t i = 0; i < sg.n; ++i) {
        auto src = X.row(perm[i]);
        std::copy(src.begin(), src.end(), v.X_neg.row(i).begin());
    }
    return v;
}

GraphViews augment_views(const StructuralGraph& sg, const Tensor& X, const AugmentRates& rates, std::uint64_t seed,
                         const SummaryNorm* norm) {
    nn::Rng pick(nn::derive_seed(seed, 1));
    std::array<AugOp, 2> ops{static_cast<AugOp>(pick.index(4)), static_cast<AugOp>(pick.index(4))};
    return augment_views(sg, X, ops, rates, nn::derive_seed(seed, 2), norm);
}

Var pretrain_encode(ParamBinder& bind, ReaderParams& params, const PropagationGraph& pg, const Tensor& X,
                    std::size_t chunk_size) {
    nn::Tape& t = bind.tape();
    std::size_t chunk = chunk_size ? chunk_size : params.cfg.C_e;
    Var H0 = nn::linear(t.constant(X), bind(params.W_x));
    Var H = encode_channel(bind, params, pg, H0, true, false, chunk, nullptr);
    if (params.cfg.beta_sch == 0.0) return H;
    Var S = encode_channel(bind, params, pg, H0, false, true, chunk, nullptr);
    return nn::add(H, nn::scale(S, params.cfg.beta_sch));
}

Var graphcl_pretrain_loss(ParamBinder& bind, ReaderParams& params, const GraphViews& views, std::size_t chunk_size) {
    Var H_pos = pretrain_encode(bind, params, views.base.prop, views.base.X, chunk_size);
    Var H_neg = pretrain_encode(bind, params, views.base.prop, views.X_neg, chunk_size);
    std::size_t n = views.base.sg.n;
    Tensor ones(Shape{n}, 1.0), zeros(Shape{n}, 0.0);
    Var WD = bind(params.W_D);
    Var total;
    for (const GraphView* v : {&views.view1, &views.view2}) {
        Var Hj = pretrain_encode(bind, params, v->prop, v->X, chunk_size);
        Var c = nn::sigmoid(nn::mean_rows(Hj));
        Var Wc = nn::linear(c, WD);  // W_D c
        Var lp = nn::mean(nn::bce_with_logits(nn::rowdot(H_pos, Wc), ones));
        Var ln = nn::mean(nn::bce_with_logits(nn::rowdot(H_neg, Wc), zeros));
        Var term = nn::add(lp, ln);
        total = total.valid() ? nn::add(total, term) : term;
    }
    return nn::scale(total, 0.5);
}

namespace {

std::vector<Tensor> snapshot(ReaderParams& p) {
    std::vector<Tensor> s;
    for (auto* q : p.all()) s.push_back(q->value);
    return s;
}

void restore(ReaderParams& p, const std::vector<Tensor>& s) {
    auto all = p.all();
    for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = s[i];
}

std::vector<nn::Parameter*> pretrain_parameters(ReaderParams& p) {
    std::vector<nn::Parameter*> out;
    for (auto* q : p.trainable()) {
        if (q->name == "lambda" || q->name == "W_q" || q->name == "p_f") continue;
        if (q->name.rfind("selector.", 0) == 0) continue;
        out.push_back(q);
    }
    return out;
}

}  // namespace

PretrainResult pretrain(ReaderParams& params, const std::vector<const PreparedGraph*>& graphs,
                        const PretrainConfig& cfg) {
    if (graphs.empty()) throw std::invalid_argument("pretrain: at least one graph required");
    PretrainResult res;
    nn::Adam opt(pretrain_parameters(params), cfg.adam);
    for (auto* p : params.all()) p->zero_grad();
    SummaryNorm norm = params.summary_norm();
    std::vector<Tensor> good = snapshot(params);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const PreparedGraph& g = *graphs[step % graphs.size()];
        if (g.sg.n == 0) continue;
        auto views = augment_views(g.sg, g.X, cfg.rates, nn::derive_seed(cfg.seed, step),
                                   norm.fitted ? &norm : nullptr);
        nn::Tape tape;
        ParamBinder bind(tape);
        Var loss = graphcl_pretrain_loss(bind, params, views);
        double lv = loss.value().item();
        if (!std::isfinite(lv)) {
            restore(params, good);
            res.diverged = true;
            break;
        }
        res.losses.push_back(lv);
        good = snapshot(params);
        tape.backward(loss);
        opt.step();
    }
    for (auto* p : params.all()) p->zero_grad();
    return res;
}

// ---- fine-tuning ----------------------------------------------------------

Var weighted_bce_loss(const std::vector<Var>& a, const std::vector<Tensor>& y, double T_a) {
    if (a.size() != y.size() || a.empty()) throw std::invalid_argument("weighted_bce_loss: batch mismatch");
    if (T_a < 0.0) throw std::invalid_argument("weighted_bce_loss: T_a must be >= 0");
    nn::Tape& t = *a[0].tape();
    Var total;
    for (std::size_t b = 0; b < a.size(); ++b) {
        const Tensor& yb = y[b];
        if (a[b].value().numel() != yb.numel()) throw std::invalid_argument("weighted_bce_loss: logits/targets mismatch");
        std::vector<std::size_t> pos, neg;
        for (std::size_t e = 0; e < yb.numel(); ++e) (yb[e] > 0.5 ? pos : neg).push_back(e);
        Var per = nn::bce_with_logits(nn::reshape(a[b], Shape{yb.numel()}), yb);
        Var num, wsum;
        if (!pos.empty()) {
            double w = 1.0 / static_cast<double>(pos.size());
            num = nn::scale(nn::sum(nn::gather_rows(per, pos)), w);
            wsum = t.constant(Tensor::scalar(1.0));
        }
        if (!neg.empty()) {
            Var wn;
            if (T_a > 0.0) {
                Var an = nn::gather_rows(nn::reshape(a[b], Shape{yb.numel()}), neg);
                wn = nn::softmax(nn::scale(an, 1.0 / T_a));
            } else {
                wn = t.constant(Tensor(Shape{neg.size()}, 1.0 / static_cast<double>(neg.size())));
            }
            Var nterm = nn::dot(wn, nn::gather_rows(per, neg));
            Var nw = nn::sum(wn);
            num = num.valid() ? nn::add(num, nterm) : nterm;
            wsum = wsum.valid() ? nn::add(wsum, nw) : nw;
        }
        if (!num.valid()) continue;
        Var lb = nn::mul(num, nn::pow_const(nn::add_scalar(wsum, kLossEps), -1.0));
        total = total.valid() ? nn::add(total, lb) : lb;
    }
    if (!total.valid()) return t.constant(Tensor::scalar(0.0));
    return nn::scale(total, 1.0 / static_cast<double>(a.size()));
}

Var multi_positive_list_loss(const std::vector<Var>& a, const std::vector<std::vector<std::size_t>>& positives,
                             bool* all_empty) {
    if (a.size() != positives.size() || a.empty()) throw std::invalid_argument("list loss: batch mismatch");
    nn::Tape& t = *a[0].tape();
    Var total;
    std::size_t used = 0;
    for (std::size_t b = 0; b < a.size(); ++b) {
        if (positives[b].empty()) continue;
        Var s = nn::sigmoid(nn::reshape(a[b], Shape{a[b].value().numel()}));
        Var inv = nn::pow_const(nn::add_scalar(nn::sum(s), kLossEps), -1.0);
        Var p = nn::mul_scalar(nn::gather_rows(s, positives[b]), inv);
        Var lb = nn::scale(nn::sum(nn::log(nn::add_scalar(p, kLossEps))),
                           -1.0 / static_cast<double>(positives[b].size()));
        total = total.valid() ? nn::add(total, lb) : lb;
        ++used;
    }
    if (all_empty) *all_empty = used == 0;
    if (used == 0) return t.constant(Tensor::scalar(0.0));
    return nn::scale(total, 1.0 / static_cast<double>(used));
}

SelectorTerms selector_regularizers(const std::vector<Var>& pi, const std::vector<Var>& H, const std::vector<Var>& z,
                                    const std::vector<const std::vector<std::pair<std::size_t, std::size_t>>*>& edges,
                                    double T_n) {
    std::size_t B = pi.size();
    if (B == 0 || H.size() != B || z.size() != B || edges.size() != B)
        throw std::invalid_argument("selector_regularizers: batch mismatch");
    if (!(T_n > 0.0)) throw std::invalid_argument("selector_regularizers: T_n must be > 0");
    nn::Tape& t = *pi[0].tape();
    std::size_t d = H[0].value().cols();
    SelectorTerms out;

    std::vector<Var> hbar(B), zq(B);
    Var size_sum, con_sum;
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t n = pi[b].value().numel();
        Var pr = nn::reshape(pi[b], Shape{n});
        Var pooled = nn::matmul(nn::reshape(pr, Shape{1, n}), H[b]);
        pooled = nn::mul_scalar(pooled, nn::pow_const(nn::add_scalar(nn::sum(pr), kLossEps), -1.0));
        hbar[b] = nn::normalize_rows(pooled);
        zq[b] = nn::normalize_rows(nn::reshape(z[b], Shape{1, d}));

        Var sz = nn::mean(pr);
        size_sum = size_sum.valid() ? nn::add(size_sum, sz) : sz;
        const auto& eb = *edges[b];
        if (!eb.empty()) {
            std::vector<std::size_t> us, vs;
            for (auto [u, v] : eb) {
                us.push_back(u);
                vs.push_back(v);
            }
            Var diff = nn::sub(nn::gather_rows(pr, us), nn::gather_rows(pr, vs));
            Var c = nn::mean(nn::square(diff));
            con_sum = con_sum.valid() ? nn::add(con_sum, c) : c;
        }
    }
    double inv_b = 1.0 / static_cast<double>(B);
    out.size = nn::scale(size_sum, inv_b);
    out.con = con_sum.valid() ? nn::scale(con_sum, inv_b) : t.constant(Tensor::scalar(0.0));

    if (B == 1) {
        out.nce = t.constant(Tensor::scalar(0.0));
        return out;
    }
    std::vector<Var> cols;
    for (std::size_t j = 0; j < B; ++j) cols.push_back(nn::reshape(zq[j], Shape{d, 1}));
    Var Z = nn::concat_cols(cols);  // [d, B]
    Var nce;
    for (std::size_t i = 0; i < B; ++i) {
        Var logits = nn::scale(nn::matmul(hbar[i], Z), 1.0 / T_n);
        Var ls = nn::reshape(nn::log_softmax(logits), Shape{B});
        std::vector<std::size_t> idx{i};
        Var li = nn::scale(nn::sum(nn::gather_rows(ls, idx)), -1.0);
        nce = nce.valid() ? nn::add(nce, li) : li;
    }
    out.nce = nn::scale(nce, inv_b);
    return out;
}

Var doc_level_loss(const std::vector<Var>& a, const std::vector<const EntityDocMatrix*>& M,
                   const std::vector<Tensor>& z, double T_a) {
    if (a.size() != M.size() || a.size() != z.size() || a.empty())
        throw std::invalid_argument("doc_level_loss: batch mismatch");
    nn::Tape& t = *a[0].tape();
    std::vector<Var> S;
    for (std::size_t b = 0; b < a.size(); ++b) {
        const EntityDocMatrix& m = *M[b];
        Tensor Mt(Shape{m.n_docs, m.n_entities});
        for (std::size_t e = 0; e < m.n_entities; ++e)
            for (auto d : m.rows[e]) Mt.at(d, e) = 1.0;
        Var s = nn::matmul(t.constant(Mt), nn::reshape(a[b], Shape{m.n_entities, 1}));
        S.push_back(nn::reshape(s, Shape{m.n_docs}));
    }
    return weighted_bce_loss(S, z, T_a);
}

FinetuneSample make_finetune_sample(std::string question, QueryPlan plan, const PreparedGraph* graph,
                                    const TextEmbedder& emb, const std::vector<std::string>& support_entities,
                                    const std::vector<std::string>& support_doc_ids) {
    if (graph == nullptr) throw std::invalid_argument("make_finetune_sample: null graph");
    FinetuneSample s;
    s.question = std::move(question);
    s.plan = std::move(plan);
    s.graph = graph;
    s.inputs.components = entry_components(s.plan, s.question, *graph, emb);
    s.inputs.q_emb = emb.embed(s.question);
    std::size_t n = graph->graph.num_entities();
    s.y = Tensor(Shape{n});
    for (const auto& name : support_entities) {
        if (auto e = graph->graph.find_entity(text::canonicalize(name))) {
            if (s.y[*e] == 0.0) s.positives.push_back(*e);
            s.y[*e] = 1.0;
        }
    }
    std::sort(s.positives.begin(), s.positives.end());
    s.z = Tensor(Shape{graph->graph.num_documents()});
    for (const auto& id : support_doc_ids) {
        if (auto d = graph->graph.find_document(id)) {
            s.z[*d] = 1.0;
            s.gold_docs.push_back(*d);
        }
    }
    return s;
}

nlohmann::json LossBreakdown::to_json() const {
    return {{"total", total}, {"bce", bce}, {"list", list}, {"nce", nce},
            {"size", size},   {"con", con}, {"doc", doc}};
}

Var finetune_loss(ParamBinder& bind, ReaderParams& params, const std::vector<const FinetuneSample*>& batch,
                  const LossWeights& w, const ForwardOptions& fo, LossBreakdown* out) {
    if (batch.empty()) throw std::invalid_argument("finetune_loss: empty batch");
    if (w.lambda_bce < 0 || w.lambda_list < 0) throw std::invalid_argument("finetune_loss: negative loss weight");
    std::vector<Var> logits, pis, Hs, zs;
    std::vector<Tensor> ys, zdocs;
    std::vector<std::vector<std::size_t>> pos;
    std::vector<const std::vector<std::pair<std::size_t, std::size_t>>*> edges;
    std::vector<const EntityDocMatrix*> Ms;
    for (const auto* s : batch) {
        if (s->graph->graph.num_entities() == 0) continue;
        auto f = reader_forward(bind, params, *s->graph, s->inputs, fo);
        logits.push_back(f.a_final);
        pis.push_back(f.pi);
        Hs.push_back(f.H);
        zs.push_back(f.z);
        ys.push_back(s->y);
        zdocs.push_back(s->z);
        pos.push_back(s->positives);
        edges.push_back(&s->graph->sg.edges);
        Ms.push_back(&s->graph->M);
    }
    nn::Tape& t = bind.tape();
    if (logits.empty()) return t.constant(Tensor::scalar(0.0));
    Var bce = weighted_bce_loss(logits, ys, w.T_a);
    Var list = multi_positive_list_loss(logits, pos);
    Var total = nn::add(nn::scale(bce, w.lambda_bce), nn::scale(list, w.lambda_list));
    LossBreakdown br;
    br.bce = bce.value().item();
    br.list = list.value().item();
    if (w.w_nce != 0.0 || w.w_size != 0.0 || w.w_con != 0.0) {
        auto sel = selector_regularizers(pis, Hs, zs, edges, w.T_n);
        total = nn::add(total, nn::scale(sel.nce, w.w_nce));
        total = nn::add(total, nn::scale(sel.size, w.w_size));
        total = nn::add(total, nn::scale(sel.con, w.w_con));
        br.nce = sel.nce.value().item();
        br.size = sel.size.value().item();
        br.con = sel.con.value().item();
    }
    if (w.w_doc != 0.0) {
        Var dl = doc_level_loss(logits, Ms, zdocs, w.T_a);
        total = nn::add(total, nn::scale(dl, w.w_doc));
        br.doc = dl.value().item();
    }
    br.total = total.value().item();
    if (out) *out = br;
    return total;
}

double heldout_recall(ReaderParams& params, const std::vector<FinetuneSample>& samples, const TextEmbedder& emb,
                      std::size_t k) {
    if (samples.empty()) return 0.0;
    MeanAccumulator acc;
    RetrievalOptions opt = retrieval_options_from(params.cfg, k);
    for (const auto& s : samples) {
        auto r = retrieve(s.question, *s.graph, s.plan, emb, params, opt);
        acc.add(recall_at_k(r.top_docs, s.gold_docs, k));
    }
    return acc.mean();
}

FinetuneResult finetune(ReaderParams& params, const std::vector<FinetuneSample>& train,
                        const std::vector<FinetuneSample>& heldout, const TextEmbedder& emb,
                        const FinetuneConfig& cfg, const MetricsSink& sink) {
    if (cfg.batch_size == 0) throw std::invalid_argument("finetune: batch_size must be >= 1");
    FinetuneResult res;
    if (train.empty() || cfg.epochs == 0) return res;
    std::vector<nn::Parameter*> trainable;
    for (auto* p : params.trainable()) {
        if (p->name != "W_D") trainable.push_back(p);
    }
    nn::Adam opt(trainable, cfg.adam);
    for (auto* p : params.all()) p->zero_grad();
    nn::Rng rng(cfg.seed);
    nn::Rng drop_rng(nn::derive_seed(cfg.seed, 99));

    double best = -1.0;
    std::vector<Tensor> best_params = snapshot(params);
    std::size_t since_best = 0;
    std::size_t step = 0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<Tensor> epoch_start = snapshot(params);
        rng.shuffle(order);
        LossBreakdown sum;
        std::size_t nb = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            std::vector<const FinetuneSample*> batch;
            for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) batch.push_back(&train[order[i]]);
            nn::Tape tape;
            ParamBinder bind(tape);
            ForwardOptions fo;
            fo.training = true;
            fo.rng = &drop_rng;
            LossBreakdown br;
            Var loss = finetune_loss(bind, params, batch, cfg.weights, fo, &br);
            if (!std::isfinite(br.total)) {
                restore(params, epoch_start);
                res.diverged = true;
                break;
            }
            tape.backward(loss);
            opt.step();
            sum.total += br.total;
            sum.bce += br.bce;
            sum.list += br.list;
            sum.nce += br.nce;
            sum.size += br.size;
            sum.con += br.con;
            sum.doc += br.doc;
            ++nb;
            if (sink) {
                nlohmann::json rec = {{"step", step}, {"epoch", epoch}, {"loss", br.to_json()}};
                sink(rec);
            }
            ++step;
        }
        if (res.diverged) break;
        double inv = nb ? 1.0 / static_cast<double>(nb) : 0.0;
        for (double* v : {&sum.total, &sum.bce, &sum.list, &sum.nce, &sum.size, &sum.con, &sum.doc}) *v *= inv;
        res.epoch_losses.push_back(sum);
        if (!heldout.empty()) {
            double rec = heldout_recall(params, heldout, emb, cfg.eval_k);
            res.heldout_recall.push_back(rec);
            if (sink) sink({{"epoch", epoch}, {"eval_recall", rec}, {"k", cfg.eval_k}});
            if (rec > best) {
                best = rec;
                best_params = snapshot(params);
                res.best_epoch = epoch;
                since_best = 0;
            } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
                res.early_stopped = true;
                break;
            }
        }
    }
    if (!heldout.empty() && best >= 0.0) restore(params, best_params);
    for (auto* p : params.all()) p->zero_grad();
    return res;
}

}  // namespace sage

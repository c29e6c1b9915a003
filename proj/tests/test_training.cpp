#include <doctest.h>

#include <cmath>
#include <deque>
#include <random>

#include "sage/optim.hpp"
#include "sage/synth.hpp"
#include "sage/training.hpp"
#include "test_util.hpp"

using namespace sage;
using nn::Tensor;
using nn::Var;

namespace {

double bce(double x, double y) { return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))); }
double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Double-loop weighted BCE.
double bce_oracle(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& y, double T_a) {
    double total = 0.0;
    for (std::size_t b = 0; b < a.size(); ++b) {
        double np = 0, num = 0, w = 0;
        for (double t : y[b]) np += t;
        std::vector<double> wn;
        double zmax = -INFINITY;
        for (std::size_t e = 0; e < a[b].size(); ++e)
            if (y[b][e] == 0.0) zmax = std::max(zmax, a[b][e]);
        double zsum = 0;
        for (std::size_t e = 0; e < a[b].size(); ++e)
            if (y[b][e] == 0.0) zsum += T_a > 0 ? std::exp((a[b][e] - zmax) / T_a) : 1.0;
        for (std::size_t e = 0; e < a[b].size(); ++e) {
            if (y[b][e] > 0.5) {
                num += bce(a[b][e], 1.0) / np;
                w += 1.0 / np;
            } else {
                double we = (T_a > 0 ? std::exp((a[b][e] - zmax) / T_a) : 1.0) / zsum;
                num += we * bce(a[b][e], 0.0);
                w += we;
            }
        }
        total += num / (w + kLossEps);
    }
    return total / static_cast<double>(a.size());
}

// Uniform-negative weights in the kernel's own evaluation order.
double uniform_bce_exact(const std::vector<double>& a, const std::vector<double>& y) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t e = 0; e < y.size(); ++e) (y[e] > 0.5 ? pos : neg).push_back(e);
    double psum = 0;
    for (auto e : pos) psum += bce(a[e], 1.0);
    double num = psum * (1.0 / static_cast<double>(pos.size()));
    double w = 1.0 / static_cast<double>(neg.size());
    double nterm = 0, wsum = 0;
    for (auto e : neg) nterm += w * bce(a[e], 0.0);
    for (std::size_t i = 0; i < neg.size(); ++i) wsum += w;
    return (num + nterm) * std::pow(1.0 + wsum + kLossEps, -1.0);
}

std::vector<double> rand_vec(std::mt19937_64& rng, std::size_t n, double scale) {
    std::normal_distribution<double> nd(0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

Var leaf(nn::Tape& t, const std::vector<double>& v) { return t.leaf(Tensor::vector(v)); }

}  // namespace

TEST_SUITE("training") {

TEST_CASE("weighted BCE") {
    nn::Tape t;
    SUBCASE("perfect logits") {
        auto a = leaf(t, {40, -40, -40, 40});
        Tensor y = Tensor::vector({1, 0, 0, 1});
        for (double T : {0.0, 1.0}) CHECK(weighted_bce_loss({a}, {y}, T).value().item() < 1e-10);
    }
    SUBCASE("zero temperature equals uniform negative weights exactly") {
        std::mt19937_64 rng(1);
        for (int trial = 0; trial < 50; ++trial) {
            std::size_t n = 3 + rng() % 10;
            auto a = rand_vec(rng, n, 2.0);
            std::vector<double> y(n, 0.0);
            y[rng() % n] = 1.0;
            y[rng() % n] = 1.0;
            if (std::count(y.begin(), y.end(), 0.0) == 0) y[0] = 0.0;
            double got = weighted_bce_loss({leaf(t, a)}, {Tensor::vector(y)}, 0.0).value().item();
            CHECK(got == uniform_bce_exact(a, y));
        }
    }
    SUBCASE("random batches match the double-loop oracle") {
        std::mt19937_64 rng(2);
        for (int trial = 0; trial < 30; ++trial) {
            std::size_t B = 1 + rng() % 4;
            std::vector<Var> av;
            std::vector<Tensor> yv;
            std::vector<std::vector<double>> A, Y;
            for (std::size_t b = 0; b < B; ++b) {
                std::size_t n = 2 + rng() % 8;
                A.push_back(rand_vec(rng, n, 3.0));
                Y.emplace_back(n, 0.0);
                for (std::size_t e = 0; e < n; ++e) Y.back()[e] = (rng() % 3 == 0) ? 1.0 : 0.0;
                av.push_back(leaf(t, A.back()));
                yv.push_back(Tensor::vector(Y.back()));
            }
            for (double T : {0.0, 0.5, 2.0}) {
                double got = weighted_bce_loss(av, yv, T).value().item();
                CHECK(got == doctest::Approx(bce_oracle(A, Y, T)).epsilon(1e-12));
                CHECK(got >= 0.0);
            }
        }
    }
    CHECK_THROWS(weighted_bce_loss({leaf(t, {1.0})}, {Tensor::vector({1.0})}, -1.0));
}

TEST_CASE("multi-positive list loss") {
    nn::Tape t;
    for (std::size_t n : {1u, 4u, 10u}) {
        auto l = multi_positive_list_loss({leaf(t, std::vector<double>(n, 0.3))}, {{0}}).value().item();
        CHECK(l == doctest::Approx(-std::log(1.0 / n)).epsilon(1e-8));
    }
    bool empty = false;
    auto z = multi_positive_list_loss({leaf(t, {1, 2})}, {{}}, &empty);
    CHECK(empty);
    CHECK(z.value().item() == 0.0);
    CHECK(multi_positive_list_loss({leaf(t, {40, -40, -40})}, {{0}}).value().item() < 1e-8);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t B = 1 + rng() % 4;
        std::vector<Var> av;
        std::vector<std::vector<std::size_t>> P;
        double total = 0;
        std::size_t used = 0;
        for (std::size_t b = 0; b < B; ++b) {
            std::size_t n = 2 + rng() % 8;
            auto a = rand_vec(rng, n, 2.0);
            av.push_back(leaf(t, a));
            std::vector<std::size_t> p;
            for (std::size_t e = 0; e < n; ++e)
                if (rng() % 3 == 0) p.push_back(e);
            P.push_back(p);
            if (p.empty()) continue;
            double s = 0;
            for (double x : a) s += sigm(x);
            double l = 0;
            for (auto e : p) l -= std::log(sigm(a[e]) / (s + kLossEps) + kLossEps);
            total += l / p.size();
            ++used;
        }
        double got = multi_positive_list_loss(av, P).value().item();
        CHECK(got == doctest::Approx(used ? total / used : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("selector regularizers") {
    nn::Tape t;
    std::vector<std::pair<std::size_t, std::size_t>> tri = {{0, 1}, {1, 2}, {0, 2}};
    std::mt19937_64 rng(4);
    auto H = t.leaf(testutil::random_matrix(rng, 3, 4));
    auto z = t.leaf(testutil::random_matrix(rng, 1, 4));
    z = nn::reshape(z, {4});
    auto half = selector_regularizers({leaf(t, {0.5, 0.5, 0.5})}, {H}, {z}, {&tri}, 0.1);
    CHECK(half.nce.value().item() == 0.0);
    CHECK(half.size.value().item() == 0.5);
    CHECK(half.con.value().item() == 0.0);

    // Laplacian quadratic form and component-constant zero set.
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t n = 3 + rng() % 6;
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t v = u + 1; v < n; ++v)
                if (rng() % 3 == 0) edges.emplace_back(u, v);
        if (edges.empty()) edges.emplace_back(0, 1);
        std::vector<double> pi(n);
        std::uniform_real_distribution<double> u(0, 1);
        for (auto& x : pi) x = u(rng);
        std::vector<std::vector<double>> L(n, std::vector<double>(n, 0.0));
        for (auto [a, b] : edges) {
            L[a][a] += 1;
            L[b][b] += 1;
            L[a][b] -= 1;
            L[b][a] -= 1;
        }
        double q = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) q += pi[i] * L[i][j] * pi[j];
        auto Hn = t.leaf(testutil::random_matrix(rng, n, 4));
        auto r = selector_regularizers({leaf(t, pi)}, {Hn}, {z}, {&edges}, 0.1);
        CHECK(r.con.value().item() == doctest::Approx(q / edges.size()).epsilon(1e-12));

        // Constant per connected component gives zero.
        auto sg = structural_graph_from_pairs(n, edges);
        std::vector<std::size_t> comp(n, SIZE_MAX);
        std::size_t c = 0;
        for (std::size_t s = 0; s < n; ++s) {
            if (comp[s] != SIZE_MAX) continue;
            std::vector<std::size_t> st{s};
            comp[s] = c;
            while (!st.empty()) {
                auto v = st.back();
                st.pop_back();
                for (auto w : sg.adj[v])
                    if (comp[w] == SIZE_MAX) comp[w] = c, st.push_back(w);
            }
            ++c;
        }
        std::vector<double> piece(n);
        for (std::size_t v = 0; v < n; ++v) piece[v] = 0.1 + 0.2 * static_cast<double>(comp[v] % 4);
        CHECK(selector_regularizers({leaf(t, piece)}, {Hn}, {z}, {&edges}, 0.1).con.value().item() == 0.0);
    }

    // In-batch InfoNCE against a scalar recomputation.
    std::size_t B = 3, d = 4;
    std::vector<Var> pis, Hs, zs;
    std::vector<std::vector<double>> hbar, zq;
    std::vector<const std::vector<std::pair<std::size_t, std::size_t>>*> es;
    std::vector<std::pair<std::size_t, std::size_t>> none;
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t n = 3 + b;
        std::vector<double> pi(n);
        for (auto& x : pi) x = std::uniform_real_distribution<double>(0.05, 1)(rng);
        auto Ht = testutil::random_matrix(rng, n, d);
        auto zt = testutil::random_matrix(rng, 1, d);
        pis.push_back(leaf(t, pi));
        Hs.push_back(t.leaf(Ht));
        zs.push_back(nn::reshape(t.leaf(zt), {d}));
        es.push_back(&none);
        std::vector<double> h(d, 0.0);
        double ps = 0;
        for (std::size_t e = 0; e < n; ++e) {
            ps += pi[e];
            for (std::size_t k = 0; k < d; ++k) h[k] += pi[e] * Ht.at(e, k);
        }
        double nh = 0, nz = 0;
        for (auto& x : h) x /= ps + kLossEps, nh += x * x;
        std::vector<double> zz(zt.values());
        for (double x : zz) nz += x * x;
        for (auto& x : h) x /= std::sqrt(nh + 1e-12);
        for (auto& x : zz) x /= std::sqrt(nz + 1e-12);
        hbar.push_back(h);
        zq.push_back(zz);
    }
    double T_n = 0.1, nce = 0;
    for (std::size_t i = 0; i < B; ++i) {
        std::vector<double> logit(B);
        for (std::size_t j = 0; j < B; ++j) {
            for (std::size_t k = 0; k < d; ++k) logit[j] += hbar[i][k] * zq[j][k];
            logit[j] /= T_n;
        }
        double m = *std::max_element(logit.begin(), logit.end()), s = 0;
        for (double x : logit) s += std::exp(x - m);
        nce -= logit[i] - m - std::log(s);
    }
    auto sel = selector_regularizers(pis, Hs, zs, es, T_n);
    CHECK(sel.nce.value().item() == doctest::Approx(nce / B).epsilon(1e-10));
    CHECK(sel.con.value().item() == 0.0);
}

TEST_CASE("document-level loss") {
    GraphMemory g;
    g.add_document(make_document("d0", "t"));
    g.add_document(make_document("d1", "t"));
    g.add_document(make_document("d2", "t"));
    g.add_triple("a", "r", "b", 0);
    g.add_triple("b", "r", "c", 1);
    g.add_triple("c", "r", "d", 2);
    auto M = entity_doc_matrix(g);
    nn::Tape t;
    Tensor z = Tensor::vector({0, 1, 0});
    auto zero = doc_level_loss({leaf(t, {0, 0, 0, 0})}, {&M}, {z}, 1.0).value().item();
    CHECK(zero == doctest::Approx(std::log(2.0)).epsilon(1e-8));

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = rand_vec(rng, 4, 1.5);
        std::vector<double> S(3, 0.0);
        auto dense = M.dense();
        for (std::size_t e = 0; e < 4; ++e)
            for (std::size_t d = 0; d < 3; ++d) S[d] += dense[e][d] * a[e];
        double got = doc_level_loss({leaf(t, a)}, {&M}, {z}, 0.7).value().item();
        CHECK(got == doctest::Approx(bce_oracle({S}, {{0, 1, 0}}, 0.7)).epsilon(1e-12));
    }
}

TEST_CASE("augmented views") {
    std::mt19937_64 rng(6);
    auto sg = structural_graph_from_pairs(8, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 7}, {0, 7}, {2, 6}});
    auto X = testutil::random_matrix(rng, 8, 6);
    AugmentRates zero{0.0, 0.0, 0.0};
    for (AugOp a : {AugOp::EdgePerturb, AugOp::FeatureMask, AugOp::NodeDrop, AugOp::Subgraph}) {
        auto v = augment_views(sg, X, {a, a}, zero, 1);
        CHECK(v.view1.sg.edges == sg.edges);
        CHECK(v.view1.X == X);
        CHECK(v.view2.node_ids == v.base.node_ids);
    }
    auto k3 = structural_graph_from_pairs(3, {{0, 1}, {1, 2}, {0, 2}});
    auto X3 = testutil::random_matrix(rng, 3, 4);
    auto nd = augment_views(k3, X3, {AugOp::NodeDrop, AugOp::NodeDrop}, {0.0, 0.0, 0.34}, 2);
    CHECK(nd.view1.sg.n == 2);
    CHECK(nd.view1.sg.num_edges() == 1);

    AugmentRates r;
    auto a = augment_views(sg, X, r, 7), b = augment_views(sg, X, r, 7);
    CHECK(a.ops == b.ops);
    CHECK(a.view1.sg.edges == b.view1.sg.edges);
    CHECK(a.X_neg == b.X_neg);
    // X_neg is a row permutation of X.
    std::vector<std::vector<double>> rows, perm;
    for (std::size_t i = 0; i < 8; ++i) {
        rows.emplace_back(X.row(i).begin(), X.row(i).end());
        perm.emplace_back(a.X_neg.row(i).begin(), a.X_neg.row(i).end());
    }
    std::sort(rows.begin(), rows.end());
    std::sort(perm.begin(), perm.end());
    CHECK(rows == perm);

    auto fm = augment_views(sg, X, {AugOp::FeatureMask, AugOp::EdgePerturb}, {0.25, 0.5, 0.0}, 3);
    std::size_t zero_cols = 0;
    for (std::size_t c = 0; c < 6; ++c) {
        bool all = true;
        for (std::size_t i = 0; i < 8; ++i) all = all && fm.view1.X.at(i, c) == 0.0;
        zero_cols += all;
    }
    CHECK(zero_cols == 3);
    CHECK(fm.view2.sg.num_edges() == sg.num_edges());  // k dropped, k added

    CHECK_THROWS(augment_views(sg, X, {AugOp::NodeDrop, AugOp::NodeDrop}, {1.0, 0.0, 0.0}, 1));
    CHECK_THROWS(augment_views(sg, X, {AugOp::NodeDrop, AugOp::NodeDrop}, {0.0, 0.0, 1.5}, 1));
}

TEST_CASE("structural pretraining loss") {
    std::mt19937_64 rng(8);
    auto g = testutil::random_graph(rng, 10, 3, 0.3);
    HashedNgramEmbedder emb(16);
    auto pg = prepare_graph(g, emb, {});
    auto params = init_reader_params(testutil::small_config(2));
    auto views = augment_views(pg.sg, pg.X, AugmentRates{}, 4);

    auto zero = params;
    zero.W_D.value.fill(0.0);
    {
        nn::Tape t;
        ParamBinder bind(t);
        // Two views, each contributing a positive and a negative term at log 2.
        CHECK(graphcl_pretrain_loss(bind, zero, views).value().item() == doctest::Approx(2.0 * std::log(2.0)));
    }
    nn::Tape t;
    ParamBinder bind(t);
    double got = graphcl_pretrain_loss(bind, params, views).value().item();
    auto Hp = pretrain_encode(bind, params, views.base.prop, views.base.X).value();
    auto Hn = pretrain_encode(bind, params, views.base.prop, views.X_neg).value();
    double total = 0;
    for (const GraphView* v : {&views.view1, &views.view2}) {
        auto Hj = pretrain_encode(bind, params, v->prop, v->X).value();
        std::size_t d = Hj.cols();
        std::vector<double> c(d, 0.0), Wc(d, 0.0);
        for (std::size_t i = 0; i < Hj.rows(); ++i)
            for (std::size_t k = 0; k < d; ++k) c[k] += Hj.at(i, k) / Hj.rows();
        for (auto& x : c) x = sigm(x);
        for (std::size_t o = 0; o < d; ++o)
            for (std::size_t k = 0; k < d; ++k) Wc[o] += params.W_D.value.at(o, k) * c[k];
        double lp = 0, ln = 0;
        for (std::size_t i = 0; i < Hp.rows(); ++i) {
            double sp = 0, sn = 0;
            for (std::size_t k = 0; k < d; ++k) sp += Hp.at(i, k) * Wc[k], sn += Hn.at(i, k) * Wc[k];
            lp += bce(sp, 1.0) / Hp.rows();
            ln += bce(sn, 0.0) / Hp.rows();
        }
        total += lp + ln;
    }
    CHECK(got == doctest::Approx(0.5 * total).epsilon(1e-12));

    PretrainConfig pc;
    pc.steps = 5;
    auto p1 = params, p2 = params;
    auto r1 = pretrain(p1, {&pg}, pc);
    auto r2 = pretrain(p2, {&pg}, pc);
    CHECK(r1.losses.size() == 5);
    CHECK(r1.losses == r2.losses);
    CHECK(reader_to_json(p1).dump() == reader_to_json(p2).dump());
    CHECK(p1.lambda.value == params.lambda.value);  // addressing weights are not pretrained
    CHECK_THROWS(pretrain(p1, {}, pc));
}

TEST_CASE("fine-tuning objective") {
    LossWeights w;
    CHECK(w.lambda_bce == 0.3);
    CHECK(w.lambda_list == 0.7);

    SynthSpec spec;
    spec.num_entities = 40;
    spec.num_docs = 24;
    spec.seed = 2;
    auto corpus = generate_synthetic(spec);
    HashedNgramEmbedder emb(16);
    std::deque<PreparedGraph> store;
    std::vector<FinetuneSample> samples;
    for (const auto& s : corpus.train) {
        store.push_back(prepare_graph(ingest_triples(s.oracle_triples, s.docs, WriteMode::Iterative), emb, {}));
        samples.push_back(make_finetune_sample(s.question, plan_deterministic(s.question, &store.back().graph),
                                               &store.back(), emb, s.support_entities, s.support_doc_ids));
    }
    REQUIRE(samples.size() >= 4);
    CHECK(samples[0].positives.size() == 3);
    CHECK(samples[0].gold_docs.size() == 2);
    auto params = init_reader_params(testutil::small_config(2));
    std::vector<const FinetuneSample*> batch = {&samples[0], &samples[1], &samples[2]};

    // lambda_list = 0 and no selector terms leaves the weighted BCE.
    LossWeights bce_only{.lambda_bce = 1.0, .lambda_list = 0.0, .T_a = 1.0, .w_nce = 0, .w_size = 0, .w_con = 0};
    nn::Tape t;
    ParamBinder bind(t);
    LossBreakdown br;
    double l = finetune_loss(bind, params, batch, bce_only, {}, &br).value().item();
    CHECK(l == br.bce);
    std::vector<Var> logits;
    std::vector<Tensor> ys;
    for (auto* s : batch) {
        logits.push_back(reader_forward(bind, params, *s->graph, s->inputs).a_final);
        ys.push_back(s->y);
    }
    CHECK(l == weighted_bce_loss(logits, ys, 1.0).value().item());

    LossBreakdown full;
    double lf = finetune_loss(bind, params, batch, w, {}, &full).value().item();
    CHECK(lf == doctest::Approx(0.3 * full.bce + 0.7 * full.list + 0.1 * full.nce + 0.01 * full.size +
                                0.01 * full.con)
                    .epsilon(1e-12));
    for (double v : {full.bce, full.list, full.nce, full.size, full.con}) CHECK(v >= 0.0);

    FinetuneConfig fc;
    fc.epochs = 3;
    fc.batch_size = 4;
    auto a = params, b = params;
    std::vector<nlohmann::json> log;
    auto ra = finetune(a, samples, samples, emb, fc, [&](const nlohmann::json& j) { log.push_back(j); });
    finetune(b, samples, samples, emb, fc);
    CHECK(reader_to_json(a).dump() == reader_to_json(b).dump());
    CHECK(ra.epoch_losses.size() == 3);
    CHECK(ra.heldout_recall.size() == 3);
    CHECK_FALSE(log.empty());
    double best = *std::max_element(ra.heldout_recall.begin(), ra.heldout_recall.end());
    CHECK(heldout_recall(a, samples, emb, 5) == doctest::Approx(best));
    fc.batch_size = 0;
    CHECK_THROWS(finetune(a, samples, {}, emb, fc));
}

TEST_CASE("gradient check of the fine-tuning loss on a small batch") {
    std::mt19937_64 rng(10);
    auto g = testutil::random_graph(rng, 8, 3, 0.3);
    HashedNgramEmbedder emb(16);
    auto pg = prepare_graph(g, emb, {});
    auto cfg = testutil::small_config(2);
    auto params = init_reader_params(cfg);
    for (auto& lp : params.layers) lp.gate.w2.value = testutil::random_matrix(rng, lp.gate.w2.value.rows(), lp.gate.w2.value.cols(), 0.5);
    auto s = make_finetune_sample("ent1 and ent2", plan_deterministic("ent1 and ent2", &pg.graph), &pg, emb,
                                  {"ent1", "ent3"}, {"doc0"});
    LossWeights w;
    w.w_doc = 0.2;
    auto loss = [&] {
        nn::Tape t;
        ParamBinder bind(t);
        return finetune_loss(bind, params, {&s}, w, {}).value().item();
    };
    {
        nn::Tape t;
        ParamBinder bind(t);
        for (auto* p : params.all()) p->zero_grad();
        t.backward(finetune_loss(bind, params, {&s}, w, {}));
    }
    for (auto* p : {&params.lambda, &params.W_q, &params.layers[0].W_m, &params.layers[1].gate.w1, &params.W_n}) {
        std::vector<std::size_t> coords;
        for (std::size_t i = 0; i < std::min<std::size_t>(p->value.numel(), 6); ++i) coords.push_back(i * 7 % p->value.numel());
        auto num = nn::finite_difference_gradient(loss, p->value, coords);
        auto res = nn::compare_gradients(p->name, p->grad, num, coords);
        INFO(p->name);
        CHECK(res.failures == 0);
    }
}

}  // TEST_SUITE

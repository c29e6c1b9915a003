#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sage/diagnostics.hpp"
#include "test_util.hpp"

using namespace sage;
using namespace sage::diag;

namespace {

StructuralGraph path_graph(std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> p;
    for (std::size_t i = 0; i + 1 < n; ++i) p.emplace_back(i, i + 1);
    return structural_graph_from_pairs(n, p);
}

ReaderParams gated_params(std::size_t layers, std::uint64_t seed) {
    auto cfg = testutil::small_config(layers);
    cfg.seed = seed;
    auto p = init_reader_params(cfg);
    std::mt19937_64 rng(seed);
    for (auto& lp : p.layers) lp.gate.w2.value = testutil::random_matrix(rng, lp.gate.w2.value.rows(), lp.gate.w2.value.cols());
    return p;
}

// Budget by enumerating every rank prefix: smallest prefix holding m gold
// documents, with tied distractors placed first.
std::size_t brute_budget(const std::vector<double>& s, const std::vector<char>& gold, std::size_t m) {
    for (std::size_t len = 1; len <= s.size(); ++len) {
        // the len-th ranked score threshold
        std::vector<double> sorted = s;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        double th = sorted[len - 1];
        std::size_t above = 0, at_gold = 0, at_other = 0, gold_above = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] > th) {
                ++above;
                gold_above += gold[i];
            } else if (s[i] == th) {
                (gold[i] ? at_gold : at_other)++;
            }
        }
        std::size_t slots = len - above;  // tied docs that fit in the prefix
        std::size_t tied_gold = slots > at_other ? std::min(at_gold, slots - at_other) : 0;
        if (gold_above + tied_gold >= m) return len;
    }
    return s.size() + 1;
}

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("stability checks hold on random instances") {
    for (const auto& r : check_stability_suite(200, 5)) {
        INFO(r.name);
        CHECK(r.passed());
        CHECK(r.trials == 200);
        CHECK(r.min_slack >= -kRoundTol);
    }
}

TEST_CASE("top-k boundary") {
    std::vector<double> s = {3.0, 2.5, 1.0, 0.2, -1.0};
    auto corners = check_topk_boundary_corners(s, 0.2, 2);
    CHECK(corners.passed());
    CHECK(corners.trials == 32);
    CHECK(check_topk_boundary(s, 0.2, 2, 500, 1).passed());
    CHECK(check_topk_boundary_random(300, 2).passed());
    // Perturbations beyond eps must be caught.
    auto bad = check_topk_boundary(s, 0.3, 2, 500, 1, 3.0);
    CHECK_FALSE(bad.passed());
    CHECK_FALSE(bad.counterexample.is_null());
    CHECK_FALSE(check_topk_boundary_random(300, 2, 3.0).passed());
}

TEST_CASE("influence cone on a path") {
    auto sg = path_graph(9);
    auto d = bfs_distances(sg, {0});
    for (std::size_t v = 0; v < 9; ++v) CHECK(d[v] == v);
    auto params = gated_params(2, 4);
    std::mt19937_64 rng(4);
    auto H0 = testutil::random_matrix(rng, 9, 8);

    auto feat = influence_cone_trial(sg, params, H0, {EditKind::NodeFeature, 0, 0, 1.0}, 1);
    CHECK_FALSE(feat.skipped);
    CHECK(feat.violations == 0);
    CHECK(feat.max_outside_diff == 0.0);
    CHECK(feat.checked == 5);  // nodes 4..8 lie beyond L + r_z = 3
    CHECK(feat.influence_radius <= 2);

    auto edge = influence_cone_trial(sg, params, H0, {EditKind::RemoveEdge, 0, 1, 1.0}, 1);
    if (!edge.skipped) {
        CHECK(edge.violations == 0);
        CHECK(edge.max_outside_diff == 0.0);
        CHECK(edge.influence_radius <= 3);
    }
    CHECK(check_influence_cone(sg, params, H0, {EditKind::AddEdge, 7, 8, 1.0}, 1).passed());
    CHECK(check_influence_cone_random(60, 9, 2, 1).passed());
    CHECK_THROWS(influence_cone_trial(sg, params, H0, {EditKind::AddEdge, 3, 3, 1.0}, 1));
}

TEST_CASE("signal to noise recurrence") {
    Matrix I = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    auto c = block_coefficients(I, {1, 0, 0});
    CHECK(c.A == 1.0);
    CHECK(c.B == 1.0);
    CHECK(c.C == 0.0);
    CHECK(snr_inverse_bound({c, c, c}, 0.7) == 0.7);

    Matrix T = {{0.5, 0.1, 0.0}, {0.2, 0.3, 0.4}, {0.1, 0.2, 0.6}};
    auto t = block_coefficients(T, {1, 0, 0});
    CHECK(t.A == 0.5);
    CHECK(t.C == doctest::Approx(0.3));
    CHECK(t.B == doctest::Approx(1.0));
    // Two layers: Q_2 <= (B/A)^2 Q0 + (C/A)(B/A) + C/A.
    double q = snr_inverse_bound({t, t}, 0.5);
    CHECK(q == doctest::Approx(4.0 * 0.5 + 0.6 * 2.0 + 0.6));
    CHECK_THROWS(block_coefficients({{-1.0}}, {1}));
    CHECK(snr_recurrence_random(300, 3, 10, 3).passed());
}

TEST_CASE("retrieval budget") {
    auto b = budget_bound({0.5, 0.9}, {1, 0}, 1.0);
    CHECK(b.applicable);
    CHECK(b.m == 1);
    CHECK(b.budget == 2);
    CHECK(b.bound == doctest::Approx(1.0 + 0.9 / 0.5));
    auto easy = budget_bound({0.9, 0.8, 0.1, 0.05}, {1, 1, 0, 0}, 1.0);
    CHECK(easy.budget == easy.m);
    CHECK(easy.bound >= static_cast<double>(easy.m));
    CHECK_FALSE(budget_bound({0.0, 0.3}, {1, 0}, 1.0).applicable);
    CHECK_THROWS(budget_bound({1.0}, {1}, 0.0));

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 300; ++t) {
        std::size_t n = 2 + rng() % 12;
        std::vector<double> s(n);
        std::vector<char> g(n, 0);
        for (auto& x : s) x = (t % 3 == 0) ? std::round(3 * u(rng)) : u(rng);
        g[rng() % n] = 1;
        g[rng() % n] = 1;
        auto r = budget_bound(s, g, 1.0);
        if (!r.applicable) continue;
        CHECK(r.budget == brute_budget(s, g, r.m));
        CHECK(static_cast<double>(r.budget) <= r.bound * (1 + 1e-12));
    }
    CHECK(budget_bound_random(500, 8).passed());
}

TEST_CASE("graph drift") {
    std::mt19937_64 rng(11);
    auto g = testutil::random_graph(rng, 12, 4, 0.2);
    HashedNgramEmbedder emb(16);
    auto pg = prepare_graph(g, emb, {});
    auto params = gated_params(2, 11);
    QueryPlan plan;
    plan.explicit_entities = {"ent1"};
    auto self = drift_measure(pg, pg, "about ent1", plan, emb, params);
    CHECK(self.drift.total() == 0.0);
    CHECK(self.score_drift == 0.0);
    CHECK(self.ratio == 0.0);

    auto g2 = g;
    g2.add_triple("ent1", "link", "ent5", 0);
    auto pg2 = prepare_graph(g2, emb, {});
    auto moved = drift_measure(pg, pg2, "about ent1", plan, emb, params);
    CHECK(moved.drift.dA > 0.0);
    CHECK(moved.drift.total() > 0.0);
    CHECK(std::isfinite(moved.ratio));

    GraphMemory clash;
    clash.add_document(make_document("doc0", "different text"));
    clash.add_triple("ent1", "link", "ent2", 0);
    CHECK_THROWS_AS(drift_measure(pg, prepare_graph(clash, emb, {}), "q", plan, emb, params), std::invalid_argument);
}

TEST_CASE("suite configuration and report") {
    SuiteConfig cfg;
    cfg.trials = 50;
    auto reports = run_suite(cfg);
    CHECK(reports.size() >= 7);
    for (const auto& r : reports) {
        INFO(r.name);
        CHECK(r.passed());
    }
    auto j = suite_report(reports);
    CHECK(j.dump() == suite_report(run_suite(cfg)).dump());
    CHECK(SuiteConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
    CHECK_THROWS(SuiteConfig::from_json({{"bogus", 1}}));
    cfg.topk_perturb_scale = 3.0;
    auto bad = run_suite(cfg);
    CHECK(std::any_of(bad.begin(), bad.end(), [](const CheckReport& r) { return !r.passed(); }));
}

}  // TEST_SUITE

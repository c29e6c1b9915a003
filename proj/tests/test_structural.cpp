#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "sage/structural_features.hpp"

using namespace sage;

namespace {

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

StructuralGraph make(std::size_t n, Pairs p) { return structural_graph_from_pairs(n, p); }

Pairs random_pairs(std::mt19937_64& rng, std::size_t n, double p) {
    Pairs out;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (u(rng) < p) out.push_back({i, j});  // directed, may include loops
    return out;
}

std::vector<std::vector<int>> dense_sym(std::size_t n, const Pairs& p) {
    std::vector<std::vector<int>> A(n, std::vector<int>(n, 0));
    for (auto [u, v] : p)
        if (u != v) A[u][v] = A[v][u] = 1;
    return A;
}

// Core numbers by repeated k-core extraction.
std::vector<int> brute_cores(const std::vector<std::vector<int>>& A) {
    std::size_t n = A.size();
    std::vector<int> core(n, 0);
    for (int k = 1; k <= static_cast<int>(n); ++k) {
        std::vector<char> alive(n, 1);
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::size_t v = 0; v < n; ++v) {
                if (!alive[v]) continue;
                int d = 0;
                for (std::size_t u = 0; u < n; ++u) d += alive[u] && A[v][u];
                if (d < k) alive[v] = 0, changed = true;
            }
        }
        for (std::size_t v = 0; v < n; ++v)
            if (alive[v]) core[v] = k;
    }
    return core;
}

}  // namespace

TEST_SUITE("structural_features") {

TEST_CASE("binarisation symmetrises and drops loops") {
    auto sg = make(2, {{0, 1}});
    CHECK(sg.adj[0] == std::vector<std::size_t>{1});
    CHECK(sg.adj[1] == std::vector<std::size_t>{0});
    CHECK(make(1, {{0, 0}}).num_edges() == 0);

    GraphMemory g;
    g.add_document(make_document("d", "t"));
    g.add_triple("a", "r", "a", 0);
    g.add_triple("a", "r", "b", 0);
    g.add_triple("b", "s", "a", 0);
    auto s = binarized_structural_graph(g);
    CHECK(s.n == 2);
    CHECK(s.num_edges() == 1);

    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        std::size_t n = 2 + rng() % 10;
        auto p = random_pairs(rng, n, 0.3);
        auto sgr = make(n, p);
        auto A = dense_sym(n, p);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::size_t> row;
            for (std::size_t j = 0; j < n; ++j)
                if (A[i][j]) row.push_back(j);
            CHECK(sgr.adj[i] == row);
        }
    }
}

TEST_CASE("node features on small graphs") {
    auto k3 = node_features(make(3, {{0, 1}, {1, 2}, {0, 2}}));
    for (const auto& f : k3) {
        CHECK(f.log1p_degree == doctest::Approx(std::log(3.0)));
        CHECK(f.clustering == 1.0);
        CHECK(f.core_number == 2);
        CHECK(f.avg_neighbor_degree == 2.0);
    }
    auto path = node_features(make(3, {{0, 1}, {1, 2}}));
    CHECK(path[1].log1p_degree == doctest::Approx(std::log(3.0)));
    CHECK(path[1].clustering == 0.0);
    CHECK(path[1].core_number == 1);
    CHECK(path[1].avg_neighbor_degree == 1.0);
    auto k4 = node_features(make(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}));
    for (const auto& f : k4) CHECK(f.core_number == 3);
    auto iso = node_features(make(1, {}));
    CHECK(iso[0].avg_neighbor_degree == 0.0);
    CHECK(iso[0].clustering == 0.0);
}

TEST_CASE("edge pair features") {
    auto tri = make(3, {{0, 1}, {1, 2}, {0, 2}});
    for (const auto& e : edge_pair_features(tri)) {
        CHECK(e.degree_diff == 0.0);
        CHECK(e.common_neighbors == 1.0);
        CHECK(e.jaccard == doctest::Approx(1.0 / (3.0 + kJaccardEps)));
    }
    auto star = make(4, {{0, 1}, {0, 2}, {0, 3}});
    for (const auto& e : edge_pair_features(star)) {
        CHECK(e.degree_diff == 2.0);
        CHECK(e.common_neighbors == 0.0);
        CHECK(e.jaccard == 0.0);
    }
}

TEST_CASE("random graphs against brute-force oracles") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 40; ++t) {
        std::size_t n = 1 + rng() % 8;
        auto p = random_pairs(rng, n, 0.35);
        auto sg = make(n, p);
        auto A = dense_sym(n, p);
        auto nf = node_features(sg);
        auto cores = brute_cores(A);
        for (std::size_t v = 0; v < n; ++v) {
            std::vector<std::size_t> N;
            for (std::size_t u = 0; u < n; ++u)
                if (A[v][u]) N.push_back(u);
            double d = static_cast<double>(N.size());
            std::size_t tri = 0;
            for (std::size_t a = 0; a < N.size(); ++a)
                for (std::size_t b = a + 1; b < N.size(); ++b) tri += A[N[a]][N[b]];
            double c = N.size() >= 2 ? 2.0 * static_cast<double>(tri) / (d * (d - 1.0)) : 0.0;
            CHECK(nf[v].clustering == doctest::Approx(c));
            CHECK(nf[v].clustering >= 0.0);
            CHECK(nf[v].clustering <= 1.0);
            bool clique = N.size() >= 2 && tri == N.size() * (N.size() - 1) / 2;
            CHECK((nf[v].clustering == 1.0) == clique);
            CHECK(nf[v].core_number == cores[v]);
            CHECK(nf[v].core_number <= static_cast<int>(N.size()));
            double and_ = 0.0;
            for (auto u : N) and_ += static_cast<double>(sg.degree(u));
            CHECK(nf[v].avg_neighbor_degree == doctest::Approx(N.empty() ? 0.0 : and_ / d));
        }
        // Removing nodes with core < k leaves min degree >= k.
        for (int k = 1; k <= *std::max_element(cores.begin(), cores.end()); ++k) {
            for (std::size_t v = 0; v < n; ++v) {
                if (cores[v] < k) continue;
                int deg = 0;
                for (std::size_t u = 0; u < n; ++u) deg += A[v][u] && cores[u] >= k;
                CHECK(deg >= k);
            }
        }
        auto ef = edge_pair_features(sg);
        REQUIRE(ef.size() == sg.edges.size());
        for (std::size_t i = 0; i < ef.size(); ++i) {
            auto [u, v] = sg.edges[i];
            std::set<std::size_t> Nu(sg.adj[u].begin(), sg.adj[u].end()), Nv(sg.adj[v].begin(), sg.adj[v].end());
            std::set<std::size_t> in, un;
            std::set_intersection(Nu.begin(), Nu.end(), Nv.begin(), Nv.end(), std::inserter(in, in.begin()));
            std::set_union(Nu.begin(), Nu.end(), Nv.begin(), Nv.end(), std::inserter(un, un.begin()));
            CHECK(ef[i].degree_diff == std::fabs(double(Nu.size()) - double(Nv.size())));
            CHECK(ef[i].common_neighbors == static_cast<double>(in.size()));
            CHECK(ef[i].common_neighbors <= std::min(Nu.size(), Nv.size()));
            CHECK(ef[i].jaccard == doctest::Approx(in.size() / (un.size() + kJaccardEps)));
            CHECK(ef[i].jaccard < 1.0);
        }
    }
}

TEST_CASE("features are permutation equivariant") {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 20; ++t) {
        std::size_t n = 2 + rng() % 8;
        auto p = random_pairs(rng, n, 0.3);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Pairs q;
        for (auto [u, v] : p) q.push_back({perm[u], perm[v]});
        auto a = node_features(make(n, p)), b = node_features(make(n, q));
        for (std::size_t v = 0; v < n; ++v) CHECK(a[v].vec() == b[perm[v]].vec());
    }
}

TEST_CASE("summary, density and normalisation") {
    auto k3 = make(3, {{0, 1}, {1, 2}, {0, 2}});
    auto nf = node_features(k3);
    auto s = graph_summary(k3, nf);
    CHECK(s.density() == 1.0);
    for (std::size_t i = 4; i < 8; ++i) CHECK(s.values[i] == 0.0);
    auto norm = graph_summary_and_normalize(k3, nf, edge_pair_features(k3));
    for (double v : norm.node.values()) CHECK(v == doctest::Approx(0.0));  // centering only

    auto one = make(1, {});
    auto s1 = graph_summary(one, node_features(one));
    CHECK(s1.density() == 0.0);
    for (std::size_t i = 4; i < 8; ++i) CHECK(s1.values[i] == 0.0);

    // Within-graph z-scores have zero mean and unit std on non-degenerate dims.
    std::mt19937_64 rng(3);
    auto sg = make(10, random_pairs(rng, 10, 0.25));
    auto f = graph_summary_and_normalize(sg, node_features(sg), edge_pair_features(sg));
    for (std::size_t c = 0; c < kNodeFeatDim; ++c) {
        double m = 0, v = 0;
        for (std::size_t r = 0; r < sg.n; ++r) m += f.node.at(r, c);
        m /= sg.n;
        for (std::size_t r = 0; r < sg.n; ++r) v += (f.node.at(r, c) - m) * (f.node.at(r, c) - m);
        CHECK(std::fabs(m) < 1e-12);
        double sd = std::sqrt(v / sg.n);
        CHECK((std::fabs(sd - 1.0) < 1e-9 || sd < 1e-12));
    }

    // Global summary stats against a two-pass oracle.
    std::vector<GraphSummary> sums;
    for (int t = 0; t < 10; ++t) {
        auto g = make(3 + t, random_pairs(rng, 3 + t, 0.3));
        sums.push_back(graph_summary(g, node_features(g)));
    }
    auto fit = fit_summary_norm(sums);
    CHECK(fit.fitted);
    for (std::size_t i = 0; i < kSummaryDim; ++i) {
        double m = 0;
        for (const auto& x : sums) m += x.values[i];
        m /= sums.size();
        double v = 0;
        for (const auto& x : sums) v += (x.values[i] - m) * (x.values[i] - m);
        CHECK(fit.mean[i] == doctest::Approx(m));
        double sd = std::sqrt(v / sums.size());
        if (sd > 1e-9) CHECK(fit.std[i] == doctest::Approx(sd));
    }
}

TEST_CASE("edge chunking") {
    std::vector<int> e(10);
    std::iota(e.begin(), e.end(), 0);
    auto c = chunk_edges(e, 4);
    REQUIRE(c.size() == 3);
    CHECK(c[0].size() == 4);
    CHECK(c[2].size() == 2);
    CHECK(chunk_edges(e, 100).size() == 1);
    std::vector<int> joined;
    for (auto& x : chunk_edges(e, 3)) joined.insert(joined.end(), x.begin(), x.end());
    CHECK(joined == e);
}

TEST_CASE("feature cache is keyed by structure") {
    auto sg = make(4, {{0, 1}, {1, 2}});
    auto f = graph_summary_and_normalize(sg, node_features(sg), edge_pair_features(sg));
    auto j = features_to_json(sg, f);
    auto back = features_from_json(j, sg);
    REQUIRE(back);
    CHECK(back->node == f.node);
    CHECK_FALSE(features_from_json(j, make(4, {{0, 1}})).has_value());
}

}  // TEST_SUITE

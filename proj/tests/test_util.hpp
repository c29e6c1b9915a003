#pragma once
// Shared fixtures and plain-loop reference implementations for the tests.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "sage/reader.hpp"

namespace testutil {

using Dense = std::vector<std::vector<double>>;

inline sage::ReaderConfig small_config(std::size_t layers = 2) {
    sage::ReaderConfig c;
    c.emb_dim = 16;
    c.hidden = 8;
    c.layers = layers;
    c.gate_enc_dim = 4;
    c.gate_hidden = 8;
    c.prompt_bases = 3;
    return c;
}

// Random entity graph over n entities with one relation name, anchored to
// n_docs documents; every entity gets at least one anchor.
inline sage::GraphMemory random_graph(std::mt19937_64& rng, std::size_t n, std::size_t n_docs, double p) {
    sage::GraphMemory g;
    for (std::size_t d = 0; d < n_docs; ++d)
        g.add_document(sage::make_document("doc" + std::to_string(d), "document number " + std::to_string(d)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) g.add_entity("ent" + std::to_string(i));
    for (std::size_t i = 0; i < n; ++i) {
        g.add_triple("ent" + std::to_string(i), "link", "ent" + std::to_string((i + 1 + rng() % n) % n), rng() % n_docs);
        for (std::size_t j = i + 1; j < n; ++j)
            if (u(rng) < p) g.add_triple("ent" + std::to_string(i), "link", "ent" + std::to_string(j), rng() % n_docs);
    }
    return g;
}

inline Dense to_dense(const sage::nn::Tensor& t) {
    Dense out(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t.at(r, c);
    return out;
}

// H W^T
inline Dense matmul_t(const Dense& H, const sage::nn::Tensor& W) {
    Dense out(H.size(), std::vector<double>(W.rows(), 0.0));
    for (std::size_t i = 0; i < H.size(); ++i)
        for (std::size_t o = 0; o < W.rows(); ++o)
            for (std::size_t k = 0; k < W.cols(); ++k) out[i][o] += H[i][k] * W.at(o, k);
    return out;
}

// LayerNorm(H + PReLU(Â H W^T + b)) with Â = D^-1/2 (A + I) D^-1/2, plus H
// when residual is set. Built from the adjacency lists directly.
inline Dense plain_gcn_layer(const sage::StructuralGraph& sg, const Dense& H, const sage::LayerParams& lp,
                             bool residual) {
    std::size_t n = sg.n;
    Dense WH = matmul_t(H, lp.W_m.value);
    std::size_t d = WH.empty() ? 0 : WH[0].size();
    Dense out(n, std::vector<double>(d, 0.0));
    for (std::size_t v = 0; v < n; ++v) {
        double dv = static_cast<double>(sg.adj[v].size()) + 1.0;
        std::vector<double> agg(d, 0.0);
        for (std::size_t k = 0; k < d; ++k) agg[k] = WH[v][k] / dv;
        for (auto u : sg.adj[v]) {
            double du = static_cast<double>(sg.adj[u].size()) + 1.0;
            for (std::size_t k = 0; k < d; ++k) agg[k] += WH[u][k] / std::sqrt(du * dv);
        }
        double slope = lp.slope.value[0];
        std::vector<double> x(d);
        for (std::size_t k = 0; k < d; ++k) {
            double a = agg[k] + lp.b.value[k];
            x[k] = H[v][k] + (a > 0 ? a : slope * a);
        }
        double mean = 0, var = 0;
        for (double xi : x) mean += xi;
        mean /= static_cast<double>(d);
        for (double xi : x) var += (xi - mean) * (xi - mean);
        var /= static_cast<double>(d);
        for (std::size_t k = 0; k < d; ++k) {
            out[v][k] = (x[k] - mean) / std::sqrt(var + 1e-5) * lp.ln_gamma.value[k] + lp.ln_beta.value[k];
            if (residual) out[v][k] += H[v][k];
        }
    }
    return out;
}

inline double max_abs_diff(const Dense& a, const sage::nn::Tensor& b) {
    double m = 0.0;
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t c = 0; c < a[r].size(); ++c) m = std::max(m, std::fabs(a[r][c] - b.at(r, c)));
    return m;
}

inline sage::nn::Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    sage::nn::Tensor t(sage::nn::Shape{r, c});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = nd(rng);
    return t;
}

}  // namespace testutil

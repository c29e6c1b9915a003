#include "sage/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "sage/text.hpp"

namespace sage::diag {

using nn::Rng;
using nn::Shape;
using nn::Tensor;
using nn::Var;
using nn::derive_seed;

namespace {

constexpr std::size_t kFar = std::numeric_limits<std::size_t>::max();

// Tracks slack extremes and the first counterexample.
struct Tally {
    CheckReport& r;
    bool any = false;

    void slack(double s) {
        if (!any) {
            r.min_slack = r.max_slack = s;
            any = true;
        } else {
            r.min_slack = std::min(r.min_slack, s);
            r.max_slack = std::max(r.max_slack, s);
        }
    }
    void violation(nlohmann::json ce) {
        if (r.violations++ == 0) r.counterexample = std::move(ce);
    }
};

std::vector<double> softmax_t(const std::vector<double>& s, double T) { return initial_activation(s, T); }

double inf_norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double l1_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m += std::abs(a[i] - b[i]);
    return m;
}

// Score vector with a mix of spreads so both flat and peaked softmaxes occur.
std::vector<double> random_scores(Rng& rng, std::size_t n) {
    double spread = std::pow(10.0, rng.uniform(-2.0, 1.5));
    std::vector<double> s(n);
    for (auto& x : s) x = spread * rng.normal();
    return s;
}

std::vector<double> perturb(Rng& rng, const std::vector<double>& s, double eps) {
    std::vector<double> out(s);
    bool corner = rng.bernoulli(0.5);
    for (auto& x : out) x += corner ? (rng.bernoulli(0.5) ? eps : -eps) : rng.uniform(-eps, eps);
    return out;
}

StructuralGraph random_graph(Rng& rng, std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    double p = rng.uniform(0.05, 0.5);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = u + 1; v < n; ++v)
            if (rng.bernoulli(p)) pairs.emplace_back(u, v);
    // occasional hub
    if (n > 3 && rng.bernoulli(0.3)) {
        std::size_t h = rng.index(n);
        for (std::size_t v = 0; v < n; ++v)
            if (v != h && rng.bernoulli(0.8)) pairs.emplace_back(std::min(h, v), std::max(h, v));
    }
    return structural_graph_from_pairs(n, pairs);
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(Shape{rows, cols});
    for (auto& x : t.data()) x = rng.normal();
    return t;
}

ReaderParams random_params(std::uint64_t seed, std::size_t layers, double gate_scale) {
    ReaderConfig cfg;
    cfg.emb_dim = 16;
    cfg.hidden = 8;
    cfg.layers = layers;
    cfg.gate_enc_dim = 4;
    cfg.gate_hidden = 8;
    cfg.seed = seed;
    ReaderParams p = init_reader_params(cfg);
    Rng rng(derive_seed(seed, 99));
    for (auto& lp : p.layers) {
        for (auto* t : {&lp.gate.w2.value, &lp.gate.b2.value})
            for (auto& x : t->data()) x = gate_scale * rng.normal();
    }
    return p;
}

// Z-score statistics per column; degenerate columns are centred only.
struct ColumnStats {
    std::vector<double> mu, div;
};

ColumnStats column_stats(const Tensor& t) {
    std::size_t rows = t.rows(), cols = t.cols();
    ColumnStats s{std::vector<double>(cols, 0.0), std::vector<double>(cols, 1.0)};
    if (rows == 0) return s;
    for (std::size_t c = 0; c < cols; ++c) {
        double mu = 0.0;
        for (std::size_t r = 0; r < rows; ++r) mu += t.at(r, c);
        mu /= static_cast<double>(rows);
        double var = 0.0;
        for (std::size_t r = 0; r < rows; ++r) var += (t.at(r, c) - mu) * (t.at(r, c) - mu);
        double sd = std::sqrt(var / static_cast<double>(rows));
        s.mu[c] = mu;
        s.div[c] = sd < kDegenerateStd ? 1.0 : sd;
    }
    return s;
}

Tensor apply_stats(const Tensor& raw, const ColumnStats& s) {
    Tensor t = raw;
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) t.at(r, c) = (t.at(r, c) - s.mu[c]) / s.div[c];
    return t;
}

struct RawFeatures {
    Tensor node, edge;
};

RawFeatures raw_features(const StructuralGraph& sg) {
    auto nf = node_features(sg);
    auto ef = edge_pair_features(sg);
    RawFeatures r{Tensor(Shape{sg.n, kNodeFeatDim}), Tensor(Shape{ef.size(), kEdgeFeatDim})};
    for (std::size_t v = 0; v < sg.n; ++v) {
        auto f = nf[v].vec();
        for (std::size_t k = 0; k < kNodeFeatDim; ++k) r.node.at(v, k) = f[k];
    }
    for (std::size_t i = 0; i < ef.size(); ++i) {
        auto f = ef[i].vec();
        for (std::size_t k = 0; k < kEdgeFeatDim; ++k) r.edge.at(i, k) = f[k];
    }
    return r;
}

PropagationGraph frozen_prop(const StructuralGraph& sg, const ColumnStats& ns, const ColumnStats& es,
                             const Tensor& summary) {
    auto raw = raw_features(sg);
    NormalizedFeatures f;
    f.node = apply_stats(raw.node, ns);
    f.edge = apply_stats(raw.edge, es);
    f.summary = summary;
    return make_propagation_graph(sg, f);
}

PropagationGraph plain_prop(const StructuralGraph& sg) {
    auto f = graph_summary_and_normalize(sg, node_features(sg), edge_pair_features(sg));
    return make_propagation_graph(sg, f);
}

Tensor encode_both(ReaderParams& params, const PropagationGraph& pg, const Tensor& H0) {
    nn::Tape tape;
    ParamBinder bind(tape);
    Var H = tape.constant(H0);
    Var ctx = encode_channel(bind, params, pg, H, true, false, params.cfg.C_e, nullptr);
    if (params.cfg.beta_sch == 0.0) return ctx.value();
    Var sch = encode_channel(bind, params, pg, H, false, true, params.cfg.C_e, nullptr);
    return nn::add(ctx, nn::scale(sch, params.cfg.beta_sch)).value();
}

nlohmann::json edges_json(const StructuralGraph& sg) {
    nlohmann::json a = nlohmann::json::array();
    for (auto [u, v] : sg.edges) a.push_back({u, v});
    return a;
}

std::string edit_name(EditKind k) {
    switch (k) {
        case EditKind::AddEdge: return "add_edge";
        case EditKind::RemoveEdge: return "remove_edge";
        case EditKind::NodeFeature: return "node_feature";
        case EditKind::None: return "none";
    }
    return "none";
}

}  // namespace

nlohmann::json CheckReport::to_json() const {
    return {{"name", name},           {"trials", trials},       {"violations", violations},
            {"skipped", skipped},     {"min_slack", min_slack}, {"max_slack", max_slack},
            {"passed", passed()},     {"params", params},       {"extra", extra},
            {"counterexample", counterexample}};
}

// ---- stability -----------------------------------------------------------

CheckReport check_softmax_lipschitz(std::size_t trials, std::uint64_t seed, const StabilityParams& p) {
    if (trials == 0) throw std::invalid_argument("check_softmax_lipschitz: trials must be >= 1");
    CheckReport r;
    r.name = "softmax_lipschitz";
    r.params = {{"trials", trials}, {"seed", seed}, {"eta", p.eta}, {"eps_p", p.eps_p}};
    Tally tally{r};
    Rng rng(seed);
    double act_min_slack = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
        ++r.trials;
        std::size_t n = 1 + rng.index(p.max_nodes);
        double T0 = std::pow(10.0, rng.uniform(-1.5, 0.5));
        auto S = random_scores(rng, n);
        double eps = rng.bernoulli(0.1) ? 0.0 : std::pow(10.0, rng.uniform(-8.0, 0.5));
        auto S2 = perturb(rng, S, eps);
        double dS = inf_norm_diff(S, S2);
        auto P = softmax_t(S, T0), P2 = softmax_t(S2, T0);
        double lhs = inf_norm_diff(P, P2);
        double bound = dS / T0;
        tally.slack(bound - lhs);
        // activation a = (p + eps_p)^eta
        double lhs_a = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            lhs_a = std::max(lhs_a, std::abs(std::pow(P[i] + p.eps_p, p.eta) - std::pow(P2[i] + p.eps_p, p.eta)));
        double bound_a = p.eta * std::pow(p.eps_p, p.eta - 1.0) / T0 * dS;
        act_min_slack = std::min(act_min_slack, bound_a - lhs_a);
        if (lhs > bound + kRoundTol || lhs_a > bound_a + kRoundTol) {
            tally.violation({{"S", S}, {"S_prime", S2}, {"T0", T0}, {"lhs", lhs}, {"bound", bound},
                             {"lhs_activation", lhs_a}, {"bound_activation", bound_a}});
        }
    }
    r.extra["activation_min_slack"] = act_min_slack;
    return r;
}

CheckReport check_gate_bound(std::size_t trials, std::uint64_t seed, const StabilityParams& p) {
    if (trials == 0) throw std::invalid_argument("check_gate_bound: trials must be >= 1");
    CheckReport r;
    r.name = "gate_bound";
    r.params = {{"trials", trials}, {"seed", seed}, {"delta", p.delta}, {"gate_scale", p.gate_scale}};
    Tally tally{r};
    Rng rng(seed);
    // |g - 1| for g = fl(1 + delta * tanh) can exceed delta by one rounding of 1.
    const double tol = 4.0 * std::numeric_limits<double>::epsilon();
    double max_dev = 0.0;
    std::size_t edges_seen = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        ++r.trials;
        std::size_t n = 2 + rng.index(std::max<std::size_t>(p.max_nodes - 1, 1));
        auto sg = random_graph(rng, n);
        ReaderParams params = random_params(derive_seed(seed, t), 2, p.gate_scale * rng.uniform(0.1, 2.0));
        params.cfg.delta = p.delta;
        auto pg = plain_prop(sg);
        Tensor H0 = normal_tensor(n, params.cfg.hidden, derive_seed(seed, t + 7919));
        nn::Tape tape;
        ParamBinder bind(tape);
        std::vector<Tensor> traces;
        encode_channel(bind, params, pg, tape.constant(H0), true, false, params.cfg.C_e, &traces);
        double dev = 0.0;
        for (const auto& g : traces) {
            for (double x : g.data()) dev = std::max(dev, std::abs(x - 1.0));
            edges_seen += g.rows();
        }
        max_dev = std::max(max_dev, dev);
        tally.slack(p.delta - dev);
        if (dev > p.delta + tol) tally.violation({{"n", n}, {"edges", edges_json(sg)}, {"max_dev", dev}});
    }
    r.extra["max_abs_gate_minus_one"] = max_dev;
    r.extra["directed_edges_checked"] = edges_seen;
    return r;
}

CheckReport check_soft_retrieval(std::size_t trials, std::uint64_t seed, const StabilityParams& p) {
    if (trials == 0) throw std::invalid_argument("check_soft_retrieval: trials must be >= 1");
    CheckReport r;
    r.name = "soft_retrieval_l1";
    r.params = {{"trials", trials}, {"seed", seed}};
    Tally tally{r};
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        ++r.trials;
        std::size_t n = 1 + rng.index(p.max_nodes);
        double tau = std::pow(10.0, rng.uniform(-1.5, 0.5));
        auto s = random_scores(rng, n);
        double eps = rng.bernoulli(0.1) ? 0.0 : std::pow(10.0, rng.uniform(-8.0, 0.5));
        auto s2 = perturb(rng, s, eps);
        double es = inf_norm_diff(s, s2);
        double lhs = l1_diff(softmax_t(s, tau), softmax_t(s2, tau));
        double bound = 2.0 / tau * es;
        tally.slack(bound - lhs);
        if (lhs > bound + kRoundTol)
            tally.violation({{"s", s}, {"s_prime", s2}, {"tau", tau}, {"lhs", lhs}, {"bound", bound}});
    }
    return r;
}

std::vector<CheckReport> check_stability_suite(std::size_t trials, std::uint64_t seed, const StabilityParams& p) {
    return {check_softmax_lipschitz(trials, derive_seed(seed, 1), p), check_gate_bound(trials, derive_seed(seed, 2), p),
            check_soft_retrieval(trials, derive_seed(seed, 3), p)};
}

// ---- top-k ---------------------------------------------------------------

namespace {

struct TopkOutcome {
    bool contained = true;
    bool gap_ok = true;  // unchanged set whenever the gap exceeds 2 eps
};

TopkOutcome topk_compare(const std::vector<double>& s, const std::vector<double>& s2, double eps, std::size_t k,
                         double* slack) {
    auto a = top_k_indices(s, k), b = top_k_indices(s2, k);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> sym;
    std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(sym));
    std::vector<double> sorted(s);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    std::size_t kk = std::min(k, s.size());
    double tk = sorted[kk - 1];
    double scale = 1.0;
    for (double x : s) scale = std::max(scale, std::abs(x));
    double tol = 1e-12 * scale;
    TopkOutcome o;
    double worst = 2.0 * eps;
    for (auto d : sym) {
        double dist = std::abs(s[d] - tk);
        worst = std::min(worst, 2.0 * eps - dist);
        if (dist > 2.0 * eps + tol) o.contained = false;
    }
    if (kk < s.size() && sorted[kk - 1] - sorted[kk] > 2.0 * eps + tol && !sym.empty()) o.gap_ok = false;
    if (slack) *slack = worst;
    return o;
}

}  // namespace

CheckReport check_topk_boundary(const std::vector<double>& s, double eps, std::size_t k, std::size_t trials,
                                std::uint64_t seed, double perturb_scale) {
    if (eps < 0.0) throw std::invalid_argument("check_topk_boundary: eps must be >= 0");
    if (s.empty() || k == 0) throw std::invalid_argument("check_topk_boundary: need scores and k >= 1");
    CheckReport r;
    r.name = "topk_boundary";
    r.params = {{"s", s}, {"eps", eps}, {"k", k}, {"trials", trials}, {"seed", seed}, {"perturb_scale", perturb_scale}};
    Tally tally{r};
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        ++r.trials;
        auto s2 = perturb(rng, s, eps * perturb_scale);
        double slack = 0.0;
        auto o = topk_compare(s, s2, eps, k, &slack);
        tally.slack(slack);
        if (!o.contained || !o.gap_ok)
            tally.violation({{"s", s}, {"s_prime", s2}, {"eps", eps}, {"k", k}, {"contained", o.contained},
                             {"gap_rule", o.gap_ok}});
    }
    return r;
}

CheckReport check_topk_boundary_corners(const std::vector<double>& s, double eps, std::size_t k) {
    if (eps < 0.0) throw std::invalid_argument("check_topk_boundary: eps must be >= 0");
    if (s.empty() || s.size() > 20 || k == 0) throw std::invalid_argument("check_topk_boundary_corners: bad size");
    CheckReport r;
    r.name = "topk_boundary_corners";
    r.params = {{"s", s}, {"eps", eps}, {"k", k}};
    Tally tally{r};
    std::size_t unchanged = 0;
    for (std::uint64_t mask = 0; mask < (1ULL << s.size()); ++mask) {
        ++r.trials;
        std::vector<double> s2(s);
        for (std::size_t i = 0; i < s.size(); ++i) s2[i] += (mask >> i & 1ULL) ? eps : -eps;
        double slack = 0.0;
        auto o = topk_compare(s, s2, eps, k, &slack);
        tally.slack(slack);
        auto a = top_k_indices(s, k), b = top_k_indices(s2, k);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a == b) ++unchanged;
        if (!o.contained || !o.gap_ok)
            tally.violation({{"s", s}, {"s_prime", s2}, {"eps", eps}, {"k", k}});
    }
    r.extra["unchanged_topk"] = unchanged;
    return r;
}

CheckReport check_topk_boundary_random(std::size_t trials, std::uint64_t seed, double perturb_scale) {
    CheckReport r;
    r.name = "topk_boundary_random";
    r.params = {{"trials", trials}, {"seed", seed}, {"perturb_scale", perturb_scale}};
    Tally tally{r};
    Rng rng(seed);
    std::size_t gap_cases = 0, changed = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        ++r.trials;
        std::size_t n = 1 + rng.index(30);
        std::vector<double> s(n);
        bool ties = rng.bernoulli(0.2);
        for (auto& x : s) x = ties ? std::round(rng.uniform(0.0, 5.0)) : rng.normal();
        std::size_t k = 1 + rng.index(n);
        double eps = rng.bernoulli(0.05) ? 0.0 : std::pow(10.0, rng.uniform(-4.0, 0.0));
        auto s2 = perturb(rng, s, eps * perturb_scale);
        double slack = 0.0;
        auto o = topk_compare(s, s2, eps, k, &slack);
        tally.slack(slack);
        std::vector<double> sorted(s);
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        if (k < n && sorted[k - 1] - sorted[k] > 2.0 * eps) ++gap_cases;
        auto a = top_k_indices(s, k), b = top_k_indices(s2, k);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != b) ++changed;
        if (!o.contained || !o.gap_ok)
            tally.violation({{"s", s}, {"s_prime", s2}, {"eps", eps}, {"k", k}, {"contained", o.contained},
                             {"gap_rule", o.gap_ok}});
    }
    r.extra["gap_cases"] = gap_cases;
    r.extra["changed_topk"] = changed;
    return r;
}

// ---- influence cone ------------------------------------------------------

std::vector<std::size_t> bfs_distances(const StructuralGraph& sg, const std::vector<std::size_t>& sources) {
    std::vector<std::size_t> dist(sg.n, kFar);
    std::deque<std::size_t> q;
    for (auto s : sources) {
        if (s >= sg.n) throw std::invalid_argument("bfs_distances: source out of range");
        if (dist[s] != 0) {
            dist[s] = 0;
            q.push_back(s);
        }
    }
    while (!q.empty()) {
        auto u = q.front();
        q.pop_front();
        for (auto v : sg.adj[u]) {
            if (dist[v] == kFar) {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    return dist;
}

ConeTrial influence_cone_trial(const StructuralGraph& sg, ReaderParams& params, const Tensor& H0,
                               const GraphEdit& edit, std::size_t r_z) {
    std::size_t n = sg.n;
    if (H0.rows() != n || H0.cols() != params.cfg.hidden)
        throw std::invalid_argument("influence_cone_trial: H0 shape mismatch");
    auto pairs = sg.edges;
    Tensor H0b = H0;
    std::vector<std::size_t> U;
    switch (edit.kind) {
        case EditKind::AddEdge:
        case EditKind::RemoveEdge: {
            if (edit.u >= n || edit.v >= n || edit.u == edit.v)
                throw std::invalid_argument("influence_cone_trial: bad edge edit");
            auto key = std::minmax(edit.u, edit.v);
            std::pair<std::size_t, std::size_t> e{key.first, key.second};
            auto it = std::find(pairs.begin(), pairs.end(), e);
            if (edit.kind == EditKind::AddEdge && it == pairs.end()) pairs.push_back(e);
            if (edit.kind == EditKind::RemoveEdge && it != pairs.end()) pairs.erase(it);
            U = {edit.u, edit.v};
            break;
        }
        case EditKind::NodeFeature:
            if (edit.u >= n) throw std::invalid_argument("influence_cone_trial: bad node edit");
            H0b.at(edit.u, 0) += edit.magnitude;
            U = {edit.u};
            break;
        case EditKind::None: break;
    }
    StructuralGraph sg2 = structural_graph_from_pairs(n, pairs);

    // normalisation statistics and the summary are frozen at G
    auto raw = raw_features(sg);
    auto ns = column_stats(raw.node), es = column_stats(raw.edge);
    auto base = graph_summary_and_normalize(sg, node_features(sg), edge_pair_features(sg));
    PropagationGraph P = frozen_prop(sg, ns, es, base.summary);
    PropagationGraph P2 = frozen_prop(sg2, ns, es, base.summary);

    auto all_pairs = sg.edges;
    all_pairs.insert(all_pairs.end(), sg2.edges.begin(), sg2.edges.end());
    StructuralGraph uni = structural_graph_from_pairs(n, all_pairs);
    auto dist = U.empty() ? std::vector<std::size_t>(n, kFar) : bfs_distances(uni, U);

    // Nodes whose aggregation inputs other than H differ: self coefficient,
    // incoming edge set, coefficients or gate inputs.
    std::vector<char> affected(n, 0);
    for (std::size_t v = 0; v < n; ++v)
        if (P.self_eta[v] != P2.self_eta[v]) affected[v] = 1;
    auto row_eq = [](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
        for (std::size_t c = 0; c < a.cols(); ++c)
            if (a.at(i, c) != b.at(j, c)) return false;
        return true;
    };
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> idx1, idx2;
    for (std::size_t i = 0; i < P.num_directed(); ++i) idx1[{P.src[i], P.dst[i]}] = i;
    for (std::size_t i = 0; i < P2.num_directed(); ++i) idx2[{P2.src[i], P2.dst[i]}] = i;
    for (const auto& [key, i] : idx1) {
        auto it = idx2.find(key);
        if (it == idx2.end()) {
            affected[key.second] = 1;
            continue;
        }
        std::size_t j = it->second;
        bool same = P.eta[i] == P2.eta[j] && row_eq(P.node_feat, P.src[i], P2.node_feat, P2.src[j]) &&
                    row_eq(P.node_feat, P.dst[i], P2.node_feat, P2.dst[j]) &&
                    row_eq(P.edge_feat, P.pair_row[i], P2.edge_feat, P2.pair_row[j]);
        if (!same) affected[key.second] = 1;
    }
    for (const auto& [key, j] : idx2)
        if (!idx1.count(key)) affected[key.second] = 1;

    ConeTrial out;
    std::size_t a = 0;
    bool any_affected = false;
    for (std::size_t v = 0; v < n; ++v) {
        if (!affected[v]) continue;
        any_affected = true;
        a = std::max(a, dist[v]);
    }
    out.gate_radius = any_affected ? (a == 0 ? 0 : a - 1) : 0;
    if (any_affected && (a == kFar || out.gate_radius > r_z)) {
        out.skipped = true;
        return out;
    }

    Tensor H = encode_both(params, P, H0);
    Tensor H2 = encode_both(params, P2, H0b);
    std::size_t L = params.layers.size();
    std::size_t cone = L + r_z;
    for (std::size_t v = 0; v < n; ++v) {
        double diff = 0.0;
        for (std::size_t c = 0; c < H.cols(); ++c) diff = std::max(diff, std::abs(H.at(v, c) - H2.at(v, c)));
        if (diff > 0.0 && dist[v] != kFar) out.influence_radius = std::max(out.influence_radius, dist[v]);
        if (dist[v] != kFar && dist[v] <= cone) continue;
        ++out.checked;
        out.max_outside_diff = std::max(out.max_outside_diff, diff);
        if (diff >= 1e-12) {
            if (out.violations++ == 0) {
                out.counterexample = {{"n", n},         {"edges", edges_json(sg)}, {"edit", edit_name(edit.kind)},
                                      {"u", edit.u},    {"v", edit.v},             {"node", v},
                                      {"distance", dist[v] == kFar ? -1 : static_cast<long long>(dist[v])},
                                      {"diff", diff}};
            }
        }
    }
    return out;
}

CheckReport check_influence_cone(const StructuralGraph& sg, ReaderParams& params, const Tensor& H0,
                                 const GraphEdit& edit, std::size_t r_z) {
    CheckReport r;
    r.name = "influence_cone";
    r.params = {{"n", sg.n}, {"L", params.layers.size()}, {"r_z", r_z}, {"edit", edit_name(edit.kind)},
                {"u", edit.u}, {"v", edit.v}};
    Tally tally{r};
    auto t = influence_cone_trial(sg, params, H0, edit, r_z);
    r.trials = 1;
    if (t.skipped) {
        r.skipped = 1;
    } else {
        tally.slack(1e-12 - t.max_outside_diff);
        r.violations = t.violations;
        r.counterexample = t.counterexample;
    }
    r.extra = {{"gate_radius", t.gate_radius}, {"influence_radius", t.influence_radius},
               {"nodes_outside_cone", t.checked}, {"max_outside_diff", t.max_outside_diff}};
    return r;
}

CheckReport check_influence_cone_random(std::size_t trials, std::uint64_t seed, std::size_t L, std::size_t r_z) {
    CheckReport r;
    r.name = "influence_cone_random";
    r.params = {{"trials", trials}, {"seed", seed}, {"L", L}, {"r_z", r_z}};
    Tally tally{r};
    Rng rng(seed);
    std::size_t outside = 0, max_influence = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        ++r.trials;
        std::size_t n = 6 + rng.index(25);
        StructuralGraph sg;
        if (rng.bernoulli(0.3)) {
            // sparse chains and trees keep most nodes outside the cone
            std::vector<std::pair<std::size_t, std::size_t>> pairs;
            for (std::size_t v = 1; v < n; ++v) pairs.emplace_back(rng.index(v), v);
            sg = structural_graph_from_pairs(n, pairs);
        } else {
            sg = random_graph(rng, n);
        }
        GraphEdit e;
        double pick = rng.uniform();
        e.u = rng.index(n);
        do {
            e.v = rng.index(n);
        } while (e.v == e.u);
        if (pick < 0.4) {
            e.kind = EditKind::AddEdge;
        } else if (pick < 0.8) {
            e.kind = EditKind::RemoveEdge;
            if (!sg.edges.empty()) {
                auto ed = sg.edges[rng.index(sg.edges.size())];
                e.u = ed.first;
                e.v = ed.second;
            }
        } else {
            e.kind = EditKind::NodeFeature;
            e.magnitude = rng.uniform(-2.0, 2.0);
        }
        ReaderParams params = random_params(derive_seed(seed, t), L, 2.0);
        Tensor H0 = normal_tensor(n, params.cfg.hidden, derive_seed(seed, t + 104729));
        auto ct = influence_cone_trial(sg, params, H0, e, r_z);
        if (ct.skipped) {
            ++r.skipped;
            continue;
        }
        outside += ct.checked;
        max_influence = std::max(max_influence, ct.influence_radius);
        tally.slack(1e-12 - ct.max_outside_diff);
        if (ct.violations > 0) tally.violation(ct.counterexample);
    }
    r.extra = {{"nodes_outside_cone", outside}, {"max_influence_radius", max_influence}};
    return r;
}

// ---- SNR recurrence ------------------------------------------------------

BlockCoefficients block_coefficients(const Matrix& T, const std::vector<char>& R) {
    std::size_t n = T.size();
    if (R.size() != n) throw std::invalid_argument("block_coefficients: region size mismatch");
    BlockCoefficients c;
    bool firstA = true;
    for (std::size_t j = 0; j < n; ++j) {
        double in_r = 0.0, out_r = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (T[i].size() != n) throw std::invalid_argument("block_coefficients: matrix not square");
            if (T[i][j] < 0.0) throw std::invalid_argument("block_coefficients: negative entry");
            (R[i] ? in_r : out_r) += T[i][j];
        }
        if (R[j]) {
            c.A = firstA ? in_r : std::min(c.A, in_r);
            firstA = false;
            c.C = std::max(c.C, out_r);
        } else {
            c.B = std::max(c.B, out_r);
        }
    }
    return c;
}

double snr_inverse_bound(const std::vector<BlockCoefficients>& coeffs, double Q0) {
    std::size_t L = coeffs.size();
    auto tail = [&](std::size_t from) {  // prod_{t=from}^{L} B_t / A_t, 1-based
        double p = 1.0;
        for (std::size_t t = from; t <= L; ++t) p *= coeffs[t - 1].B / coeffs[t - 1].A;
        return p;
    };
    double q = tail(1) * Q0;
    for (std::size_t i = 1; i <= L; ++i) q += coeffs[i - 1].C / coeffs[i - 1].A * tail(i + 1);
    return q;
}

namespace {

struct SnrTrial {
    bool skipped = false;
    bool theorem_applies = false;
    std::size_t violations = 0;
    double slack = std::numeric_limits<double>::infinity();
    nlohmann::json counterexample;
};

SnrTrial snr_trial(const std::vector<Matrix>& T, const std::vector<char>& R, const std::vector<double>& a0) {
    SnrTrial out;
    std::size_t n = R.size();
    auto mass = [&](const std::vector<double>& a, bool in) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (static_cast<bool>(R[i]) == in) s += a[i];
        return s;
    };
    double S = mass(a0, true), N = mass(a0, false);
    if (!(S > 0.0)) {
        out.skipped = true;
        return out;
    }
    double Q0 = N / S;
    std::vector<BlockCoefficients> coeffs;
    std::vector<double> a = a0;
    auto fail = [&](const std::string& what, std::size_t l, double lhs, double rhs) {
        if (out.violations++ == 0)
            out.counterexample = {{"inequality", what}, {"layer", l}, {"lhs", lhs}, {"rhs", rhs},
                                  {"signal0", a0},      {"R", R},     {"T", T}};
    };
    for (std::size_t l = 0; l < T.size(); ++l) {
        auto c = block_coefficients(T[l], R);
        coeffs.push_back(c);
        std::vector<double> next(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) next[i] += T[l][i][j] * a[j];
        // block ratios of this signal against the extremal column sums
        double rr = 0.0, nn_ = 0.0, nr = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double m = T[l][i][j] * a[j];
                if (R[i] && R[j]) rr += m;
                else if (!R[i] && !R[j]) nn_ += m;
                else if (!R[i] && R[j]) nr += m;
            }
        double tolS = 1e-12 * std::max(1.0, S);
        double Sl = mass(next, true), Nl = mass(next, false);
        double rhsN = c.B * N + c.C * S;
        double tolN = 1e-12 * std::max(1.0, rhsN);
        if (rr < c.A * S - tolS) fail("retained >= A S", l + 1, rr, c.A * S);
        if (nn_ > c.B * N + tolN) fail("noise self <= B N", l + 1, nn_, c.B * N);
        if (nr > c.C * S + tolN) fail("leak <= C S", l + 1, nr, c.C * S);
        if (Sl < c.A * S - tolS) fail("S_l >= A S_{l-1}", l + 1, Sl, c.A * S);
        if (Nl > rhsN + tolN) fail("N_l <= B N_{l-1} + C S_{l-1}", l + 1, Nl, rhsN);
        out.slack = std::min(out.slack, std::min(Sl - c.A * S, rhsN - Nl));
        a = std::move(next);
        S = Sl;
        N = Nl;
    }
    bool positive = std::all_of(coeffs.begin(), coeffs.end(), [](const BlockCoefficients& c) { return c.A > 0.0; });
    if (positive) {
        out.theorem_applies = true;
        double QL = N / S;
        double bound = snr_inverse_bound(coeffs, Q0);
        if (QL > bound * (1.0 + 1e-10) + 1e-300) fail("Q_L <= closed form", T.size(), QL, bound);
        out.slack = std::min(out.slack, bound - QL);
    }
    return out;
}

std::vector<double> random_signal(Rng& rng, std::size_t n) {
    std::vector<double> a(n);
    for (auto& x : a) x = rng.bernoulli(0.3) ? 0.0 : std::pow(rng.uniform(), 3.0);
    return a;
}

Matrix random_operator(Rng& rng, std::size_t n, const std::vector<char>& R) {
    Matrix T(n, std::vector<double>(n, 0.0));
    double kind = rng.uniform();
    if (kind < 0.35) {
        for (auto& row : T)
            for (auto& x : row) x = rng.uniform() * 2.0 / static_cast<double>(n);
    } else if (kind < 0.8) {
        // gated, symmetric-normalised adjacency with self loops
        auto sg = random_graph(rng, n);
        std::vector<double> dt(n);
        for (std::size_t v = 0; v < n; ++v) dt[v] = static_cast<double>(sg.degree(v)) + 1.0;
        for (std::size_t v = 0; v < n; ++v) T[v][v] = 1.0 / dt[v];
        for (auto [u, v] : sg.edges) {
            double w = 1.0 / std::sqrt(dt[u] * dt[v]);
            T[u][v] = w * rng.uniform(0.9, 1.1);
            T[v][u] = w * rng.uniform(0.9, 1.1);
        }
    } else {
        // no leakage between the regions
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (R[i] == R[j]) T[i][j] = rng.uniform() / static_cast<double>(n);
    }
    return T;
}

std::vector<char> random_region(Rng& rng, std::size_t n) {
    std::vector<char> R(n, 0);
    std::size_t k = 1 + rng.index(n - 1);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (std::size_t i = 0; i < k; ++i) R[idx[i]] = 1;
    return R;
}

}  // namespace

CheckReport snr_recurrence_check(const std::vector<Matrix>& T, const std::vector<char>& R,
                                 const std::vector<double>& signal0, std::size_t trials, std::uint64_t seed) {
    std::size_t n = R.size();
    std::size_t in_r = static_cast<std::size_t>(std::count(R.begin(), R.end(), 1));
    if (in_r == 0 || in_r == n) throw std::invalid_argument("snr_recurrence_check: R must be a nonempty proper subset");
    if (signal0.size() != n) throw std::invalid_argument("snr_recurrence_check: signal size mismatch");
    for (const auto& M : T) block_coefficients(M, R);  // validates shape and sign
    CheckReport r;
    r.name = "snr_recurrence";
    r.params = {{"n", n}, {"L", T.size()}, {"trials", trials}, {"seed", seed}};
    Tally tally{r};
    Rng rng(seed);
    std::size_t theorem = 0;
    for (std::size_t t = 0; t < std::max<std::size_t>(trials, 1); ++t) {
        ++r.trials;
        auto a0 = t == 0 ? signal0 : random_signal(rng, n);
        auto st = snr_trial(T, R, a0);
        if (st.skipped) {
            ++r.skipped;
            continue;
        }
        theorem += st.theorem_applies;
        tally.slack(st.slack);
        if (st.violations) tally.violation(st.counterexample);
    }
    std::vector<nlohmann::json> coeffs;
    for (const auto& M : T) {
        auto c = block_coefficients(M, R);
        coeffs.push_back({{"A", c.A}, {"B", c.B}, {"C", c.C}, {"xi", 0.0}});
    }
    r.extra = {{"coefficients", coeffs}, {"theorem_trials", theorem}};
    return r;
}

CheckReport snr_recurrence_random(std::size_t trials, std::uint64_t seed, std::size_t n, std::size_t L) {
    if (n < 2) throw std::invalid_argument("snr_recurrence_random: need n >= 2");
    CheckReport r;
    r.name = "snr_recurrence_random";
    r.params = {{"n", n}, {"L", L}, {"trials", trials}, {"seed", seed}};
    Tally tally{r};
    Rng rng(seed);
    std::size_t theorem = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        ++r.trials;
        auto R = random_region(rng, n);
        std::vector<Matrix> T;
        for (std::size_t l = 0; l < L; ++l) T.push_back(random_operator(rng, n, R));
        auto st = snr_trial(T, R, random_signal(rng, n));
        if (st.skipped) {
            ++r.skipped;
            continue;
        }
        theorem += st.theorem_applies;
        tally.slack(st.slack);
        if (st.violations) tally.violation(st.counterexample);
    }
    r.extra = {{"theorem_trials", theorem}};
    return r;
}

// ---- budget --------------------------------------------------------------

BudgetResult budget_bound(const std::vector<double>& scores, const std::vector<char>& gold, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("budget_bound: rho must lie in (0,1]");
    if (gold.size() != scores.size()) throw std::invalid_argument("budget_bound: gold mask size mismatch");
    // documents without a finite score cannot be retrieved and are left out
    std::vector<std::size_t> live;
    for (std::size_t d = 0; d < scores.size(); ++d)
        if (std::isfinite(scores[d])) live.push_back(d);
    std::vector<double> gold_scores;
    BudgetResult b;
    bool nonneg = true;
    for (auto d : live) {
        if (gold[d]) gold_scores.push_back(scores[d]);
        else {
            b.distractor_mass += scores[d];
            if (scores[d] < 0.0) nonneg = false;
        }
    }
    std::size_t total_gold = static_cast<std::size_t>(std::count(gold.begin(), gold.end(), 1));
    if (total_gold == 0) throw std::invalid_argument("budget_bound: no gold documents");
    double want = rho * static_cast<double>(total_gold);
    b.m = static_cast<std::size_t>(std::ceil(want * (1.0 - 1e-12)));
    b.m = std::clamp<std::size_t>(b.m, 1, total_gold);
    if (gold_scores.size() < b.m) return b;
    std::sort(gold_scores.begin(), gold_scores.end(), std::greater<>());
    b.tau = gold_scores[b.m - 1];
    if (!(b.tau > 0.0) || !nonneg) return b;
    b.applicable = true;
    // ties ranked against the gold documents
    std::vector<std::size_t> order(live);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (scores[x] != scores[y]) return scores[x] > scores[y];
        return !gold[x] && gold[y];
    });
    std::size_t hits = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (gold[order[i]] && ++hits == b.m) {
            b.budget = i + 1;
            break;
        }
    }
    b.bound = static_cast<double>(b.m) + b.distractor_mass / b.tau;
    return b;
}

CheckReport budget_bound_check(const std::vector<double>& scores, const std::vector<char>& gold, double rho) {
    CheckReport r;
    r.name = "budget_bound";
    r.params = {{"rho", rho}, {"docs", scores.size()}};
    Tally tally{r};
    auto b = budget_bound(scores, gold, rho);
    r.trials = 1;
    if (!b.applicable) {
        r.skipped = 1;
    } else {
        double slack = b.bound - static_cast<double>(b.budget);
        tally.slack(slack);
        if (static_cast<double>(b.budget) > b.bound * (1.0 + 1e-12))
            tally.violation({{"scores", scores}, {"gold", gold}, {"rho", rho}, {"budget", b.budget}, {"bound", b.bound}});
    }
    r.extra = {{"m", b.m}, {"budget", b.budget}, {"tau", b.tau}, {"distractor_mass", b.distractor_mass},
               {"bound", b.bound}};
    return r;
}

CheckReport budget_bound_random(std::size_t trials, std::uint64_t seed) {
    CheckReport r;
    r.name = "budget_bound_random";
    r.params = {{"trials", trials}, {"seed", seed}};
    Tally tally{r};
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        ++r.trials;
        std::size_t n = 2 + rng.index(40);
        std::vector<double> s(n);
        std::vector<char> gold(n, 0);
        bool ties = rng.bernoulli(0.3);
        for (auto& x : s) x = ties ? std::round(rng.uniform(0.0, 4.0)) : std::pow(rng.uniform(), 2.0);
        if (rng.bernoulli(0.05)) s[rng.index(n)] = -rng.uniform();  // outside the hypothesis
        std::size_t g = 1 + rng.index(std::min<std::size_t>(n - 1, 6));
        for (std::size_t i = 0; i < g; ++i) gold[rng.index(n)] = 1;
        double rho = rng.bernoulli(0.3) ? 1.0 : rng.uniform(0.01, 1.0);
        auto b = budget_bound(s, gold, rho);
        if (!b.applicable) {
            ++r.skipped;
            continue;
        }
        tally.slack(b.bound - static_cast<double>(b.budget));
        if (static_cast<double>(b.budget) > b.bound * (1.0 + 1e-12))
            tally.violation({{"scores", s}, {"gold", gold}, {"rho", rho}, {"budget", b.budget}, {"bound", b.bound}});
    }
    return r;
}

ProjectionRatios projection_ratios(const std::vector<double>& entity_scores, const std::vector<char>& R,
                                   const std::vector<double>& doc_scores, const std::vector<char>& gold, double rho) {
    if (R.size() != entity_scores.size()) throw std::invalid_argument("projection_ratios: region size mismatch");
    ProjectionRatios p;
    for (std::size_t i = 0; i < R.size(); ++i) (R[i] ? p.S : p.N) += entity_scores[i];
    auto b = budget_bound(doc_scores, gold, rho);
    p.M_minus = b.distractor_mass;
    p.tau = b.tau;
    p.m = b.m;
    p.K = p.N != 0.0 ? p.M_minus / p.N : 0.0;
    p.c = p.S != 0.0 ? p.tau * static_cast<double>(p.m) / p.S : 0.0;
    return p;
}

// ---- drift ---------------------------------------------------------------

nlohmann::json DriftMeasure::to_json() const {
    return {{"delta_X", dX}, {"delta_A", dA}, {"delta_seed", dSeed}, {"delta_Z", dZ}, {"delta_B", dB},
            {"delta_aug", total()}};
}

nlohmann::json DriftReport::to_json() const {
    return {{"drift", drift.to_json()},
            {"score_drift", score_drift},
            {"ratio", ratio},
            {"universe_entities", universe_entities},
            {"universe_docs", universe_docs}};
}

namespace {

// Per-layer gate inputs z_uv keyed by directed (src, dst) over local ids.
std::vector<std::map<std::pair<std::size_t, std::size_t>, std::vector<double>>> gate_inputs(
    ReaderParams& params, const PropagationGraph& pg) {
    std::vector<std::map<std::pair<std::size_t, std::size_t>, std::vector<double>>> out(params.layers.size());
    if (pg.num_directed() == 0) return out;
    nn::Tape tape;
    ParamBinder bind(tape);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& lp = params.layers[l];
        Tensor ne = mlp2(bind, lp.enc_node, tape.constant(pg.node_feat)).value();
        Tensor pe = mlp2(bind, lp.enc_pair, tape.constant(pg.edge_feat)).value();
        Tensor ge = mlp2(bind, lp.enc_graph, tape.constant(pg.summary)).value();
        for (std::size_t i = 0; i < pg.num_directed(); ++i) {
            std::vector<double> z;
            auto r1 = ne.row(pg.src[i]), r2 = ne.row(pg.dst[i]), r3 = pe.row(pg.pair_row[i]);
            z.insert(z.end(), r1.begin(), r1.end());
            z.insert(z.end(), r2.begin(), r2.end());
            z.insert(z.end(), r3.begin(), r3.end());
            z.insert(z.end(), ge.data().begin(), ge.data().end());
            out[l][{pg.src[i], pg.dst[i]}] = std::move(z);
        }
    }
    return out;
}

std::vector<double> doc_scores_for(const PreparedGraph& pg, std::string_view question, const QueryPlan& plan,
                                   const TextEmbedder& emb, ReaderParams& params, DocScoreMode mode) {
    QueryInputs in{entry_components(plan, question, pg, emb), emb.embed(question)};
    nn::Tape tape;
    ParamBinder bind(tape);
    auto f = reader_forward(bind, params, pg, in);
    return document_scores(f.a_final.value().values(), pg.M, mode, params.cfg.K_e);
}

}  // namespace

DriftReport drift_measure(const PreparedGraph& g, const PreparedGraph& g2, std::string_view question,
                          const QueryPlan& plan, const TextEmbedder& emb, ReaderParams& params, DocScoreMode mode) {
    if (g.graph.num_entities() == 0 || g2.graph.num_entities() == 0)
        throw std::invalid_argument("drift_measure: empty graph");
    for (const auto& d : g.graph.documents()) {
        auto j = g2.graph.find_document(d.id);
        if (j && g2.graph.document(*j).text != d.text)
            throw std::invalid_argument("drift_measure: document id '" + d.id + "' has different text");
    }
    // universe of entities and documents
    std::vector<std::string> names = g.graph.entity_names();
    std::map<std::string, std::size_t> uidx;
    for (std::size_t i = 0; i < names.size(); ++i) uidx[names[i]] = i;
    for (const auto& nm : g2.graph.entity_names())
        if (uidx.emplace(nm, names.size()).second) names.push_back(nm);
    std::size_t U = names.size();
    auto map_of = [&](const PreparedGraph& pg) {
        std::vector<std::size_t> m(pg.graph.num_entities());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = uidx.at(pg.graph.entity_name(i));
        return m;
    };
    auto m1 = map_of(g), m2 = map_of(g2);
    std::vector<std::optional<std::size_t>> inv1(U), inv2(U);
    for (std::size_t i = 0; i < m1.size(); ++i) inv1[m1[i]] = i;
    for (std::size_t i = 0; i < m2.size(); ++i) inv2[m2[i]] = i;

    std::vector<std::string> doc_ids;
    std::map<std::string, std::size_t> didx;
    for (const auto* pg : {&g, &g2})
        for (const auto& d : pg->graph.documents())
            if (didx.emplace(d.id, doc_ids.size()).second) doc_ids.push_back(d.id);

    DriftReport rep;
    rep.universe_entities = U;
    rep.universe_docs = doc_ids.size();
    DriftMeasure& dm = rep.drift;

    // node features with presence bit
    for (std::size_t v = 0; v < U; ++v) {
        double sq = 0.0;
        std::size_t cols = std::max(g.X.cols(), g2.X.cols());
        for (std::size_t c = 0; c < cols; ++c) {
            double a = inv1[v] ? g.X.at(*inv1[v], c) : 0.0;
            double b = inv2[v] ? g2.X.at(*inv2[v], c) : 0.0;
            sq += (a - b) * (a - b);
        }
        double pa = inv1[v] ? 1.0 : 0.0, pb = inv2[v] ? 1.0 : 0.0;
        sq += (pa - pb) * (pa - pb);
        dm.dX = std::max(dm.dX, std::sqrt(sq));
    }

    // self-looped row-normalised adjacency; padding rows keep only the loop
    auto adj_row = [&](const PreparedGraph& pg, const std::vector<std::optional<std::size_t>>& inv,
                       const std::vector<std::size_t>& m, std::size_t v) {
        std::map<std::size_t, double> row;
        if (!inv[v]) {
            row[v] = 1.0;
            return row;
        }
        const auto& nb = pg.sg.adj[*inv[v]];
        double w = 1.0 / (static_cast<double>(nb.size()) + 1.0);
        row[v] = w;
        for (auto u : nb) row[m[u]] = w;
        return row;
    };
    std::vector<std::map<std::size_t, double>> A2rows(U);
    for (std::size_t v = 0; v < U; ++v) {
        auto r1 = adj_row(g, inv1, m1, v);
        A2rows[v] = adj_row(g2, inv2, m2, v);
        double s = 0.0;
        std::set<std::size_t> keys;
        for (auto& [k, x] : r1) keys.insert(k);
        for (auto& [k, x] : A2rows[v]) keys.insert(k);
        for (auto k : keys) {
            double a = r1.count(k) ? r1[k] : 0.0;
            double b = A2rows[v].count(k) ? A2rows[v][k] : 0.0;
            s += std::abs(a - b);
        }
        dm.dA = std::max(dm.dA, s);
    }

    // entry scores before soft addressing
    const auto& lam = params.lambda.value.values();
    auto s1 = entry_scores(plan, question, g, emb, lam).total;
    auto s2 = entry_scores(plan, question, g2, emb, lam).total;
    for (std::size_t v = 0; v < U; ++v) {
        double a = inv1[v] ? s1[*inv1[v]] : 0.0;
        double b = inv2[v] ? s2[*inv2[v]] : 0.0;
        dm.dSeed = std::max(dm.dSeed, std::abs(a - b));
    }

    // gate inputs; an edge absent from G contributes a zero input there
    auto z1 = gate_inputs(params, g.prop), z2 = gate_inputs(params, g2.prop);
    for (std::size_t l = 0; l < z2.size(); ++l) {
        std::map<std::pair<std::size_t, std::size_t>, const std::vector<double>*> zg;
        for (const auto& [key, z] : z1[l]) zg[{m1[key.first], m1[key.second]}] = &z;
        std::vector<double> acc(U, 0.0);
        for (const auto& [key, z] : z2[l]) {
            std::size_t u = m2[key.first], v = m2[key.second];
            auto it = zg.find({u, v});
            double sq = 0.0;
            for (std::size_t c = 0; c < z.size(); ++c) {
                double a = it != zg.end() ? (*it->second)[c] : 0.0;
                sq += (z[c] - a) * (z[c] - a);
            }
            acc[v] += A2rows[v].at(u) * std::sqrt(sq);
        }
        for (double x : acc) dm.dZ = std::max(dm.dZ, x);
    }

    // row-normalised entity-document anchors
    auto anchor_row = [&](const PreparedGraph& pg, const std::optional<std::size_t>& e) {
        std::map<std::size_t, double> row;
        if (!e) return row;
        const auto& docs = pg.M.rows[*e];
        for (auto d : docs) row[didx.at(pg.graph.document(d).id)] = 1.0 / static_cast<double>(docs.size());
        return row;
    };
    for (std::size_t v = 0; v < U; ++v) {
        auto r1 = anchor_row(g, inv1[v]), r2 = anchor_row(g2, inv2[v]);
        std::set<std::size_t> keys;
        for (auto& [k, x] : r1) keys.insert(k);
        for (auto& [k, x] : r2) keys.insert(k);
        double s = 0.0;
        for (auto k : keys) s += std::abs((r1.count(k) ? r1[k] : 0.0) - (r2.count(k) ? r2[k] : 0.0));
        dm.dB = std::max(dm.dB, s);
    }

    auto ds1 = doc_scores_for(g, question, plan, emb, params, mode);
    auto ds2 = doc_scores_for(g2, question, plan, emb, params, mode);
    for (std::size_t d = 0; d < g.graph.num_documents(); ++d) {
        auto j = g2.graph.find_document(g.graph.document(d).id);
        if (!j || !std::isfinite(ds1[d]) || !std::isfinite(ds2[*j])) continue;
        rep.score_drift = std::max(rep.score_drift, std::abs(ds1[d] - ds2[*j]));
    }
    double tot = dm.total();
    rep.ratio = tot > 0.0 ? rep.score_drift / tot : 0.0;
    return rep;
}

// ---- suite ---------------------------------------------------------------

nlohmann::json SuiteConfig::to_json() const {
    return {{"trials", trials},
            {"seed", seed},
            {"delta", stability.delta},
            {"gate_scale", stability.gate_scale},
            {"max_nodes", stability.max_nodes},
            {"cone_layers", cone_layers},
            {"cone_rz", cone_rz},
            {"snr_nodes", snr_nodes},
            {"snr_layers", snr_layers},
            {"topk_perturb_scale", topk_perturb_scale}};
}

SuiteConfig SuiteConfig::from_json(const nlohmann::json& j) {
    SuiteConfig c;
    auto known = c.to_json();
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) throw std::invalid_argument("unknown diagnostics key: " + it.key());
    c.trials = j.value("trials", c.trials);
    c.seed = j.value("seed", c.seed);
    c.stability.delta = j.value("delta", c.stability.delta);
    c.stability.gate_scale = j.value("gate_scale", c.stability.gate_scale);
    c.stability.max_nodes = j.value("max_nodes", c.stability.max_nodes);
    c.cone_layers = j.value("cone_layers", c.cone_layers);
    c.cone_rz = j.value("cone_rz", c.cone_rz);
    c.snr_nodes = j.value("snr_nodes", c.snr_nodes);
    c.snr_layers = j.value("snr_layers", c.snr_layers);
    c.topk_perturb_scale = j.value("topk_perturb_scale", c.topk_perturb_scale);
    if (c.trials == 0) throw std::invalid_argument("diagnostics: trials must be >= 1");
    if (c.stability.max_nodes < 2) throw std::invalid_argument("diagnostics: max_nodes must be >= 2");
    return c;
}

std::vector<CheckReport> run_suite(const SuiteConfig& cfg) {
    std::vector<CheckReport> out = check_stability_suite(cfg.trials, cfg.seed, cfg.stability);
    out.push_back(check_topk_boundary({5.0, 4.0, 1.0, 0.5}, 0.2, 2, cfg.trials, derive_seed(cfg.seed, 4),
                                      cfg.topk_perturb_scale));
    out.push_back(check_topk_boundary_random(cfg.trials, derive_seed(cfg.seed, 5), cfg.topk_perturb_scale));
    out.push_back(check_influence_cone_random(cfg.trials, derive_seed(cfg.seed, 6), cfg.cone_layers, cfg.cone_rz));
    out.push_back(snr_recurrence_random(cfg.trials, derive_seed(cfg.seed, 7), cfg.snr_nodes, cfg.snr_layers));
    out.push_back(budget_bound_random(cfg.trials, derive_seed(cfg.seed, 8)));
    return out;
}

nlohmann::json suite_report(const std::vector<CheckReport>& reports) {
    nlohmann::json checks = nlohmann::json::array();
    bool ok = true;
    for (const auto& r : reports) {
        checks.push_back(r.to_json());
        ok = ok && r.passed();
    }
    return {{"passed", ok}, {"checks", checks}};
}

}  // namespace sage::diag

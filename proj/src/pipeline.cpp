#include "sage/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "sage/metrics.hpp"
#include "sage/text.hpp"

namespace sage {

std::vector<GraphMemory> sample_graphs(const std::vector<Sample>& samples, const RunConfig& cfg) {
    if (cfg.graphs == "writer") {
        return write_graphs(MockWriter(cfg.writer), samples, cfg.env, nn::derive_seed(cfg.seed, 1));
    }
    std::vector<GraphMemory> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(ingest_triples(s.oracle_triples, s.docs, cfg.env.mode));
    return out;
}

SummaryNorm fit_norm(const std::vector<GraphMemory>& graphs) {
    std::vector<GraphSummary> sums;
    for (const auto& g : graphs) {
        if (g.num_entities() == 0) continue;
        auto sg = binarized_structural_graph(g);
        sums.push_back(graph_summary(sg, node_features(sg)));
    }
    return fit_summary_norm(sums);
}

nlohmann::json graph_stats(const GraphMemory& g) {
    auto sg = binarized_structural_graph(g);
    double n = static_cast<double>(sg.n);
    double density = sg.n > 1 ? 2.0 * static_cast<double>(sg.num_edges()) / (n * (n - 1.0)) : 0.0;
    return {{"entities", g.num_entities()},
            {"documents", g.num_documents()},
            {"relations", g.num_relations()},
            {"edges", sg.num_edges()},
            {"anchors", g.ed_anchors().size()},
            {"triples", g.triple_total()},
            {"rho_rep", repetition_rate(g)},
            {"density", density},
            {"hash", graph_content_hash(g)}};
}

nlohmann::json EvalMetrics::to_json(bool with_latency) const {
    nlohmann::json doc = nlohmann::json::object(), ent = nlohmann::json::object();
    for (std::size_t i = 0; i < ks.size(); ++i) {
        doc["recall@" + std::to_string(ks[i])] = doc_recall[i];
        ent["recall@" + std::to_string(ks[i])] = entity_recall[i];
    }
    nlohmann::json j = {{"samples", samples}, {"document", doc}, {"entity", ent}, {"em", em}, {"f1", f1}};
    if (with_latency) j["mean_latency_ms"] = mean_latency_ms;
    return j;
}

EvalMetrics evaluate_reader(const std::vector<Sample>& samples, const std::vector<const GraphMemory*>& graphs,
                            ReaderParams& params, const TextEmbedder& emb, const std::vector<std::size_t>& ks,
                            const RetrievalOptions& base) {
    if (samples.empty()) throw std::invalid_argument("evaluate_reader: empty sample set");
    if (ks.empty()) throw std::invalid_argument("evaluate_reader: empty k list");
    if (graphs.size() != 1 && graphs.size() != samples.size()) {
        throw std::invalid_argument("evaluate_reader: need one graph or one per sample");
    }
    for (auto k : ks)
        if (k == 0) throw std::invalid_argument("evaluate_reader: k must be positive");

    EvalMetrics m;
    m.ks = ks;
    m.samples = samples.size();
    std::size_t kmax = *std::max_element(ks.begin(), ks.end());
    RetrievalOptions opt = base;
    opt.k = kmax;

    std::vector<MeanAccumulator> dr(ks.size()), er(ks.size());
    MeanAccumulator em, f1, lat;
    DeterministicAnswerer answerer;
    SummaryNorm norm = params.summary_norm();
    std::optional<PreparedGraph> shared;
    if (graphs.size() == 1) shared = prepare_graph(*graphs[0], emb, norm);

    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        std::optional<PreparedGraph> own;
        if (!shared) own = prepare_graph(*graphs[i], emb, norm);
        const PreparedGraph& pg = shared ? *shared : *own;

        std::vector<std::size_t> gold_docs, gold_ents;
        for (const auto& id : s.support_doc_ids)
            if (auto d = pg.graph.find_document(id)) gold_docs.push_back(*d);
        for (const auto& name : s.support_entities)
            if (auto e = pg.graph.find_entity(text::canonicalize(name))) gold_ents.push_back(*e);
        // Gold items absent from the graph count as misses.
        auto recall = [](const std::vector<std::size_t>& ranked, const std::vector<std::size_t>& found,
                         std::size_t total, std::size_t k) {
            if (total == 0) return 0.0;
            std::size_t hit = 0;
            for (std::size_t j = 0; j < std::min(k, ranked.size()); ++j)
                hit += std::count(found.begin(), found.end(), ranked[j]) > 0;
            return static_cast<double>(hit) / static_cast<double>(total);
        };

        auto t0 = std::chrono::steady_clock::now();
        RetrievalResult r;
        if (pg.graph.num_entities() > 0) r = retrieve(s.question, pg, nullptr, emb, params, opt);
        lat.add(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());

        std::vector<std::size_t> ent_rank = r.a_final.empty() ? std::vector<std::size_t>{}
                                                              : top_k_indices(r.a_final, kmax);
        for (std::size_t j = 0; j < ks.size(); ++j) {
            dr[j].add(recall(r.top_docs, gold_docs, s.support_doc_ids.size(), ks[j]));
            er[j].add(recall(ent_rank, gold_ents, s.support_entities.size(), ks[j]));
        }

        std::vector<std::string> evidence;
        for (auto d : r.top_docs) evidence.push_back(pg.graph.document(d).text);
        std::string pred = answerer.answer(s.question, s.answers(), evidence).value_or("");
        em.add(best_exact_match(pred, s.answers()));
        f1.add(best_token_f1(pred, s.answers()));
    }
    for (std::size_t j = 0; j < ks.size(); ++j) {
        m.doc_recall.push_back(dr[j].mean());
        m.entity_recall.push_back(er[j].mean());
    }
    m.em = em.mean();
    m.f1 = f1.mean();
    m.mean_latency_ms = lat.mean();
    return m;
}

}  // namespace sage

#pragma once
// Pipeline steps shared by the command-line tool and the acceptance runs:
// per-sample graph construction, reader evaluation and graph statistics.

#include <vector>

#include <json.hpp>

#include "sage/run_config.hpp"

namespace sage {

// One graph per sample, from its oracle triples or written by the mock writer.
std::vector<GraphMemory> sample_graphs(const std::vector<Sample>& samples, const RunConfig& cfg);

SummaryNorm fit_norm(const std::vector<GraphMemory>& graphs);

// n, m, repetition rate, density of the entity graph.
nlohmann::json graph_stats(const GraphMemory& g);

struct EvalMetrics {
    std::vector<std::size_t> ks;
    std::vector<double> doc_recall, entity_recall;  // aligned with ks
    double em = 0.0, f1 = 0.0;
    double mean_latency_ms = 0.0;
    std::size_t samples = 0;

    // Latency varies between runs; leave it out for reproducible reports.
    nlohmann::json to_json(bool with_latency = true) const;
};

// graphs[i] belongs to samples[i]; a single graph is shared by every sample.
// Answers come from the deterministic answerer over the top max(ks) documents.
// Throws std::invalid_argument on an empty sample set or an empty k list.
EvalMetrics evaluate_reader(const std::vector<Sample>& samples, const std::vector<const GraphMemory*>& graphs,
                            ReaderParams& params, const TextEmbedder& emb, const std::vector<std::size_t>& ks,
                            const RetrievalOptions& base);

}  // namespace sage

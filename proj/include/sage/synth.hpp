#pragma once
// Synthetic multi-hop corpus: entity chains verbalised one edge per document,
// with distractors that share entities or relation words with each chain.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/writer_env.hpp"

namespace sage {

struct SynthSpec {
    std::size_t num_entities = 150;
    std::size_t num_docs = 200;
    std::size_t hops = 2;
    std::size_t distractor_ratio = 3;  // distractors per gold document
    std::size_t num_hubs = 4;
    double hub_rate = 0.5;  // fraction of documents with a hub sentence
    double train_fraction = 0.8;
    std::uint64_t seed = 1;
};

nlohmann::json synth_spec_to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct SynthChain {
    std::vector<std::string> entities;   // hops + 1 names, head first
    std::vector<std::string> relations;  // hops relation phrases
};

struct SynthCorpus {
    std::vector<Document> docs;
    std::vector<Triple> triples;  // sourced oracle triples for every document
    std::vector<Sample> train;
    std::vector<Sample> heldout;
    std::vector<SynthChain> chains;  // train chains then held-out chains
};

// Throws std::invalid_argument on infeasible specs.
SynthCorpus generate_synthetic(const SynthSpec& spec);

// Number of relation-labelled walks from head following the relation
// sequence, and the set of endpoints reached.
struct PathCount {
    std::size_t paths = 0;
    std::vector<std::string> endpoints;
};
PathCount count_labelled_paths(const std::vector<Triple>& triples, const std::string& head,
                               const std::vector<std::string>& relations);

}  // namespace sage

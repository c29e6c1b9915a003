#pragma once
// Heterogeneous graph memory: entity nodes, document nodes, relation edges
// between entities (forward and reverse), entity-document source anchors and
// the multiset of written triples used for repetition accounting.

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace sage {

struct Triple {
    std::string subject;
    std::string relation;
    std::string object;
    std::optional<std::string> source_doc;
};

struct Document {
    std::string id;
    std::string title;
    std::string text;
    std::set<std::string> token_set;
};

Document make_document(std::string id, std::string text, std::string title = "");

enum class WriteMode { Iterative, Single };
WriteMode parse_write_mode(std::string_view s);
std::string to_string(WriteMode m);

struct EEEdge {
    std::size_t head;
    std::size_t relation;
    std::size_t tail;
    bool reverse;  // true for the stored inverse of a written edge
    auto operator<=>(const EEEdge&) const = default;
};

using TripleKey = std::tuple<std::string, std::string, std::string>;

struct IngestStats {
    std::size_t accepted = 0;
    std::size_t dropped = 0;         // failed cleaning
    std::size_t low_confidence = 0;  // aligned with zero token overlap
};

class GraphMemory {
public:
    std::size_t num_entities() const { return entity_names_.size(); }
    std::size_t num_documents() const { return documents_.size(); }
    std::size_t num_relations() const { return relation_names_.size(); }

    const std::vector<std::string>& entity_names() const { return entity_names_; }
    const std::string& entity_name(std::size_t e) const { return entity_names_.at(e); }
    std::optional<std::size_t> find_entity(std::string_view canonical) const;
    const std::vector<Document>& documents() const { return documents_; }
    const Document& document(std::size_t d) const { return documents_.at(d); }
    std::optional<std::size_t> find_document(std::string_view id) const;
    const std::vector<std::string>& relation_names() const { return relation_names_; }

    // Distinct relation edges, each present as forward and reverse record.
    const std::vector<EEEdge>& ee_edges() const { return ee_edges_; }
    // Distinct (entity, doc) source anchors.
    const std::set<std::pair<std::size_t, std::size_t>>& ed_anchors() const { return ed_anchors_; }
    const std::map<TripleKey, std::size_t>& triple_counts() const { return triple_counts_; }
    std::size_t triple_total() const { return triple_total_; }

    // Number of distinct documents anchoring entity e.
    std::size_t doc_frequency(std::size_t e) const { return doc_freq_.at(e); }
    // Number of distinct neighbouring entities over relation edges (self excluded).
    std::size_t degree(std::size_t e) const { return neighbours_.at(e).size(); }
    const std::set<std::size_t>& neighbours(std::size_t e) const { return neighbours_.at(e); }
    // Relation ids incident to e in either direction.
    const std::set<std::size_t>& incident_relations(std::size_t e) const { return incident_rel_.at(e); }

    std::size_t add_document(Document d);
    std::size_t add_entity(std::string_view canonical);
    std::size_t add_relation(std::string_view canonical);
    // Inserts a cleaned, canonical triple anchored at document doc.
    void add_triple(const std::string& s, const std::string& r, const std::string& o, std::size_t doc);

    bool operator==(const GraphMemory& other) const;

private:
    friend GraphMemory graph_from_json(const nlohmann::json& j);
    void add_ee_edge(std::size_t h, std::size_t r, std::size_t t);
    void add_anchor(std::size_t e, std::size_t d);

    std::vector<std::string> entity_names_;
    std::unordered_map<std::string, std::size_t> entity_index_;
    std::vector<Document> documents_;
    std::unordered_map<std::string, std::size_t> doc_index_;
    std::vector<std::string> relation_names_;
    std::unordered_map<std::string, std::size_t> relation_index_;
    std::vector<EEEdge> ee_edges_;
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> ee_seen_;
    std::set<std::pair<std::size_t, std::size_t>> ed_anchors_;
    std::map<TripleKey, std::size_t> triple_counts_;
    std::size_t triple_total_ = 0;
    std::vector<std::size_t> doc_freq_;
    std::vector<std::set<std::size_t>> neighbours_;
    std::vector<std::set<std::size_t>> incident_rel_;
};

// Canonical form of a raw triple, or nullopt when any field is empty after
// normalisation.
std::optional<Triple> clean_triple(const Triple& t);

GraphMemory ingest_triples(const std::vector<Triple>& triples, const std::vector<Document>& corpus,
                           WriteMode mode, IngestStats* stats = nullptr);

// Adds triples to a copy of g. Triples without a resolvable source are aligned
// against g's documents; when g has no documents they are dropped.
GraphMemory merge_triples(const GraphMemory& g, const std::vector<Triple>& triples,
                          IngestStats* stats = nullptr);

struct Alignment {
    std::size_t doc = 0;
    std::size_t overlap = 0;
    bool low_confidence = false;
};
Alignment align_triple_to_document(const Triple& t, const std::vector<Document>& corpus);

double repetition_rate(const GraphMemory& g);

struct EntityDocMatrix {
    std::size_t n_entities = 0;
    std::size_t n_docs = 0;
    std::vector<std::vector<std::size_t>> rows;  // sorted doc ids per entity
    std::vector<std::vector<std::size_t>> cols;  // sorted entity ids per doc
    std::vector<double> freq;
    std::vector<double> weight;  // 1/f(e), 0 when f(e) = 0

    std::size_t nnz() const;
    std::vector<std::vector<double>> dense() const;
};
EntityDocMatrix entity_doc_matrix(const GraphMemory& g);

struct EntityMask {
    std::vector<char> mask;
    bool fallback = false;     // no entity named in the query
    bool empty_graph = false;
};
EntityMask query_entity_mask(const GraphMemory& g, std::string_view query, std::size_t seed_budget);

inline constexpr const char* kGraphFormat = "sage.graph";
inline constexpr int kGraphFormatVersion = 1;

nlohmann::json graph_to_json(const GraphMemory& g);
GraphMemory graph_from_json(const nlohmann::json& j);

// Canonical content hash, independent of insertion order of nodes and edges.
std::string graph_content_hash(const GraphMemory& g);

}  // namespace sage

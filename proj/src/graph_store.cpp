#include "sage/graph_store.hpp"

#include <algorithm>
#include <stdexcept>

#include "sage/text.hpp"

namespace sage {

Document make_document(std::string id, std::string text, std::string title) {
    Document d;
    d.id = std::move(id);
    d.title = std::move(title);
    d.text = std::move(text);
    d.token_set = text::token_set(d.title + " " + d.text);
    return d;
}

WriteMode parse_write_mode(std::string_view s) {
    if (s == "iterative") return WriteMode::Iterative;
    if (s == "single") return WriteMode::Single;
    throw std::invalid_argument("unknown write mode: " + std::string(s));
}

std::string to_string(WriteMode m) { return m == WriteMode::Iterative ? "iterative" : "single"; }

std::optional<std::size_t> GraphMemory::find_entity(std::string_view canonical) const {
    auto it = entity_index_.find(std::string(canonical));
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::size_t> GraphMemory::find_document(std::string_view id) const {
    auto it = doc_index_.find(std::string(id));
    if (it == doc_index_.end()) return std::nullopt;
    return it->second;
}

std::size_t GraphMemory::add_document(Document d) {
    if (doc_index_.count(d.id)) throw std::invalid_argument("duplicate document id: " + d.id);
    doc_index_.emplace(d.id, documents_.size());
    documents_.push_back(std::move(d));
    return documents_.size() - 1;
}

std::size_t GraphMemory::add_entity(std::string_view canonical) {
    std::string key(canonical);
    auto it = entity_index_.find(key);
    if (it != entity_index_.end()) return it->second;
    entity_index_.emplace(key, entity_names_.size());
    entity_names_.push_back(std::move(key));
    doc_freq_.push_back(0);
    neighbours_.emplace_back();
    incident_rel_.emplace_back();
    return entity_names_.size() - 1;
}

std::size_t GraphMemory::add_relation(std::string_view canonical) {
    std::string key(canonical);
    auto it = relation_index_.find(key);
    if (it != relation_index_.end()) return it->second;
    relation_index_.emplace(key, relation_names_.size());
    relation_names_.push_back(std::move(key));
    return relation_names_.size() - 1;
}

void GraphMemory::add_ee_edge(std::size_t h, std::size_t r, std::size_t t) {
    if (!ee_seen_.insert({h, r, t}).second) return;
    ee_edges_.push_back({h, r, t, false});
    ee_edges_.push_back({t, r, h, true});
    neighbours_[h].insert(t);
    neighbours_[t].insert(h);
    incident_rel_[h].insert(r);
    incident_rel_[t].insert(r);
}

void GraphMemory::add_anchor(std::size_t e, std::size_t d) {
    if (ed_anchors_.insert({e, d}).second) ++doc_freq_[e];
}

void GraphMemory::add_triple(const std::string& s, const std::string& r, const std::string& o,
                             std::size_t doc) {
    if (doc >= documents_.size()) throw std::out_of_range("triple anchored to unknown document");
    std::size_t hs = add_entity(s);
    std::size_t ho = add_entity(o);
    std::size_t rid = add_relation(r);
    // Self-loops are kept for anchoring and repetition accounting only.
    if (hs != ho) add_ee_edge(hs, rid, ho);
    incident_rel_[hs].insert(rid);
    incident_rel_[ho].insert(rid);
    add_anchor(hs, doc);
    add_anchor(ho, doc);
    ++triple_counts_[{s, r, o}];
    ++triple_total_;
}

bool GraphMemory::operator==(const GraphMemory& other) const {
    if (entity_names_ != other.entity_names_ || relation_names_ != other.relation_names_) return false;
    if (documents_.size() != other.documents_.size()) return false;
    for (std::size_t i = 0; i < documents_.size(); ++i) {
        const auto& a = documents_[i];
        const auto& b = other.documents_[i];
        if (a.id != b.id || a.title != b.title || a.text != b.text) return false;
    }
    return ee_edges_ == other.ee_edges_ && ed_anchors_ == other.ed_anchors_ &&
           triple_counts_ == other.triple_counts_ && triple_total_ == other.triple_total_;
}

std::optional<Triple> clean_triple(const Triple& t) {
    Triple c;
    c.subject = text::canonicalize(t.subject);
    c.relation = text::canonicalize(t.relation);
    c.object = text::canonicalize(t.object);
    if (c.subject.empty() || c.relation.empty() || c.object.empty()) return std::nullopt;
    c.source_doc = t.source_doc;
    return c;
}

Alignment align_triple_to_document(const Triple& t, const std::vector<Document>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("align_triple_to_document: empty corpus");
    auto toks = text::token_set(t.subject + " " + t.relation + " " + t.object);
    Alignment best;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        std::size_t overlap = 0;
        for (const auto& tok : toks) overlap += corpus[d].token_set.count(tok);
        if (overlap > best.overlap) {
            best.overlap = overlap;
            best.doc = d;
        }
    }
    best.low_confidence = best.overlap == 0;
    return best;
}

namespace {

void ingest_into(GraphMemory& g, const std::vector<Triple>& triples, bool require_source,
                 IngestStats& st) {
    for (const auto& raw : triples) {
        auto c = clean_triple(raw);
        if (!c) {
            ++st.dropped;
            continue;
        }
        std::size_t doc = 0;
        if (c->source_doc) {
            auto d = g.find_document(*c->source_doc);
            if (!d) throw std::invalid_argument("triple source not in corpus: " + *c->source_doc);
            doc = *d;
        } else {
            if (require_source) {
                throw std::invalid_argument("iterative mode requires a source document per triple");
            }
            if (g.num_documents() == 0) {
                ++st.dropped;
                continue;
            }
            auto a = align_triple_to_document(*c, g.documents());
            if (a.low_confidence) ++st.low_confidence;
            doc = a.doc;
        }
        g.add_triple(c->subject, c->relation, c->object, doc);
        ++st.accepted;
    }
}

}  // namespace

GraphMemory ingest_triples(const std::vector<Triple>& triples, const std::vector<Document>& corpus,
                           WriteMode mode, IngestStats* stats) {
    GraphMemory g;
    for (const auto& d : corpus) g.add_document(d);
    IngestStats local;
    ingest_into(g, triples, mode == WriteMode::Iterative, local);
    if (stats) *stats = local;
    return g;
}

GraphMemory merge_triples(const GraphMemory& g, const std::vector<Triple>& triples, IngestStats* stats) {
    GraphMemory out = g;
    IngestStats local;
    ingest_into(out, triples, false, local);
    if (stats) *stats = local;
    return out;
}

double repetition_rate(const GraphMemory& g) {
    if (g.triple_total() == 0) return 0.0;
    double total = static_cast<double>(g.triple_total());
    double uniq = static_cast<double>(g.triple_counts().size());
    return (total - uniq) / total;
}

std::size_t EntityDocMatrix::nnz() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.size();
    return n;
}

std::vector<std::vector<double>> EntityDocMatrix::dense() const {
    std::vector<std::vector<double>> m(n_entities, std::vector<double>(n_docs, 0.0));
    for (std::size_t e = 0; e < n_entities; ++e)
        for (auto d : rows[e]) m[e][d] = 1.0;
    return m;
}

EntityDocMatrix entity_doc_matrix(const GraphMemory& g) {
    EntityDocMatrix m;
    m.n_entities = g.num_entities();
    m.n_docs = g.num_documents();
    m.rows.assign(m.n_entities, {});
    m.cols.assign(m.n_docs, {});
    for (auto [e, d] : g.ed_anchors()) {
        m.rows[e].push_back(d);
        m.cols[d].push_back(e);
    }
    for (auto& c : m.cols) std::sort(c.begin(), c.end());
    m.freq.resize(m.n_entities);
    m.weight.resize(m.n_entities);
    for (std::size_t e = 0; e < m.n_entities; ++e) {
        m.freq[e] = static_cast<double>(m.rows[e].size());
        m.weight[e] = m.rows[e].empty() ? 0.0 : 1.0 / m.freq[e];
    }
    return m;
}

EntityMask query_entity_mask(const GraphMemory& g, std::string_view query, std::size_t seed_budget) {
    if (seed_budget == 0) throw std::invalid_argument("seed_budget must be >= 1");
    EntityMask out;
    out.mask.assign(g.num_entities(), 0);
    if (g.num_entities() == 0) {
        out.empty_graph = true;
        return out;
    }
    std::string qb = text::boundary_form(query);
    bool any = false;
    for (std::size_t e = 0; e < g.num_entities(); ++e) {
        std::string nb = text::boundary_form(g.entity_name(e));
        if (nb.size() > 1 && qb.find(nb) != std::string::npos) {
            out.mask[e] = 1;
            any = true;
        }
    }
    if (any) return out;
    out.fallback = true;
    std::vector<std::size_t> order(g.num_entities());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return g.degree(a) > g.degree(b); });
    for (std::size_t i = 0; i < std::min(seed_budget, order.size()); ++i) out.mask[order[i]] = 1;
    return out;
}

nlohmann::json graph_to_json(const GraphMemory& g) {
    using nlohmann::json;
    json docs = json::array();
    for (const auto& d : g.documents()) docs.push_back({{"id", d.id}, {"title", d.title}, {"text", d.text}});
    json edges = json::array();
    for (const auto& e : g.ee_edges()) {
        if (!e.reverse) edges.push_back({e.head, e.relation, e.tail});
    }
    json anchors = json::array();
    for (auto [e, d] : g.ed_anchors()) anchors.push_back({e, d});
    json triples = json::array();
    for (const auto& [k, c] : g.triple_counts()) {
        triples.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), c});
    }
    return {{"format", kGraphFormat},
            {"version", kGraphFormatVersion},
            {"documents", docs},
            {"entities", g.entity_names()},
            {"relations", g.relation_names()},
            {"ee_edges", edges},
            {"ed_anchors", anchors},
            {"triple_multiset", triples}};
}

GraphMemory graph_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kGraphFormat) throw std::runtime_error("not a graph checkpoint");
    if (j.value("version", 0) != kGraphFormatVersion) {
        throw std::runtime_error("unsupported graph checkpoint version");
    }
    GraphMemory g;
    for (const auto& d : j.at("documents")) {
        g.add_document(make_document(d.at("id").get<std::string>(), d.at("text").get<std::string>(),
                                     d.value("title", std::string())));
    }
    for (const auto& e : j.at("entities")) g.add_entity(e.get<std::string>());
    for (const auto& r : j.at("relations")) g.add_relation(r.get<std::string>());
    auto check = [](std::size_t v, std::size_t n, const char* what) {
        if (v >= n) throw std::runtime_error(std::string("graph checkpoint: dangling ") + what);
    };
    for (const auto& e : j.at("ee_edges")) {
        std::size_t h = e.at(0), r = e.at(1), t = e.at(2);
        check(h, g.num_entities(), "edge head");
        check(t, g.num_entities(), "edge tail");
        check(r, g.num_relations(), "relation");
        g.add_ee_edge(h, r, t);
    }
    for (const auto& a : j.at("ed_anchors")) {
        std::size_t e = a.at(0), d = a.at(1);
        check(e, g.num_entities(), "anchor entity");
        check(d, g.num_documents(), "anchor document");
        g.add_anchor(e, d);
    }
    for (const auto& t : j.at("triple_multiset")) {
        TripleKey k{t.at(0).get<std::string>(), t.at(1).get<std::string>(), t.at(2).get<std::string>()};
        std::size_t c = t.at(3);
        g.triple_counts_[k] += c;
        g.triple_total_ += c;
        // incident relations for self-loop triples are not implied by edges
        auto s = g.find_entity(std::get<0>(k));
        auto o = g.find_entity(std::get<2>(k));
        auto it = g.relation_index_.find(std::get<1>(k));
        if (s && o && it != g.relation_index_.end()) {
            g.incident_rel_[*s].insert(it->second);
            g.incident_rel_[*o].insert(it->second);
        }
    }
    return g;
}

std::string graph_content_hash(const GraphMemory& g) {
    // Order-independent: hash a sorted canonical listing.
    std::vector<std::string> lines;
    for (const auto& d : g.documents()) lines.push_back("D\t" + d.id + "\t" + d.title + "\t" + d.text);
    for (const auto& n : g.entity_names()) lines.push_back("E\t" + n);
    for (const auto& e : g.ee_edges()) {
        lines.push_back("R\t" + g.entity_name(e.head) + "\t" + g.relation_names()[e.relation] + "\t" +
                        g.entity_name(e.tail) + (e.reverse ? "\t~" : ""));
    }
    for (auto [e, d] : g.ed_anchors()) lines.push_back("A\t" + g.entity_name(e) + "\t" + g.document(d).id);
    for (const auto& [k, c] : g.triple_counts()) {
        lines.push_back("T\t" + std::get<0>(k) + "\t" + std::get<1>(k) + "\t" + std::get<2>(k) + "\t" +
                        std::to_string(c));
    }
    std::sort(lines.begin(), lines.end());
    return text::content_hash(text::join(lines, "\n"));
}

}  // namespace sage

#include "sage/io.hpp"

#include <fstream>
#include <sstream>

#include "sage/text.hpp"

namespace sage::io {

using nlohmann::json;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

std::string file_hash(const std::string& path) { return text::content_hash(read_text(path)); }

json read_json(const std::string& path) {
    std::string s = read_text(path);
    try {
        return json::parse(s);
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<json> read_jsonl(const std::string& path) {
    std::string s = read_text(path);
    std::vector<json> rows;
    std::istringstream in(s);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (text::trim(line).empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw IoError(path + ":" + std::to_string(no) + ": " + e.what());
        }
    }
    return rows;
}

void write_jsonl(const std::string& path, const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    write_text(path, out);
}

json document_to_json(const Document& d) {
    json j = {{"id", d.id}, {"text", d.text}};
    if (!d.title.empty()) j["title"] = d.title;
    return j;
}

Document document_from_json(const json& j) {
    if (!j.is_object() || !j.contains("id") || !j.contains("text")) throw IoError("document needs id and text");
    return make_document(j.at("id").get<std::string>(), j.at("text").get<std::string>(), j.value("title", ""));
}

json triple_to_json(const Triple& t) {
    json j = {{"subject", t.subject}, {"relation", t.relation}, {"object", t.object}};
    if (t.source_doc) j["source"] = *t.source_doc;
    return j;
}

Triple triple_from_json(const json& j) {
    if (!j.is_object()) throw IoError("triple must be an object");
    Triple t{j.value("subject", ""), j.value("relation", ""), j.value("object", ""), std::nullopt};
    if (j.contains("source") && j.at("source").is_string()) t.source_doc = j.at("source").get<std::string>();
    return t;
}

json sample_to_json(const Sample& s) {
    json docs = json::array();
    for (const auto& d : s.docs) docs.push_back(document_to_json(d));
    json j = {{"question", s.question},
              {"answer", s.answer},
              {"aliases", s.aliases},
              {"docs", docs},
              {"support_doc_ids", s.support_doc_ids},
              {"support_entities", s.support_entities}};
    if (!s.id.empty()) j["id"] = s.id;
    if (!s.oracle_triples.empty()) {
        json t = json::array();
        for (const auto& x : s.oracle_triples) t.push_back(triple_to_json(x));
        j["triples"] = t;
    }
    return j;
}

Sample sample_from_json(const json& j) {
    try {
        Sample s;
        s.id = j.value("id", "");
        s.question = j.at("question").get<std::string>();
        s.answer = j.value("answer", "");
        s.aliases = j.value("aliases", std::vector<std::string>{});
        for (const auto& d : j.at("docs")) s.docs.push_back(document_from_json(d));
        s.support_doc_ids = j.value("support_doc_ids", std::vector<std::string>{});
        s.support_entities = j.value("support_entities", std::vector<std::string>{});
        if (j.contains("triples"))
            for (const auto& t : j.at("triples")) s.oracle_triples.push_back(triple_from_json(t));
        return s;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed sample: ") + e.what());
    }
}

std::vector<Sample> read_samples(const std::string& path) {
    std::vector<Sample> out;
    for (const auto& j : read_jsonl(path)) out.push_back(sample_from_json(j));
    return out;
}

void write_samples(const std::string& path, const std::vector<Sample>& samples) {
    std::vector<json> rows;
    for (const auto& s : samples) rows.push_back(sample_to_json(s));
    write_jsonl(path, rows);
}

std::vector<Document> read_corpus(const std::string& path) {
    std::vector<Document> out;
    for (const auto& j : read_jsonl(path)) out.push_back(document_from_json(j));
    return out;
}

void write_corpus(const std::string& path, const std::vector<Document>& docs) {
    std::vector<json> rows;
    for (const auto& d : docs) rows.push_back(document_to_json(d));
    write_jsonl(path, rows);
}

std::vector<Triple> read_triples(const std::string& path) {
    std::vector<Triple> out;
    for (const auto& j : read_jsonl(path)) out.push_back(triple_from_json(j));
    return out;
}

void write_triples(const std::string& path, const std::vector<Triple>& triples) {
    std::vector<json> rows;
    for (const auto& t : triples) rows.push_back(triple_to_json(t));
    write_jsonl(path, rows);
}

}  // namespace sage::io

#pragma once
// File formats: JSON documents, line-delimited samples, corpora and triples.

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/graph_store.hpp"
#include "sage/writer_env.hpp"

namespace sage::io {

// Missing or unreadable files and malformed content.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& content);
std::string file_hash(const std::string& path);

nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

std::vector<nlohmann::json> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows);

nlohmann::json document_to_json(const Document& d);
Document document_from_json(const nlohmann::json& j);
nlohmann::json triple_to_json(const Triple& t);
Triple triple_from_json(const nlohmann::json& j);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

std::vector<Sample> read_samples(const std::string& path);
void write_samples(const std::string& path, const std::vector<Sample>& samples);
std::vector<Document> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<Document>& docs);
std::vector<Triple> read_triples(const std::string& path);
void write_triples(const std::string& path, const std::vector<Triple>& triples);

}  // namespace sage::io

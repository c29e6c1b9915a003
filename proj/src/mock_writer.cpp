#include "sage/mock_writer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sage/text.hpp"

namespace sage {

MockWriterParams MockWriterParams::from_vec(const std::array<double, kCount>& v) {
    MockWriterParams p;
    p.threshold = v[0];
    p.max_triples = v[1];
    p.window = v[2];
    p.noise = v[3];
    p.duplicate = v[4];
    return p;
}

std::array<const char*, MockWriterParams::kCount> MockWriterParams::names() {
    return {"threshold", "max_triples", "window", "noise", "duplicate"};
}

std::array<std::pair<double, double>, MockWriterParams::kCount> MockWriterParams::ranges() {
    return {{{0.0, 1.0}, {1.0, 8.0}, {0.0, 3.0}, {0.0, 1.0}, {0.0, 1.0}}};
}

std::array<double, MockWriterParams::kCount> MockWriterParams::step_scales() { return {0.25, 1.0, 1.0, 0.1, 0.1}; }

void MockWriterParams::clamp() {
    auto v = vec();
    auto r = ranges();
    for (std::size_t i = 0; i < kCount; ++i) v[i] = std::clamp(v[i], r[i].first, r[i].second);
    *this = from_vec(v);
}

nlohmann::json MockWriterParams::to_json() const {
    nlohmann::json j;
    auto v = vec();
    auto n = names();
    for (std::size_t i = 0; i < kCount; ++i) j[n[i]] = v[i];
    return j;
}

MockWriterParams MockWriterParams::from_json(const nlohmann::json& j) {
    MockWriterParams p;
    auto v = p.vec();
    auto n = names();
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto pos = std::find_if(n.begin(), n.end(), [&](const char* s) { return it.key() == s; });
        if (pos == n.end()) throw std::invalid_argument("unknown writer parameter: " + it.key());
        v[static_cast<std::size_t>(pos - n.begin())] = it.value().get<double>();
    }
    p = from_vec(v);
    p.clamp();
    return p;
}

namespace {

struct Mention {
    std::string name;
    std::size_t first_word, last_word;
};

std::string strip_punct(const std::string& w) {
    std::size_t b = 0, e = w.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(w[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(w[e - 1]))) --e;
    return w.substr(b, e - b);
}

}  // namespace

std::vector<Extraction> extract_candidates(const std::string& text_in, std::size_t window) {
    std::vector<Extraction> out;
    auto sentences = text::split_sentences(text_in);
    std::vector<std::vector<Mention>> per_sentence;
    for (const auto& sent : sentences) {
        std::vector<std::string> words;
        std::size_t i = 0;
        while (i < sent.size()) {
            while (i < sent.size() && sent[i] == ' ') ++i;
            std::size_t j = i;
            while (j < sent.size() && sent[j] != ' ') ++j;
            if (j > i) words.push_back(strip_punct(sent.substr(i, j - i)));
            i = j;
        }
        std::vector<Mention> ms;
        for (std::size_t w = 0; w < words.size();) {
            if (!words[w].empty() && text::is_capitalized_word(words[w])) {
                std::size_t e = w;
                std::string name = words[w];
                while (e + 1 < words.size() && !words[e + 1].empty() && text::is_capitalized_word(words[e + 1])) {
                    ++e;
                    name += " " + words[e];
                }
                ms.push_back({name, w, e});
                w = e + 1;
            } else {
                ++w;
            }
        }
        for (std::size_t m = 0; m + 1 < ms.size(); ++m) {
            std::vector<std::string> rel;
            for (std::size_t w = ms[m].last_word + 1; w < ms[m + 1].first_word; ++w) rel.push_back(words[w]);
            if (rel.empty()) continue;
            double conf = ms.size() == 2 ? 1.0 : 0.8;
            out.push_back({{ms[m].name, text::join(rel, " "), ms[m + 1].name, std::nullopt}, conf});
        }
        per_sentence.push_back(std::move(ms));
    }
    for (std::size_t a = 0; a < per_sentence.size(); ++a) {
        for (std::size_t b = a + 1; b < per_sentence.size() && b - a <= window; ++b) {
            double conf = 0.5 / static_cast<double>(b - a);
            for (const auto& x : per_sentence[a])
                for (const auto& y : per_sentence[b])
                    if (x.name != y.name) out.push_back({{x.name, "co occurs with", y.name, std::nullopt}, conf});
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Extraction& x, const Extraction& y) { return x.confidence > y.confidence; });
    return out;
}

std::vector<Triple> MockWriter::write(const std::string& text_in, nn::Rng& rng) const {
    auto cands = extract_candidates(text_in, static_cast<std::size_t>(std::lround(params_.window)));
    std::size_t cap = static_cast<std::size_t>(std::lround(params_.max_triples));
    std::vector<Triple> out;
    for (const auto& c : cands) {
        if (c.confidence < params_.threshold) continue;
        if (out.size() >= cap) break;
        Triple t = c.triple;
        // draws happen for every kept triple so the stream does not depend on outcomes
        double u_noise = rng.uniform();
        double u_kind = rng.uniform();
        double u_dup = rng.uniform();
        if (u_noise < params_.noise) {
            auto last_word = [](const std::string& s) {
                auto p = s.rfind(' ');
                return p == std::string::npos ? s : s.substr(p + 1);
            };
            if (u_kind < 0.5) t.subject = last_word(t.subject);
            else t.object = last_word(t.object);
        }
        out.push_back(t);
        if (u_dup < params_.duplicate) out.push_back(t);
    }
    return out;
}

namespace {

std::string triples_json(const std::vector<Triple>& ts) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& t : ts) a.push_back({{"subject", t.subject}, {"relation", t.relation}, {"object", t.object}});
    return a.dump();
}

const Document& doc_by_id(const Sample& sample, const std::string& id) {
    for (const auto& d : sample.docs) {
        if (d.id == id) return d;
    }
    throw std::invalid_argument("document not in sample: " + id);
}

}  // namespace

std::string MockWriter::propose(const WriterState& s, const Sample& sample, nn::Rng& rng) const {
    if (s.mode == WriteMode::Iterative) return triples_json(write(doc_by_id(sample, s.remaining.front()).text, rng));
    if (!s.processed.empty()) return R"({"terminate": true})";
    std::vector<Triple> all;
    for (const auto& id : s.remaining) {
        auto ts = write(doc_by_id(sample, id).text, rng);
        all.insert(all.end(), ts.begin(), ts.end());
    }
    return triples_json(all);
}

std::string OracleWriter::propose(const WriterState& s, const Sample& sample, nn::Rng&) const {
    std::vector<Triple> out;
    if (s.mode == WriteMode::Iterative) {
        const std::string& id = s.remaining.front();
        for (const auto& t : sample.oracle_triples)
            if (t.source_doc && *t.source_doc == id) out.push_back(t);
        return triples_json(out);
    }
    if (!s.processed.empty()) return R"({"terminate": true})";
    return triples_json(sample.oracle_triples);
}

}  // namespace sage

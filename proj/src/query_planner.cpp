#include "sage/query_planner.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>
#include <stdexcept>

#include "sage/lenient_json.hpp"
#include "sage/prompt_assets.hpp"
#include "sage/text.hpp"

namespace sage {

using nlohmann::json;

json plan_to_json(const QueryPlan& p) {
    json pq = json::array();
    for (const auto& q : p.pseudo_queries) {
        pq.push_back({{"text", q.text}, {"confidence", q.confidence}, {"intent", q.intent}});
    }
    return {{"explicit_entities", p.explicit_entities},
            {"aliases", p.aliases},
            {"relation_clues", p.relation_clues},
            {"hard_constraints", p.hard_constraints},
            {"answer_type", p.answer_type},
            {"pseudo_queries", pq}};
}

namespace {

std::vector<std::string> string_list(const json& j) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    auto push = [&](const json& v) {
        if (!v.is_string()) return;
        std::string s = text::trim(v.get<std::string>());
        if (s.empty() || !seen.insert(s).second) return;
        out.push_back(s);
    };
    if (j.is_array()) {
        for (const auto& v : j) push(v);
    } else {
        push(j);
    }
    return out;
}

std::string scalar_string(const json& v) {
    if (v.is_string()) return text::trim(v.get<std::string>());
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) return v.dump();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_array()) {
        std::vector<std::string> parts;
        for (const auto& x : v) {
            auto s = scalar_string(x);
            if (!s.empty()) parts.push_back(s);
        }
        return text::join(parts, ", ");
    }
    return {};
}

double clamp01(double x) {
    if (!(x == x)) return 0.0;
    return std::clamp(x, 0.0, 1.0);
}

const json* find_key(const json& raw, std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
        auto it = raw.find(k);
        if (it != raw.end()) return &*it;
    }
    return nullptr;
}

}  // namespace

QueryPlan validate_plan(const json& raw, std::size_t max_pseudo) {
    if (!raw.is_object()) throw std::invalid_argument("plan must be a JSON object");
    QueryPlan p;
    const json* ents = find_key(raw, {"explicit_entities"});
    if (!ents) throw std::invalid_argument("plan missing required key: explicit_entities");
    const json* at = find_key(raw, {"answer_type"});
    if (!at) throw std::invalid_argument("plan missing required key: answer_type");
    p.explicit_entities = string_list(*ents);
    p.answer_type = scalar_string(*at);
    if (p.answer_type.empty()) p.answer_type = "entity";

    if (const json* al = find_key(raw, {"aliases", "candidate_aliases"}); al && al->is_object()) {
        for (auto it = al->begin(); it != al->end(); ++it) {
            std::string key = text::trim(it.key());
            if (key.empty()) continue;
            auto vals = string_list(it.value());
            if (vals.empty()) continue;
            auto& dst = p.aliases[key];
            for (auto& v : vals) {
                if (std::find(dst.begin(), dst.end(), v) == dst.end()) dst.push_back(v);
            }
        }
    }
    if (const json* rc = find_key(raw, {"relation_clues"})) p.relation_clues = string_list(*rc);
    if (const json* hc = find_key(raw, {"hard_constraints", "constraints"}); hc && hc->is_object()) {
        for (auto it = hc->begin(); it != hc->end(); ++it) {
            std::string key = text::trim(it.key());
            std::string val = scalar_string(it.value());
            if (key.empty() || val.empty()) continue;
            p.hard_constraints[key] = val;
        }
    }
    if (const json* pq = find_key(raw, {"pseudo_queries"}); pq && pq->is_array()) {
        const json* conf = find_key(raw, {"rewriter_confidence"});
        std::set<std::string> seen;
        for (std::size_t i = 0; i < pq->size(); ++i) {
            const json& e = (*pq)[i];
            PseudoQuery q;
            if (e.is_string()) {
                q.text = text::trim(e.get<std::string>());
                if (conf && conf->is_array() && i < conf->size() && (*conf)[i].is_number()) {
                    q.confidence = (*conf)[i].get<double>();
                }
            } else if (e.is_object()) {
                q.text = scalar_string(e.value("text", json("")));
                if (e.contains("confidence") && e["confidence"].is_number()) {
                    q.confidence = e["confidence"].get<double>();
                }
                if (e.contains("intent")) q.intent = scalar_string(e["intent"]);
            } else {
                continue;
            }
            q.confidence = clamp01(q.confidence);
            if (q.text.empty() || !seen.insert(q.text).second) continue;
            p.pseudo_queries.push_back(std::move(q));
        }
        if (p.pseudo_queries.size() > max_pseudo) {
            std::stable_sort(p.pseudo_queries.begin(), p.pseudo_queries.end(),
                             [](const PseudoQuery& a, const PseudoQuery& b) { return a.confidence > b.confidence; });
            p.pseudo_queries.resize(max_pseudo);
        }
        for (auto& q : p.pseudo_queries) {
            if (q.intent.empty()) q.intent = intent_label(q.text, p);
        }
    }
    return p;
}

MockLLMClient::MockLLMClient(const json& transcript) {
    if (transcript.value("version", 0) != 1) throw std::invalid_argument("unsupported transcript version");
    for (const auto& e : transcript.at("entries")) {
        responses_[e.at("prompt_hash").get<std::string>()].push_back(e.at("response").get<std::string>());
    }
}

std::optional<std::string> MockLLMClient::complete(const std::string& prompt) {
    ++calls_;
    std::string h = prompt_hash(prompt);
    auto it = responses_.find(h);
    if (it == responses_.end()) return std::nullopt;
    std::size_t& c = cursor_[h];
    if (c >= it->second.size()) return std::nullopt;
    return it->second[c++];
}

std::string prompt_hash(std::string_view prompt) { return text::content_hash(prompt); }

namespace {
std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}
}  // namespace

std::string render_extractor_prompt(std::string_view question) {
    return replace_all(std::string(prompts::kExtractor), "{QUESTION}", question);
}

std::string render_inferer_prompt(std::string_view question, const json& extraction, std::size_t max_pseudo) {
    std::string s = replace_all(std::string(prompts::kInferer), "{QUESTION}", question);
    s = replace_all(s, "{EXTRACTOR_JSON}", extraction.dump(2));
    return replace_all(s, "{M}", std::to_string(max_pseudo));
}

PlanOutcome plan_llm(std::string_view question, LLMClient& client, std::size_t max_pseudo,
                     std::size_t retries, const GraphMemory* g) {
    PlanOutcome out;
    auto fallback = [&](const std::string& why) {
        out.warnings.push_back(why);
        out.used_fallback = true;
        out.plan = plan_deterministic(question, g, max_pseudo);
        return out;
    };

    std::optional<json> extraction;
    std::string ext_prompt = render_extractor_prompt(question);
    for (std::size_t a = 0; a < retries && !extraction; ++a) {
        ++out.attempts;
        auto resp = client.complete(ext_prompt);
        if (!resp) {
            out.warnings.push_back("extractor: no response");
            continue;
        }
        auto j = parse_lenient(*resp);
        if (!j || !j->is_object()) {
            out.warnings.push_back("extractor: unparseable output");
            continue;
        }
        try {
            validate_plan(*j, max_pseudo);
            extraction = *j;
        } catch (const std::invalid_argument& e) {
            out.warnings.push_back(std::string("extractor: ") + e.what());
        }
    }
    if (!extraction) return fallback("extractor failed after retries");

    std::optional<json> inference;
    std::string inf_prompt = render_inferer_prompt(question, *extraction, max_pseudo);
    for (std::size_t a = 0; a < retries && !inference; ++a) {
        ++out.attempts;
        auto resp = client.complete(inf_prompt);
        if (!resp) {
            out.warnings.push_back("inferer: no response");
            continue;
        }
        auto j = parse_lenient(*resp);
        if (!j || !j->is_object() || !j->contains("pseudo_queries")) {
            out.warnings.push_back("inferer: unparseable output");
            continue;
        }
        inference = *j;
    }
    if (!inference) return fallback("inferer failed after retries");

    json merged = *extraction;
    merged["pseudo_queries"] = (*inference)["pseudo_queries"];
    if (inference->contains("rewriter_confidence")) merged["rewriter_confidence"] = (*inference)["rewriter_confidence"];
    for (const auto& v : merged["pseudo_queries"]) {
        if (v.is_number() && (v.get<double>() < 0.0 || v.get<double>() > 1.0)) {
            out.warnings.push_back("confidence clamped");
        }
    }
    if (merged.contains("rewriter_confidence") && merged["rewriter_confidence"].is_array()) {
        for (const auto& v : merged["rewriter_confidence"]) {
            if (v.is_number() && (v.get<double>() < 0.0 || v.get<double>() > 1.0)) {
                out.warnings.push_back("confidence clamped");
            }
        }
    }
    out.plan = validate_plan(merged, max_pseudo);
    return out;
}

namespace {

const std::set<std::string>& stopwords() {
    static const std::set<std::string> s = {
        "a", "an", "the", "of", "in", "on", "at", "to", "for", "by", "with", "from", "and", "or",
        "is", "was", "are", "were", "be", "been", "did", "does", "do", "that", "this", "these",
        "those", "it", "its", "as", "which", "who", "whom", "whose", "what", "when", "where", "why",
        "how", "entity", "thing", "one", "man", "woman", "person", "people", "has", "have", "had"};
    return s;
}

const std::set<std::string>& wh_words() {
    static const std::set<std::string> s = {"which", "who", "whom", "whose", "what", "when", "where",
                                            "why", "how", "in", "on", "the", "a", "an", "is", "was",
                                            "did", "does", "do", "are", "were"};
    return s;
}

std::string answer_type_for(const std::vector<std::string>& toks) {
    static const std::set<std::string> person_nouns = {"man", "woman", "person", "people", "actor",
                                                       "actress", "author", "singer", "player",
                                                       "writer", "director", "politician"};
    for (std::size_t i = 0; i < toks.size(); ++i) {
        const auto& t = toks[i];
        if (t == "who" || t == "whom" || t == "whose") return "person";
        if (t == "when") return "date";
        if (t == "where") return "place";
        if ((t == "which" || t == "what") && i + 1 < toks.size()) {
            const auto& n = toks[i + 1];
            if (person_nouns.count(n)) return "person";
            if (n == "year" || n == "date" || n == "day" || n == "month") return "date";
            if (n == "city" || n == "country" || n == "place" || n == "town" || n == "state") return "place";
        }
    }
    return "entity";
}

std::vector<std::string> capitalized_spans(std::string_view q) {
    std::vector<std::string> spans;
    std::vector<std::string> words;
    std::string cur;
    for (char c : q) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-') {
            cur.push_back(c);
        } else {
            words.push_back(cur);
            cur.clear();
            if (c != ' ') words.emplace_back();  // punctuation breaks spans
        }
    }
    words.push_back(cur);
    std::string span;
    auto flush = [&] {
        if (!span.empty()) spans.push_back(span);
        span.clear();
    };
    for (const auto& w : words) {
        if (w.empty()) {
            flush();
            continue;
        }
        std::string lw = text::canonicalize(w);
        bool cap = text::is_capitalized_word(w) && !wh_words().count(lw);
        if (cap) {
            if (!span.empty()) span.push_back(' ');
            span += w;
        } else {
            flush();
        }
    }
    flush();
    return spans;
}

}  // namespace

std::string intent_label(std::string_view pq, const QueryPlan& plan) {
    std::string c = text::canonicalize(pq);
    for (const auto& [k, v] : plan.hard_constraints) {
        if (text::contains_at_boundary(c, v)) return "constraint";
    }
    for (const auto& [e, al] : plan.aliases) {
        for (const auto& a : al) {
            if (text::contains_at_boundary(c, a)) return "alias";
        }
    }
    std::size_t ents = 0;
    for (const auto& e : plan.explicit_entities) ents += text::contains_at_boundary(c, e) ? 1 : 0;
    if (ents >= 2) return "bridge";
    for (const auto& r : plan.relation_clues) {
        if (text::contains_at_boundary(c, r)) return "relation";
    }
    return "attribute";
}

QueryPlan plan_deterministic(std::string_view question, const GraphMemory* g, std::size_t max_pseudo) {
    QueryPlan p;
    std::string q = text::trim(question);
    if (q.empty()) return p;
    auto toks = text::tokenize(q);
    p.answer_type = answer_type_for(toks);

    // Entities, ordered by first mention.
    std::string qb = text::boundary_form(q);
    std::vector<std::pair<std::size_t, std::string>> found;
    if (g != nullptr) {
        for (std::size_t e = 0; e < g->num_entities(); ++e) {
            std::string nb = text::boundary_form(g->entity_name(e));
            if (nb.size() <= 1) continue;
            auto pos = qb.find(nb);
            if (pos != std::string::npos) found.emplace_back(pos, g->entity_name(e));
        }
        std::stable_sort(found.begin(), found.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
    }
    if (found.empty()) {
        for (const auto& s : capitalized_spans(q)) found.emplace_back(0, text::canonicalize(s));
    }
    std::set<std::string> seen;
    for (auto& [pos, name] : found) {
        if (seen.insert(name).second) p.explicit_entities.push_back(name);
    }

    // Constraints: full dates, bare years, quoted strings.
    static const std::regex date_re(
        R"((January|February|March|April|May|June|July|August|September|October|November|December)\s+\d{1,2},\s*\d{4})");
    static const std::regex year_re(R"(\b(1[0-9]{3}|20[0-9]{2})\b)");
    static const std::regex quote_re("\"([^\"]+)\"");
    std::string rest = q;
    int n_date = 0, n_year = 0, n_quote = 0;
    auto key = [](const char* base, int& n) {
        ++n;
        return n == 1 ? std::string(base) : std::string(base) + "_" + std::to_string(n);
    };
    for (std::sregex_iterator it(q.begin(), q.end(), date_re), end; it != end; ++it) {
        p.hard_constraints[key("date", n_date)] = it->str();
        auto pos = rest.find(it->str());
        if (pos != std::string::npos) rest.replace(pos, it->str().size(), " ");
    }
    for (std::sregex_iterator it(rest.begin(), rest.end(), year_re), end; it != end; ++it) {
        p.hard_constraints[key("year", n_year)] = it->str();
    }
    for (std::sregex_iterator it(q.begin(), q.end(), quote_re), end; it != end; ++it) {
        p.hard_constraints[key("quote", n_quote)] = (*it)[1].str();
    }

    // Relation clues: bigrams of content words between entity mentions.
    std::set<std::string> ent_tokens;
    for (const auto& e : p.explicit_entities)
        for (const auto& t : text::tokenize(e)) ent_tokens.insert(t);
    std::vector<std::vector<std::string>> runs(1);
    for (const auto& t : toks) {
        bool is_digit = std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
        if (ent_tokens.count(t) || is_digit) {
            if (!runs.back().empty()) runs.emplace_back();
            continue;
        }
        if (stopwords().count(t)) continue;
        runs.back().push_back(t);
    }
    std::set<std::string> seen_clue;
    for (const auto& run : runs) {
        if (run.size() == 1 && seen_clue.insert(run[0]).second) p.relation_clues.push_back(run[0]);
        for (std::size_t i = 0; i + 1 < run.size(); ++i) {
            std::string bg = run[i] + " " + run[i + 1];
            if (seen_clue.insert(bg).second) p.relation_clues.push_back(bg);
        }
    }

    // Pseudo-queries.
    if (max_pseudo > 0) p.pseudo_queries.push_back({q, 1.0, "original"});
    std::vector<std::string> extra;
    for (const auto& e : p.explicit_entities)
        for (const auto& c : p.relation_clues) extra.push_back(e + " " + c);
    if (p.explicit_entities.size() >= 2 && !p.relation_clues.empty()) {
        extra.insert(extra.begin(), p.explicit_entities[0] + " " + p.explicit_entities[1] + " " + p.relation_clues[0]);
    }
    std::set<std::string> seen_pq = {q};
    for (const auto& x : extra) {
        if (p.pseudo_queries.size() >= max_pseudo) break;
        if (!seen_pq.insert(x).second) continue;
        p.pseudo_queries.push_back({x, 0.5, intent_label(x, p)});
    }
    return p;
}

}  // namespace sage

#include "sage/synth.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "sage/tensor.hpp"
#include "sage/text.hpp"

namespace sage {

namespace {

struct RelationForms {
    const char* past;
    const char* base;
};

constexpr RelationForms kRelations[] = {
    {"mentored", "mentor"},     {"funded", "fund"},         {"advised", "advise"},   {"hired", "hire"},
    {"coached", "coach"},       {"admired", "admire"},      {"sponsored", "sponsor"}, {"trained", "train"},
    {"praised", "praise"},      {"visited", "visit"},       {"interviewed", "interview"},
    {"recruited", "recruit"},   {"supported", "support"},   {"challenged", "challenge"},
    {"inspired", "inspire"},    {"succeeded", "succeed"}};
constexpr std::size_t kNumRelations = sizeof(kRelations) / sizeof(kRelations[0]);
constexpr const char* kHubRelation = "is also associated with";

const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st"};
const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ea"};
const char* kCodas[] = {"n", "r", "l", "s", "th", "x", "m"};

std::string make_word(nn::Rng& rng, std::size_t syllables) {
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
        w += kOnsets[rng.index(std::size(kOnsets))];
        w += kVowels[rng.index(std::size(kVowels))];
    }
    w += kCodas[rng.index(std::size(kCodas))];
    w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    return w;
}

std::vector<std::string> make_names(nn::Rng& rng, std::size_t n) {
    std::set<std::string> seen_words;
    std::vector<std::string> names;
    while (names.size() < n) {
        std::string a = make_word(rng, 1 + rng.index(2));
        std::string b = make_word(rng, 2);
        // words are never shared, so every name is token-disjoint from the rest
        if (seen_words.count(a) || seen_words.count(b) || a == b) continue;
        seen_words.insert(a);
        seen_words.insert(b);
        names.push_back(a + " " + b);
    }
    return names;
}

std::string question_text(const SynthChain& c) {
    std::string inner = c.entities[0];
    std::size_t k = c.relations.size();
    for (std::size_t i = 0; i + 1 < k; ++i) inner = "the one that " + inner + " " + c.relations[i];
    std::string last_base;
    for (const auto& r : kRelations) {
        if (c.relations[k - 1] == r.past) last_base = r.base;
    }
    return "Who did " + inner + " " + last_base + "?";
}

// Relation-labelled adjacency over canonical names.
using LabelGraph = std::map<std::pair<std::string, std::string>, std::vector<std::string>>;

LabelGraph label_graph(const std::vector<Triple>& triples) {
    LabelGraph g;
    for (const auto& t : triples) {
        g[{text::canonicalize(t.subject), text::canonicalize(t.relation)}].push_back(text::canonicalize(t.object));
    }
    return g;
}

PathCount walk(const LabelGraph& g, const std::string& head, const std::vector<std::string>& relations) {
    std::vector<std::string> frontier{text::canonicalize(head)};
    for (const auto& r : relations) {
        std::vector<std::string> next;
        std::string rc = text::canonicalize(r);
        for (const auto& u : frontier) {
            auto it = g.find({u, rc});
            if (it == g.end()) continue;
            next.insert(next.end(), it->second.begin(), it->second.end());
        }
        frontier = std::move(next);
    }
    PathCount pc;
    pc.paths = frontier.size();
    std::set<std::string> ends(frontier.begin(), frontier.end());
    pc.endpoints.assign(ends.begin(), ends.end());
    return pc;
}

}  // namespace

PathCount count_labelled_paths(const std::vector<Triple>& triples, const std::string& head,
                               const std::vector<std::string>& relations) {
    return walk(label_graph(triples), head, relations);
}

nlohmann::json synth_spec_to_json(const SynthSpec& s) {
    return {{"num_entities", s.num_entities}, {"num_docs", s.num_docs},
            {"hops", s.hops},                 {"distractor_ratio", s.distractor_ratio},
            {"num_hubs", s.num_hubs},         {"hub_rate", s.hub_rate},
            {"train_fraction", s.train_fraction}, {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    auto known = synth_spec_to_json(s);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw std::invalid_argument("unknown synth key: " + it.key());
    }
    s.num_entities = j.value("num_entities", s.num_entities);
    s.num_docs = j.value("num_docs", s.num_docs);
    s.hops = j.value("hops", s.hops);
    s.distractor_ratio = j.value("distractor_ratio", s.distractor_ratio);
    s.num_hubs = j.value("num_hubs", s.num_hubs);
    s.hub_rate = j.value("hub_rate", s.hub_rate);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.seed = j.value("seed", s.seed);
    return s;
}

SynthCorpus generate_synthetic(const SynthSpec& spec) {
    if (spec.hops == 0) throw std::invalid_argument("synth: hops must be >= 1");
    if (spec.hops + 1 > spec.num_entities) throw std::invalid_argument("synth: hops exceed entities - 1");
    std::size_t nq = spec.num_docs / spec.hops;
    if (nq == 0) throw std::invalid_argument("synth: too few documents for one question");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0))
        throw std::invalid_argument("synth: train_fraction must lie in (0,1]");
    if (spec.hub_rate < 0.0 || spec.hub_rate > 1.0) throw std::invalid_argument("synth: hub_rate must lie in [0,1]");

    nn::Rng rng(spec.seed);
    auto names = make_names(rng, spec.num_entities + spec.num_hubs);
    std::vector<std::string> hubs(names.begin() + static_cast<std::ptrdiff_t>(spec.num_entities), names.end());
    names.resize(spec.num_entities);

    std::vector<SynthChain> chains;
    std::vector<Triple> chain_triples;  // relation edges only
    std::set<std::pair<std::string, std::string>> used_pairs;
    for (std::size_t q = 0; q < nq; ++q) {
        bool ok = false;
        for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
            SynthChain c;
            std::set<std::size_t> picked;
            while (c.entities.size() < spec.hops + 1) {
                std::size_t e = rng.index(names.size());
                if (picked.insert(e).second) c.entities.push_back(names[e]);
            }
            for (std::size_t h = 0; h < spec.hops; ++h) c.relations.push_back(kRelations[rng.index(kNumRelations)].past);
            bool clash = false;
            std::vector<Triple> added;
            for (std::size_t h = 0; h < spec.hops; ++h) {
                auto key = std::minmax(c.entities[h], c.entities[h + 1]);
                if (used_pairs.count({key.first, key.second})) clash = true;
                added.push_back({c.entities[h], c.relations[h], c.entities[h + 1], std::nullopt});
            }
            if (clash) continue;
            std::vector<Triple> trial = chain_triples;
            trial.insert(trial.end(), added.begin(), added.end());
            auto lg = label_graph(trial);
            bool unique = true;
            std::vector<SynthChain> all = chains;
            all.push_back(c);
            for (const auto& ch : all) {
                auto pc = walk(lg, ch.entities.front(), ch.relations);
                if (pc.paths != 1) {
                    unique = false;
                    break;
                }
            }
            if (!unique) continue;
            chain_triples = std::move(trial);
            for (std::size_t h = 0; h < spec.hops; ++h) {
                auto key = std::minmax(c.entities[h], c.entities[h + 1]);
                used_pairs.insert({key.first, key.second});
            }
            chains.push_back(std::move(c));
            ok = true;
        }
        if (!ok) throw std::invalid_argument("synth: could not place a unique chain; increase num_entities");
    }

    SynthCorpus out;
    out.chains = chains;
    std::vector<std::vector<std::size_t>> chain_docs(nq);
    std::vector<std::set<std::string>> doc_entities;
    std::vector<std::set<std::string>> doc_relations;
    for (std::size_t q = 0; q < nq; ++q) {
        const auto& c = chains[q];
        for (std::size_t h = 0; h < spec.hops; ++h) {
            std::string id = "d" + std::to_string(q) + "_" + std::to_string(h);
            std::string body = c.entities[h] + " " + c.relations[h] + " " + c.entities[h + 1] + ".";
            std::vector<Triple> tr = {{c.entities[h], c.relations[h], c.entities[h + 1], id}};
            std::set<std::string> ents = {c.entities[h], c.entities[h + 1]};
            if (!hubs.empty() && rng.bernoulli(spec.hub_rate)) {
                const std::string& x = c.entities[h + rng.index(2)];
                const std::string& hub = hubs[rng.index(hubs.size())];
                body += " " + x + " " + kHubRelation + " " + hub + ".";
                tr.push_back({x, kHubRelation, hub, id});
                ents.insert(hub);
            }
            chain_docs[q].push_back(out.docs.size());
            out.docs.push_back(make_document(id, body));
            out.triples.insert(out.triples.end(), tr.begin(), tr.end());
            doc_entities.push_back(ents);
            doc_relations.push_back({c.relations[h]});
        }
    }

    std::size_t want = spec.distractor_ratio * spec.hops;
    std::size_t n_train = static_cast<std::size_t>(spec.train_fraction * static_cast<double>(nq) + 0.5);
    for (std::size_t q = 0; q < nq; ++q) {
        const auto& c = chains[q];
        std::set<std::string> ce(c.entities.begin(), c.entities.end());
        std::set<std::string> cr(c.relations.begin(), c.relations.end());
        // rank other documents by shared entities, then shared relation words
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t d = 0; d < out.docs.size(); ++d) {
            if (std::find(chain_docs[q].begin(), chain_docs[q].end(), d) != chain_docs[q].end()) continue;
            double score = 0.0;
            for (const auto& e : doc_entities[d]) score += 2.0 * static_cast<double>(ce.count(e));
            for (const auto& r : doc_relations[d]) score += static_cast<double>(cr.count(r));
            score += rng.uniform() * 0.5;
            cand.emplace_back(-score, d);
        }
        std::sort(cand.begin(), cand.end());
        std::vector<std::size_t> ctx = chain_docs[q];
        for (std::size_t i = 0; i < std::min(want, cand.size()); ++i) ctx.push_back(cand[i].second);
        rng.shuffle(ctx);

        Sample s;
        s.id = "q" + std::to_string(q);
        s.question = question_text(c);
        s.answer = c.entities.back();
        s.support_entities = c.entities;
        std::set<std::size_t> ctx_set(ctx.begin(), ctx.end());
        for (auto d : ctx) s.docs.push_back(out.docs[d]);
        for (auto d : chain_docs[q]) s.support_doc_ids.push_back(out.docs[d].id);
        for (const auto& t : out.triples) {
            auto d = std::find_if(ctx.begin(), ctx.end(), [&](std::size_t i) { return out.docs[i].id == *t.source_doc; });
            if (d != ctx.end()) s.oracle_triples.push_back(t);
        }
        (q < n_train ? out.train : out.heldout).push_back(std::move(s));
    }
    return out;
}

}  // namespace sage

#include <doctest.h>

#include <set>

#include "sage/synth.hpp"
#include "sage/text.hpp"

using namespace sage;

TEST_SUITE("synth") {

TEST_CASE("two-hop corpus shape") {
    SynthSpec spec;
    spec.num_entities = 60;
    spec.num_docs = 40;
    auto c = generate_synthetic(spec);
    CHECK(c.docs.size() == 40);
    CHECK(c.train.size() + c.heldout.size() == 20);
    CHECK(c.train.size() == 16);
    CHECK(c.chains.size() == 20);
    std::set<std::string> ids;
    for (const auto& d : c.docs) ids.insert(d.id);
    CHECK(ids.size() == c.docs.size());
    for (const auto& t : c.triples) CHECK(ids.count(*t.source_doc) == 1);

    std::vector<const Sample*> all;
    for (const auto& s : c.train) all.push_back(&s);
    for (const auto& s : c.heldout) all.push_back(&s);
    for (std::size_t q = 0; q < all.size(); ++q) {
        const Sample& s = *all[q];
        INFO(s.id);
        CHECK(s.support_doc_ids.size() == 2);
        CHECK(s.support_entities.size() == 3);
        CHECK(s.answer == c.chains[q].entities.back());
        CHECK(s.docs.size() == 2 + spec.distractor_ratio * spec.hops);
        for (const auto& id : s.support_doc_ids) {
            CHECK(std::any_of(s.docs.begin(), s.docs.end(), [&](const Document& d) { return d.id == id; }));
        }
        for (const auto& t : s.oracle_triples) {
            CHECK(std::any_of(s.docs.begin(), s.docs.end(), [&](const Document& d) { return d.id == *t.source_doc; }));
        }
        // The head entity is named in the question; the answer is not.
        auto qn = text::normalize_answer(s.question);
        CHECK(qn.find(text::normalize_answer(c.chains[q].entities.front())) != std::string::npos);
        CHECK(qn.find(text::normalize_answer(s.answer)) == std::string::npos);
    }
}

TEST_CASE("each question has exactly one evidence path") {
    for (std::size_t hops : {1u, 2u, 3u}) {
        SynthSpec spec;
        spec.hops = hops;
        spec.num_entities = 80;
        spec.num_docs = 60;
        spec.seed = 7 + hops;
        auto c = generate_synthetic(spec);
        for (const auto& ch : c.chains) {
            auto pc = count_labelled_paths(c.triples, ch.entities.front(), ch.relations);
            CHECK(pc.paths == 1);
            REQUIRE(pc.endpoints.size() == 1);
            CHECK(pc.endpoints[0] == text::canonicalize(ch.entities.back()));
        }
    }
    std::vector<Triple> tr = {{"a", "r", "b", "d"}, {"a", "r", "c", "d"}, {"b", "s", "x", "d"}, {"c", "s", "x", "d"}};
    auto pc = count_labelled_paths(tr, "a", {"r", "s"});
    CHECK(pc.paths == 2);
    CHECK(pc.endpoints == std::vector<std::string>{"x"});
    CHECK(count_labelled_paths(tr, "a", {"s"}).paths == 0);
}

TEST_CASE("generation is seed-stable") {
    SynthSpec spec;
    spec.num_entities = 50;
    spec.num_docs = 30;
    auto a = generate_synthetic(spec), b = generate_synthetic(spec);
    REQUIRE(a.docs.size() == b.docs.size());
    for (std::size_t i = 0; i < a.docs.size(); ++i) CHECK(a.docs[i].text == b.docs[i].text);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].question == b.train[i].question);
    spec.seed = 2;
    auto d = generate_synthetic(spec);
    bool differs = false;
    for (std::size_t i = 0; i < a.docs.size(); ++i) differs = differs || a.docs[i].text != d.docs[i].text;
    CHECK(differs);
}

TEST_CASE("spec validation") {
    SynthSpec s;
    s.hops = 0;
    CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
    s = {};
    s.num_entities = 2;
    CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
    s = {};
    s.num_docs = 1;
    CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
    s = {};
    s.train_fraction = 0.0;
    CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
    s = {};
    s.hub_rate = 1.5;
    CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
    s = {};
    s.num_entities = 4;
    s.num_docs = 40;
    CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);

    SynthSpec r;
    r.hops = 3;
    r.seed = 9;
    auto j = synth_spec_to_json(r);
    CHECK(synth_spec_to_json(synth_spec_from_json(j)) == j);
    CHECK_THROWS(synth_spec_from_json({{"bogus", 1}}));
}

}  // TEST_SUITE

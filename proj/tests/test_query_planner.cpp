#include <doctest.h>

#include "sage/lenient_json.hpp"
#include "sage/query_planner.hpp"

using namespace sage;
using nlohmann::json;

namespace {

json transcript(const std::vector<std::pair<std::string, std::string>>& entries) {
    json e = json::array();
    for (const auto& [prompt, resp] : entries) e.push_back({{"prompt_hash", prompt_hash(prompt)}, {"response", resp}});
    return {{"version", 1}, {"entries", e}};
}

const char* kExtraction = R"({"explicit_entities":["Frank Lowy"],"answer_type":"place","relation_clues":["born in"]})";

}  // namespace

TEST_SUITE("query_planner") {

TEST_CASE("schema enforcement") {
    SUBCASE("schema-exact input is unchanged") {
        json raw = {{"explicit_entities", {"Frank Lowy", "Westfield"}},
                    {"aliases", {{"Frank Lowy", {"Lowy"}}}},
                    {"relation_clues", {"founded"}},
                    {"hard_constraints", {{"year", "1959"}}},
                    {"answer_type", "person"},
                    {"pseudo_queries", json::array({{{"text", "who founded Westfield"},
                                                     {"confidence", 0.8},
                                                     {"intent", "relation"}}})}};
        auto p = validate_plan(raw);
        CHECK(plan_to_json(p) == raw);
        CHECK(validate_plan(plan_to_json(p)) == p);
    }
    SUBCASE("duplicates removed in first-seen order") {
        auto p = validate_plan({{"explicit_entities", {"A", "B", "A", " ", "B"}}, {"answer_type", "entity"}});
        CHECK(p.explicit_entities == std::vector<std::string>{"A", "B"});
    }
    SUBCASE("confidences are clamped") {
        auto p = validate_plan({{"explicit_entities", json::array()},
                                {"answer_type", "entity"},
                                {"pseudo_queries", {"x", "y"}},
                                {"rewriter_confidence", {1.7, -0.2}}});
        REQUIRE(p.pseudo_queries.size() == 2);
        CHECK(p.pseudo_queries[0].confidence == 1.0);
        CHECK(p.pseudo_queries[1].confidence == 0.0);
    }
    SUBCASE("missing required keys are reported") {
        try {
            validate_plan({{"answer_type", "x"}});
            FAIL("expected throw");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("explicit_entities") != std::string::npos);
        }
        CHECK_THROWS_AS(validate_plan({{"explicit_entities", json::array()}}), std::invalid_argument);
        CHECK_THROWS_AS(validate_plan(json::array()), std::invalid_argument);
    }
    SUBCASE("synonym keys and pseudo-query cap") {
        auto p = validate_plan({{"explicit_entities", {"a"}},
                                {"answer_type", "entity"},
                                {"candidate_aliases", {{"a", {"alpha", "alpha"}}}},
                                {"constraints", {{"year", 1990}}},
                                {"pseudo_queries", {{{"text", "p1"}, {"confidence", 0.2}},
                                                    {{"text", "p2"}, {"confidence", 0.9}},
                                                    {{"text", "p3"}, {"confidence", 0.2}},
                                                    {{"text", "p4"}, {"confidence", 0.5}}}}},
                               2);
        CHECK(p.aliases.at("a") == std::vector<std::string>{"alpha"});
        CHECK(p.hard_constraints.at("year") == "1990");
        REQUIRE(p.pseudo_queries.size() == 2);
        CHECK(p.pseudo_queries[0].text == "p2");
        CHECK(p.pseudo_queries[1].text == "p4");
        for (const auto& q : p.pseudo_queries) CHECK_FALSE(q.intent.empty());
    }
}

TEST_CASE("lenient json repair") {
    auto j = parse_lenient("```json\n{\"a\": [1, 2,], \"b\": \"x\"\n```");
    REQUIRE(j);
    CHECK((*j)["a"] == json({1, 2}));
    auto k = parse_lenient("Sure! {\"a\": {\"b\": 1");
    REQUIRE(k);
    CHECK((*k)["a"]["b"] == 1);
    CHECK_FALSE(parse_lenient("no json here").has_value());
}

TEST_CASE("two-stage planning with a recorded transcript") {
    std::string q = "Where was Frank Lowy born?";
    auto ext = json::parse(kExtraction);
    std::string inf_prompt = render_inferer_prompt(q, ext, 3);
    MockLLMClient client(transcript({{render_extractor_prompt(q), kExtraction},
                                     {inf_prompt, R"({"pseudo_queries":["frank lowy birthplace","lowy born"],
                                                      "rewriter_confidence":[0.9, 1.4]})"}}));
    auto out = plan_llm(q, client, 3);
    CHECK_FALSE(out.used_fallback);
    CHECK(out.attempts == 2);
    CHECK(out.plan.explicit_entities == std::vector<std::string>{"Frank Lowy"});
    CHECK(out.plan.answer_type == "place");
    REQUIRE(out.plan.pseudo_queries.size() == 2);
    CHECK(out.plan.pseudo_queries[1].confidence == 1.0);
    CHECK(std::find(out.warnings.begin(), out.warnings.end(), "confidence clamped") != out.warnings.end());
}

TEST_CASE("retries then fallback") {
    std::string q = "Who founded Westfield?";
    SUBCASE("malformed then valid extraction") {
        auto ext = json::parse(kExtraction);
        MockLLMClient client(transcript({{render_extractor_prompt(q), "not json"},
                                         {render_extractor_prompt(q), kExtraction},
                                         {render_inferer_prompt(q, ext, 3), R"({"pseudo_queries":[]})"}}));
        auto out = plan_llm(q, client, 3);
        CHECK_FALSE(out.used_fallback);
        CHECK(out.attempts == 3);
    }
    SUBCASE("timeouts fall back to the deterministic planner") {
        MockLLMClient client(transcript({}));
        auto out = plan_llm(q, client, 3, 3);
        CHECK(out.used_fallback);
        CHECK(client.calls() == 3);
        CHECK(out.plan == plan_deterministic(q, nullptr, 3));
    }
    CHECK_THROWS(MockLLMClient(json{{"version", 2}, {"entries", json::array()}}));
}

TEST_CASE("deterministic planner") {
    GraphMemory g;
    g.add_document(make_document("d", "t"));
    g.add_triple("frank lowy", "founded", "westfield", 0);
    auto p = plan_deterministic("Where was Frank Lowy born in 1930?", &g);
    CHECK(p.explicit_entities == std::vector<std::string>{"frank lowy"});
    CHECK(p.answer_type == "place");
    CHECK(p.hard_constraints.at("year") == "1930");
    REQUIRE_FALSE(p.pseudo_queries.empty());
    CHECK(p.pseudo_queries[0].text == "Where was Frank Lowy born in 1930?");
    CHECK(p.pseudo_queries.size() <= kDefaultPseudoQueries);

    auto nog = plan_deterministic("Who directed The Big Sleep?", nullptr);
    CHECK(nog.answer_type == "person");
    CHECK(nog.explicit_entities == std::vector<std::string>{"big sleep"});
    CHECK(plan_deterministic("", nullptr).explicit_entities.empty());
    CHECK(plan_deterministic("when did it open", nullptr).answer_type == "date");
    // Same input, same plan.
    CHECK(plan_deterministic("Who founded Westfield and Frank Lowy?", &g) ==
          plan_deterministic("Who founded Westfield and Frank Lowy?", &g));
}

TEST_CASE("intent labels") {
    QueryPlan p;
    p.explicit_entities = {"a", "b"};
    p.aliases["a"] = {"alpha"};
    p.hard_constraints["year"] = "1990";
    p.relation_clues = {"born in"};
    CHECK(intent_label("in 1990", p) == "constraint");
    CHECK(intent_label("alpha thing", p) == "alias");
    CHECK(intent_label("a and b", p) == "bridge");
    CHECK(intent_label("born in x", p) == "relation");
    CHECK(intent_label("zzz", p) == "attribute");
}

}  // TEST_SUITE

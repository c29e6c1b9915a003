#include <doctest.h>

#include <functional>
#include <memory>

#include "sage/writer_env.hpp"
#include "test_util.hpp"
#include "writer_model.hpp"

using namespace sage;
using namespace writer_model;

namespace {

FrozenReader small_reader(std::size_t k) {
    FrozenReader fr;
    fr.params = init_reader_params(testutil::small_config(1));
    fr.emb = std::make_shared<HashedNgramEmbedder>(16);
    fr.options = retrieval_options_from(fr.params.cfg, k);
    return fr;
}

}  // namespace

TEST_SUITE("writer_env") {

TEST_CASE("reset") {
    Sample s = two_doc_sample();
    s.docs.push_back(make_document("d2", "extra"));
    auto st = reset(s, WriteMode::Iterative, 5);
    CHECK(st.remaining.size() == 3);
    CHECK(st.processed.empty());
    CHECK(st.flag == Flag::Construct);
    CHECK(st.turn == 0);
    CHECK(st.graph.num_entities() == 0);
    CHECK(st.graph.num_documents() == 3);
    s.support_doc_ids = {"missing"};
    CHECK_THROWS_AS(reset(s, WriteMode::Iterative), std::invalid_argument);
    CHECK_THROWS(reset(two_doc_sample(), WriteMode::Iterative, 0));
}

TEST_CASE("action parsing") {
    CHECK(action_kind(parse_action(kAlphabet[0])) == "triples");
    CHECK(std::get<TriplesAction>(parse_action(kAlphabet[0])).triples[0].subject == "ann lee");
    CHECK(action_kind(parse_action("[]")) == "triples");
    CHECK(action_kind(parse_action(kAlphabet[2])) == "terminate");
    CHECK(std::get<TerminateAction>(parse_action(kAlphabet[2])).answer == "Oslo");
    CHECK(action_kind(parse_action(kAlphabet[3])) == "illegal");
    CHECK(action_kind(parse_action(R"({"foo":1})")) == "illegal");
    // Malformed entries are dropped, the rest kept.
    auto t = std::get<TriplesAction>(parse_action(R"([{"subject":"a","relation":"r","object":""},
                                                      {"subject":"b","relation":"r","object":"c"}, 3])"));
    REQUIRE(t.triples.size() == 1);
    CHECK(t.triples[0].object == "c");
    // Lenient repair of a truncated array.
    CHECK(action_kind(parse_action(R"(```json [{"subject":"a","relation":"r","object":"b"})")) == "triples");
}

TEST_CASE("exhaustive model check over short action sequences") {
    Sample s = two_doc_sample();
    std::size_t visited = 0;
    for (WriteMode mode : {WriteMode::Iterative, WriteMode::Single}) {
        for (std::size_t cap : {1u, 2u, 3u, 12u}) {
            std::function<void(WriterState, RefState, std::size_t)> explore = [&](WriterState st, RefState ref,
                                                                                   std::size_t depth) {
                ++visited;
                CHECK(st.flag == ref.flag);
                CHECK(st.turn == ref.turn);
                CHECK(st.processed.size() == ref.processed);
                CHECK(st.remaining.size() == ref.remaining);
                CHECK(st.processed.size() + st.remaining.size() == s.docs.size());
                for (const auto& p : st.processed)
                    CHECK(std::find(st.remaining.begin(), st.remaining.end(), p) == st.remaining.end());
                CHECK(st.zero_reward == ref.zero);
                CHECK(st.format_rewards.size() == ref.legal);
                CHECK(st.turn <= cap);
                CHECK(st.graph.triple_total() == ref.triples);
                if (st.flag != Flag::Construct) {
                    WriterState copy = st;
                    CHECK_THROWS_AS(step(copy, parse_action("[]")), std::logic_error);
                    if (st.zero_reward) {
                        auto fr = small_reader(2);
                        DeterministicJudge j;
                        DeterministicAnswerer an;
                        auto b = finish(copy, s, fr, j, an, {});
                        CHECK(b.zero_reward);
                        CHECK(b.R == 0.0);
                        CHECK(copy.flag == Flag::Stop);
                    }
                    return;
                }
                if (depth == 5) return;
                for (std::size_t a = 0; a < kAlphabet.size(); ++a) {
                    WriterState next = st;
                    RefState rn = ref;
                    auto res = step(next, parse_action(kAlphabet[a]));
                    ref_step(rn, a, mode, cap);
                    CHECK(res.done == (next.flag != Flag::Construct));
                    CHECK(res.reward == (a == 3 ? 0.0 : 1.0));
                    explore(next, rn, depth + 1);
                }
            };
            RefState r0;
            r0.remaining = s.docs.size();
            explore(reset(s, mode, cap), r0, 0);
        }
    }
    CHECK(visited > 50);
}

TEST_CASE("iterative writes anchor to the current document") {
    Sample s = two_doc_sample();
    auto st = reset(s, WriteMode::Iterative);
    step(st, parse_action(kAlphabet[0]));
    step(st, parse_action(R"([{"subject":"Oslo","relation":"city in","object":"Norway"}])"));
    CHECK(st.flag == Flag::Rag);
    auto oslo = *st.graph.find_entity("oslo");
    auto d0 = *st.graph.find_document("d0"), d1 = *st.graph.find_document("d1");
    CHECK(st.graph.ed_anchors().count({oslo, d0}));
    CHECK(st.graph.ed_anchors().count({oslo, d1}));
    CHECK_FALSE(st.graph.ed_anchors().count({*st.graph.find_entity("norway"), d0}));

    // Single mode aligns by token overlap instead.
    auto ss = reset(s, WriteMode::Single);
    step(ss, parse_action(R"([{"subject":"Oslo","relation":"city in","object":"Norway"}])"));
    CHECK(ss.flag == Flag::Construct);
    CHECK(ss.remaining.empty());
    step(ss, parse_action(kAlphabet[2]));
    CHECK(ss.flag == Flag::Rag);
    CHECK(ss.graph.ed_anchors().count({*ss.graph.find_entity("norway"), *ss.graph.find_document("d1")}));
}

TEST_CASE("reward components against hand counts") {
    Sample s = two_doc_sample();
    s.support_doc_ids = {"d0", "d1"};
    DeterministicJudge j;
    DeterministicAnswerer an;
    RewardConfig cfg;
    auto b = compute_rewards({"d1"}, s, j, an, cfg);
    CHECK(b.r_rec == 0.5);
    CHECK(b.r_pre == 1.0);
    CHECK(b.r_ded == 1.0);  // "Oslo" occurs in d1
    CHECK(b.r_task == doctest::Approx(2.5 / 3.0));
    auto empty = compute_rewards({}, s, j, an, cfg);
    CHECK(empty.r_rec == 0.0);
    CHECK(empty.r_pre == 0.0);
    CHECK(empty.r_ded == 0.0);

    CHECK(hybrid_task_reward(1, 0, 0, 2, 1, 1) == 0.5);
    CHECK(hybrid_task_reward(0.3, 0.6, 0.9, 1, 1, 1) == doctest::Approx(0.6));
    CHECK_THROWS(hybrid_task_reward(1, 1, 1, 0, 0, 0));

    // Any accepted alias is enough for the judge.
    CHECK(*j.judge("q", {"Paris", "Oslo"}, {"born in Oslo."}));
    CHECK_FALSE(*j.judge("q", {"Paris"}, {"born in Oslo."}));
    CHECK_FALSE(*j.judge("q", {"Osl"}, {"born in Oslo."}));
    CHECK(*an.answer("where born", {"Oslo", "Oslo Norway"}, {"in Oslo Norway today"}) == "oslo norway");
}

TEST_CASE("failing judge degrades to zero") {
    struct Broken : JudgeClient, AnswererClient {
        std::optional<bool> judge(std::string_view, const std::vector<std::string>&,
                                  const std::vector<std::string>&) override {
            return std::nullopt;
        }
        std::optional<std::string> answer(std::string_view, const std::vector<std::string>&,
                                          const std::vector<std::string>&) override {
            return std::nullopt;
        }
    } broken;
    auto b = compute_rewards({"d0"}, two_doc_sample(), broken, broken, {});
    CHECK(b.r_ded == 0.0);
    CHECK(b.r_ans == 0.0);
    CHECK(b.warnings.size() == 2);
}

TEST_CASE("trajectory return and repetition penalty") {
    Sample s = two_doc_sample();
    auto fr = small_reader(2);
    DeterministicJudge j;
    DeterministicAnswerer an;
    RewardConfig cfg;
    cfg.lambda_rep = 0.5;
    cfg.lambda_fmt = 0.01;

    auto run = [&](const std::string& a0, const std::string& a1) {
        auto st = reset(s, WriteMode::Iterative);
        step(st, parse_action(a0));
        step(st, parse_action(a1));
        return finish(st, s, fr, j, an, cfg);
    };
    std::string t0 = R"({"subject":"Ann Lee","relation":"born in","object":"Oslo"})";
    std::string t1 = R"({"subject":"Oslo","relation":"city in","object":"Norway"})";
    auto clean = run("[" + t0 + "]", "[" + t1 + "]");
    CHECK(clean.rho_rep == 0.0);
    CHECK(clean.R == doctest::Approx(clean.r_task + 0.01 * 2).epsilon(1e-15));
    auto doubled = run("[" + t0 + "," + t0 + "]", "[" + t1 + "," + t1 + "]");
    CHECK(doubled.rho_rep == 0.5);
    CHECK(doubled.r_task == clean.r_task);
    CHECK(doubled.R == doctest::Approx(clean.R - 0.25).epsilon(1e-15));

    RewardBreakdown b;
    b.r_task = 0.4;
    b.format_rewards = {1, 1, 1};
    GraphMemory g;
    g.add_document(make_document("d", "t"));
    for (int i = 0; i < 3; ++i) g.add_triple("a", "r", "b", 0);
    g.add_triple("a", "r", "c", 0);
    CHECK(trajectory_return(b, g, 0.1, 0.01) == doctest::Approx(0.4 - 0.1 * 0.5 + 0.03));
}

TEST_CASE("empty written graph") {
    Sample s = two_doc_sample();
    auto fr = small_reader(2);
    auto st = reset(s, WriteMode::Single);
    step(st, parse_action("[]"));
    step(st, parse_action(kAlphabet[2]));
    auto ev = evaluate_graph(st.graph, s.question, fr);
    CHECK(ev.empty_graph);
    CHECK(ev.doc_ids.empty());
    DeterministicJudge j;
    DeterministicAnswerer an;
    auto b = finish(st, s, fr, j, an, {});
    CHECK(b.r_rec == 0.0);
    CHECK(b.r_pre == 0.0);
}

TEST_CASE("state digest tracks content") {
    Sample s = two_doc_sample();
    auto a = reset(s, WriteMode::Iterative), b = reset(s, WriteMode::Iterative);
    CHECK(a.digest() == b.digest());
    step(a, parse_action("[]"));
    CHECK(a.digest() != b.digest());
    step(b, parse_action("[]"));
    CHECK(a == b);
}

}  // TEST_SUITE

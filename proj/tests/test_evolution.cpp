#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "sage/evolution.hpp"
#include "sage/synth.hpp"
#include "test_util.hpp"

using namespace sage;

namespace {

SynthCorpus tiny_corpus() {
    SynthSpec spec;
    spec.num_entities = 40;
    spec.num_docs = 24;
    spec.distractor_ratio = 2;
    spec.seed = 3;
    return generate_synthetic(spec);
}

FrozenReader frozen(std::size_t k) {
    FrozenReader fr;
    fr.params = init_reader_params(testutil::small_config(1));
    fr.emb = std::make_shared<HashedNgramEmbedder>(16);
    fr.options = retrieval_options_from(fr.params.cfg, k);
    return fr;
}

EvolveConfig tiny_evolve() {
    EvolveConfig c;
    c.rounds = 1;
    c.group_size = 2;
    c.eval_batch = 4;
    c.updates_per_round = 2;
    c.pretrain.steps = 2;
    c.finetune.epochs = 2;
    c.finetune.batch_size = 4;
    return c;
}

}  // namespace

TEST_SUITE("evolution") {

TEST_CASE("group-relative advantages") {
    auto a = group_advantages({1.0, 0.0});
    CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(a[1] == doctest::Approx(-1.0).epsilon(1e-7));
    for (double v : group_advantages({0.3, 0.3, 0.3})) CHECK(v == 0.0);
    CHECK(group_advantages({5.0}) == std::vector<double>{0.0});
    CHECK_THROWS(group_advantages({}));

    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(2.0, 3.0);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> r(2 + rng() % 10);
        for (auto& x : r) x = nd(rng);
        auto adv = group_advantages(r);
        double n = static_cast<double>(r.size());
        double m = std::accumulate(r.begin(), r.end(), 0.0) / n, v = 0;
        for (double x : r) v += (x - m) * (x - m);
        double sd = std::sqrt(v / n);
        for (std::size_t i = 0; i < r.size(); ++i) CHECK(adv[i] == doctest::Approx((r[i] - m) / (sd + 1e-8)));
        CHECK(std::fabs(std::accumulate(adv.begin(), adv.end(), 0.0)) < 1e-9);
    }
}

TEST_CASE("percentile filtering") {
    RolloutGroup g;
    g.returns = {0.2, 0.9, 0.5, 0.9, 0.1};
    g.advantages = group_advantages(g.returns);
    auto all = filter_rollouts(g, 0.0);
    CHECK(all.returns == g.returns);
    auto top = filter_rollouts(g, 100.0);
    CHECK(top.returns == std::vector<double>{0.9, 0.9});
    auto half = filter_rollouts(g, 50.0);
    CHECK(half.returns == std::vector<double>{0.9, 0.5, 0.9});
    CHECK_THROWS(filter_rollouts(g, 101.0));

    CHECK(percentile_cutoff({1, 2, 3, 4}, 50) == 2.5);
    CHECK(percentile_cutoff({4, 1, 3, 2}, 0) == 1);
    CHECK(percentile_cutoff({4, 1, 3, 2}, 100) == 4);
    CHECK(percentile_cutoff({7}, 30) == 7);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 50; ++t) {
        RolloutGroup h;
        h.returns.resize(1 + rng() % 8);
        for (auto& x : h.returns) x = u(rng);
        double p = 100 * u(rng);
        auto f = filter_rollouts(h, p);
        double mx = *std::max_element(h.returns.begin(), h.returns.end());
        CHECK(std::find(f.returns.begin(), f.returns.end(), mx) != f.returns.end());
        CHECK(f.returns.size() <= h.returns.size());
        double cut = percentile_cutoff(h.returns, p);
        for (double r : f.returns) CHECK((r >= cut || r == mx));
    }
}

TEST_CASE("coordinate updates never lower the return") {
    MockWriter w;
    ReturnEvaluator eval = [](const MockWriterParams& p) { return -std::fabs(p.noise - 0.0) - std::fabs(p.max_triples - 5); };
    auto before = w.params();
    auto zero = update_mock_policy(w, eval, 0.0, 3, eval(before));
    CHECK(w.params() == before);
    CHECK_FALSE(zero.accepted);

    double cur = eval(w.params());
    for (int i = 0; i < 30; ++i) {
        auto rec = update_mock_policy(w, eval, 1.0, static_cast<std::size_t>(i) % MockWriterParams::kCount, cur);
        CHECK(rec.after >= rec.before);
        CHECK(eval(w.params()) == rec.after);
        cur = rec.after;
    }
    CHECK(w.params().noise == doctest::Approx(0.0));
    CHECK(w.params().max_triples == doctest::Approx(5.0));
    CHECK_THROWS(update_mock_policy(w, eval, 1.0, 5, cur));

    // Flat objective: nothing is accepted.
    MockWriter f;
    ReturnEvaluator flat = [](const MockWriterParams&) { return 1.0; };
    auto rec = update_mock_policy(f, flat, 1.0, 0, 1.0);
    CHECK_FALSE(rec.accepted);
    CHECK(f.params() == MockWriter().params());
}

TEST_CASE("rollouts replay deterministically") {
    auto corpus = tiny_corpus();
    REQUIRE_FALSE(corpus.train.empty());
    const Sample& s = corpus.train[0];
    auto fr = frozen(2);
    EnvConfig env;
    MockWriter w;
    auto g1 = rollout_group(w, s, fr, env, 4, 99);
    auto g2 = rollout_group(w, s, fr, env, 4, 99);
    CHECK(g1.returns == g2.returns);
    CHECK(g1.trajectories.size() == 4);
    auto single = rollout_group(w, s, fr, env, 1, 99);
    CHECK(single.advantages == std::vector<double>{0.0});
    CHECK_THROWS(rollout_group(w, s, fr, env, 0, 1));

    for (const auto& t : g1.trajectories) {
        auto st = reset(s, env.mode, env.turn_cap);
        for (const auto& turn : t.turns) {
            CHECK(st.digest() == turn.state_digest);
            step(st, parse_action(turn.action_text));
        }
        CHECK(st.graph == t.graph);
        DeterministicJudge j;
        DeterministicAnswerer an;
        auto b = finish(st, s, fr, j, an, env.reward);
        CHECK(b.R == t.R);
    }
    // The oracle writer reproduces the gold graph.
    OracleWriter ow;
    auto ot = run_episode(ow, s, fr, env, 5);
    CHECK(ot.breakdown.rho_rep == 0.0);
    CHECK(ot.graph.triple_total() == s.oracle_triples.size());
}

TEST_CASE("evolution rounds") {
    auto corpus = tiny_corpus();
    auto emb = std::make_shared<HashedNgramEmbedder>(16);
    auto cfg = tiny_evolve();
    auto reader = init_reader_params(testutil::small_config(1));
    std::size_t sink_calls = 0;
    auto res = evolve(corpus.train, corpus.heldout, MockWriter(), reader, emb, cfg,
                      [&](const RoundRecord&, const EvolutionResult&) { ++sink_calls; });
    REQUIRE(res.history.size() == 2);
    CHECK(sink_calls == 2);
    const auto& r1 = res.history[1];
    CHECK(r1.writer_return_after >= r1.writer_return_before);
    CHECK(r1.updates.size() == 2);
    CHECK(r1.utility - res.history[0].utility == doctest::Approx(r1.delta_W + r1.delta_R));
    CHECK(res.writer.params() == r1.writer);

    auto again = evolve(corpus.train, corpus.heldout, MockWriter(), reader, emb, cfg);
    CHECK(again.report().dump() == res.report().dump());
    CHECK(reader_to_json(again.reader).dump() == reader_to_json(res.reader).dump());

    cfg.rounds = 0;
    CHECK_THROWS(evolve(corpus.train, corpus.heldout, MockWriter(), reader, emb, cfg));
}

}  // TEST_SUITE

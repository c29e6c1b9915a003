#include "sage/evolution.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sage/metrics.hpp"

namespace sage {

WriterState construct(const WriterPolicy& policy, const Sample& sample, const EnvConfig& env, std::uint64_t seed,
                      std::vector<TurnRecord>* turns) {
    nn::Rng rng(seed);
    WriterState s = reset(sample, env.mode, env.turn_cap);
    while (s.flag == Flag::Construct) {
        std::string digest = s.digest();
        std::string text = policy.propose(s, sample, rng);
        Action a = parse_action(text);
        StepResult r = step(s, a);
        if (turns) turns->push_back({digest, action_kind(a), text, r.reward});
    }
    return s;
}

Trajectory run_episode(const WriterPolicy& policy, const Sample& sample, FrozenReader& reader, const EnvConfig& env,
                       std::uint64_t seed) {
    Trajectory t;
    t.seed = seed;
    WriterState s = construct(policy, sample, env, seed, &t.turns);
    DeterministicJudge judge;
    DeterministicAnswerer answerer;
    t.breakdown = finish(s, sample, reader, judge, answerer, env.reward);
    t.R = t.breakdown.R;
    t.graph = std::move(s.graph);
    return t;
}

std::vector<double> group_advantages(const std::vector<double>& returns) {
    if (returns.empty()) throw std::invalid_argument("group_advantages: empty group");
    double n = static_cast<double>(returns.size());
    double mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
    double var = 0.0;
    for (double r : returns) var += (r - mean) * (r - mean);
    double sd = std::sqrt(var / n);
    std::vector<double> adv;
    for (double r : returns) adv.push_back(sd > 0.0 ? (r - mean) / (sd + 1e-8) : 0.0);
    return adv;
}

RolloutGroup rollout_group(const WriterPolicy& policy, const Sample& sample, FrozenReader& reader, const EnvConfig& env,
                           std::size_t G, std::uint64_t seed) {
    if (G == 0) throw std::invalid_argument("rollout_group: G must be >= 1");
    RolloutGroup g;
    for (std::size_t i = 0; i < G; ++i) {
        g.trajectories.push_back(run_episode(policy, sample, reader, env, nn::derive_seed(seed, i)));
        g.returns.push_back(g.trajectories.back().R);
    }
    g.advantages = group_advantages(g.returns);
    return g;
}

double percentile_cutoff(std::vector<double> v, double p) {
    if (v.empty()) throw std::invalid_argument("percentile_cutoff: empty input");
    std::sort(v.begin(), v.end());
    double pos = p / 100.0 * static_cast<double>(v.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

RolloutGroup filter_rollouts(const RolloutGroup& g, double percentile) {
    if (!(percentile >= 0.0 && percentile <= 100.0)) throw std::invalid_argument("filter_rollouts: threshold in [0,100]");
    if (g.returns.empty()) return g;
    double cut = percentile_cutoff(g.returns, percentile);
    std::size_t best = static_cast<std::size_t>(std::max_element(g.returns.begin(), g.returns.end()) - g.returns.begin());
    RolloutGroup out;
    for (std::size_t i = 0; i < g.returns.size(); ++i) {
        if (g.returns[i] >= cut || i == best) {
            if (i < g.trajectories.size()) out.trajectories.push_back(g.trajectories[i]);
            out.returns.push_back(g.returns[i]);
        }
    }
    out.advantages = group_advantages(out.returns);
    return out;
}

UpdateRecord update_mock_policy(MockWriter& writer, const ReturnEvaluator& eval, double step, std::size_t coordinate,
                                double current) {
    if (coordinate >= MockWriterParams::kCount) throw std::invalid_argument("update_mock_policy: bad coordinate");
    UpdateRecord rec;
    rec.coordinate = coordinate;
    rec.before = current;
    rec.after = current;
    if (step == 0.0) return rec;
    const MockWriterParams base = writer.params();
    double scale = MockWriterParams::step_scales()[coordinate];
    double best = current;
    double best_dir = 0.0;
    MockWriterParams best_params = base;
    for (double dir : {1.0, -1.0}) {
        auto v = base.vec();
        v[coordinate] += dir * step * scale;
        MockWriterParams cand = MockWriterParams::from_vec(v);
        cand.clamp();
        if (cand == base) continue;
        double value = eval(cand);
        if (value > best) {
            best = value;
            best_dir = dir;
            best_params = cand;
        }
    }
    if (best_dir != 0.0) {
        writer.set_params(best_params);
        rec.accepted = true;
        rec.direction = best_dir;
        rec.after = best;
    } else {
        writer.set_params(base);
    }
    return rec;
}

nlohmann::json evolve_config_to_json(const EvolveConfig& c) {
    return {{"rounds", c.rounds},
            {"group_size", c.group_size},
            {"filter_percentile", c.filter_percentile},
            {"eval_batch", c.eval_batch},
            {"updates_per_round", c.updates_per_round},
            {"step", c.step},
            {"reward_k", c.reward_k},
            {"mode", to_string(c.env.mode)},
            {"turn_cap", c.env.turn_cap},
            {"reward",
             {{"alpha", c.env.reward.alpha},
              {"beta", c.env.reward.beta},
              {"gamma", c.env.reward.gamma},
              {"lambda_rep", c.env.reward.lambda_rep},
              {"lambda_fmt", c.env.reward.lambda_fmt}}},
            {"pretrain_round0", c.pretrain_round0},
            {"pretrain_steps", c.pretrain.steps},
            {"finetune_epochs", c.finetune.epochs},
            {"seed", c.seed}};
}

nlohmann::json RoundRecord::to_json() const {
    nlohmann::json ups = nlohmann::json::array();
    for (const auto& u : updates) {
        ups.push_back({{"coordinate", MockWriterParams::names()[u.coordinate]},
                       {"before", u.before},
                       {"after", u.after},
                       {"direction", u.direction},
                       {"accepted", u.accepted}});
    }
    return {{"round", round},
            {"writer_return_before", writer_return_before},
            {"mean_R", writer_return_after},
            {"updates", ups},
            {"r_rec", r_rec},
            {"r_pre", r_pre},
            {"r_ded", r_ded},
            {"rho_rep", rho_rep},
            {"recall_at_2", recall_at_2},
            {"recall_at_5", recall_at_5},
            {"utility_after_writer", utility_after_writer},
            {"utility", utility},
            {"delta_W", delta_W},
            {"delta_R", delta_R},
            {"writer", writer.to_json()},
            {"wall_seconds", wall_seconds}};
}

nlohmann::json EvolutionResult::report() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& r : history) {
        auto j = r.to_json();
        j.erase("wall_seconds");  // keeps reports byte-stable across runs
        h.push_back(j);
    }
    return {{"rounds", h}, {"writer", writer.params().to_json()}};
}

std::vector<GraphMemory> write_graphs(const WriterPolicy& policy, const std::vector<Sample>& samples,
                                      const EnvConfig& env, std::uint64_t seed) {
    std::vector<GraphMemory> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.push_back(construct(policy, samples[i], env, nn::derive_seed(seed, i)).graph);
    }
    return out;
}

std::vector<FinetuneSample> reader_samples(const std::vector<Sample>& samples, const std::vector<GraphMemory>& graphs,
                                           const TextEmbedder& emb, const SummaryNorm& norm,
                                           std::deque<PreparedGraph>& store) {
    if (samples.size() != graphs.size()) throw std::invalid_argument("reader_samples: size mismatch");
    std::vector<FinetuneSample> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (graphs[i].num_entities() == 0) continue;
        store.push_back(prepare_graph(graphs[i], emb, norm));
        const PreparedGraph* pg = &store.back();
        QueryPlan plan = plan_deterministic(samples[i].question, &pg->graph);
        out.push_back(make_finetune_sample(samples[i].question, std::move(plan), pg, emb, samples[i].support_entities,
                                           samples[i].support_doc_ids));
    }
    return out;
}

HeldoutEval evaluate_heldout(const WriterPolicy& policy, const std::vector<Sample>& heldout, FrozenReader& reader,
                             const EnvConfig& env, std::uint64_t seed) {
    HeldoutEval ev;
    if (heldout.empty()) return ev;
    MeanAccumulator u, rec, pre, ded, rho, r2, r5;
    for (std::size_t i = 0; i < heldout.size(); ++i) {
        const Sample& s = heldout[i];
        Trajectory t = run_episode(policy, s, reader, env, nn::derive_seed(seed, i));
        u.add(t.breakdown.r_task);
        rec.add(t.breakdown.r_rec);
        pre.add(t.breakdown.r_pre);
        ded.add(t.breakdown.r_ded);
        rho.add(t.breakdown.rho_rep);
        // recall is reported at depth 5 whatever the reward depth
        std::size_t k0 = reader.options.k;
        reader.options.k = std::max<std::size_t>(k0, 5);
        Evidence e = evaluate_graph(t.graph, s.question, reader);
        reader.options.k = k0;
        std::vector<std::size_t> ranked, gold;
        for (const auto& id : e.doc_ids) {
            auto it = std::find_if(s.docs.begin(), s.docs.end(), [&](const Document& d) { return d.id == id; });
            ranked.push_back(static_cast<std::size_t>(it - s.docs.begin()));
        }
        for (const auto& id : s.support_doc_ids) {
            auto it = std::find_if(s.docs.begin(), s.docs.end(), [&](const Document& d) { return d.id == id; });
            gold.push_back(static_cast<std::size_t>(it - s.docs.begin()));
        }
        r2.add(recall_at_k(ranked, gold, 2));
        r5.add(recall_at_k(ranked, gold, 5));
    }
    ev.utility = u.mean();
    ev.r_rec = rec.mean();
    ev.r_pre = pre.mean();
    ev.r_ded = ded.mean();
    ev.rho_rep = rho.mean();
    ev.recall_at_2 = r2.mean();
    ev.recall_at_5 = r5.mean();
    return ev;
}

namespace {

void fill_eval(RoundRecord& r, const HeldoutEval& e) {
    r.r_rec = e.r_rec;
    r.r_pre = e.r_pre;
    r.r_ded = e.r_ded;
    r.rho_rep = e.rho_rep;
    r.recall_at_2 = e.recall_at_2;
    r.recall_at_5 = e.recall_at_5;
    r.utility = e.utility;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

EvolutionResult evolve(const std::vector<Sample>& train, const std::vector<Sample>& heldout, MockWriter writer,
                       ReaderParams reader, std::shared_ptr<const TextEmbedder> emb, const EvolveConfig& cfg,
                       const RoundSink& on_round) {
    if (cfg.rounds == 0) throw std::invalid_argument("evolve: rounds must be >= 1");
    if (train.empty()) throw std::invalid_argument("evolve: empty training set");
    if (!emb) throw std::invalid_argument("evolve: embedder required");
    EvolutionResult res;
    const std::uint64_t graph_seed = nn::derive_seed(cfg.seed, 1);
    const std::uint64_t eval_seed = nn::derive_seed(cfg.seed, 2);
    auto frozen = [&](const ReaderParams& p) {
        FrozenReader fr{p, emb, retrieval_options_from(p.cfg, std::max<std::size_t>(cfg.reward_k, 1)), nullptr};
        return fr;
    };

    // round 0: reader trained on the starting writer's graphs
    auto t0 = std::chrono::steady_clock::now();
    {
        auto graphs = write_graphs(writer, train, cfg.env, graph_seed);
        std::vector<GraphSummary> sums;
        for (const auto& g : graphs) {
            auto sg = binarized_structural_graph(g);
            sums.push_back(graph_summary(sg, node_features(sg)));
        }
        reader.set_summary_norm(fit_summary_norm(sums));
        std::deque<PreparedGraph> store;
        auto samples = reader_samples(train, graphs, *emb, reader.summary_norm(), store);
        if (cfg.pretrain_round0) {
            std::vector<const PreparedGraph*> ptrs;
            for (const auto& pg : store) ptrs.push_back(&pg);
            pretrain(reader, ptrs, cfg.pretrain);
        }
        finetune(reader, samples, {}, *emb, cfg.finetune);
        RoundRecord r0;
        r0.round = 0;
        r0.writer = writer.params();
        FrozenReader fr = frozen(reader);
        fill_eval(r0, evaluate_heldout(writer, heldout, fr, cfg.env, eval_seed));
        r0.utility_after_writer = r0.utility;
        r0.wall_seconds = seconds_since(t0);
        res.history.push_back(r0);
        res.writer = writer;
        res.reader = reader;
        if (on_round) on_round(r0, res);
    }

    std::size_t batch = std::min(cfg.eval_batch, train.size());
    std::vector<Sample> eval_batch(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(batch));
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        auto ts = std::chrono::steady_clock::now();
        RoundRecord rr;
        rr.round = t;
        // writer phase against the frozen reader
        FrozenReader fr = frozen(reader);
        const std::uint64_t round_seed = nn::derive_seed(cfg.seed, 1000 + t);
        ReturnEvaluator eval = [&](const MockWriterParams& p) {
            MockWriter w(p);
            MeanAccumulator acc;
            for (std::size_t i = 0; i < eval_batch.size(); ++i) {
                auto g = rollout_group(w, eval_batch[i], fr, cfg.env, cfg.group_size, nn::derive_seed(round_seed, i));
                auto kept = filter_rollouts(g, cfg.filter_percentile);
                for (double r : kept.returns) acc.add(r);
            }
            return acc.mean();
        };
        double current = eval(writer.params());
        rr.writer_return_before = current;
        for (std::size_t u = 0; u < cfg.updates_per_round; ++u) {
            std::size_t coord = ((t - 1) * cfg.updates_per_round + u) % MockWriterParams::kCount;
            auto rec = update_mock_policy(writer, eval, cfg.step, coord, current);
            current = rec.after;
            rr.updates.push_back(rec);
        }
        rr.writer_return_after = current;
        rr.writer = writer.params();
        rr.utility_after_writer = evaluate_heldout(writer, heldout, fr, cfg.env, eval_seed).utility;

        // reader phase on regenerated graphs
        auto graphs = write_graphs(writer, train, cfg.env, graph_seed);
        std::deque<PreparedGraph> store;
        auto samples = reader_samples(train, graphs, *emb, reader.summary_norm(), store);
        FinetuneConfig fc = cfg.finetune;
        fc.seed = nn::derive_seed(cfg.finetune.seed, t);
        finetune(reader, samples, {}, *emb, fc);
        FrozenReader fr2 = frozen(reader);
        fill_eval(rr, evaluate_heldout(writer, heldout, fr2, cfg.env, eval_seed));
        rr.delta_W = rr.utility_after_writer - res.history.back().utility;
        rr.delta_R = rr.utility - rr.utility_after_writer;
        rr.wall_seconds = seconds_since(ts);
        res.history.push_back(rr);
        res.writer = writer;
        res.reader = reader;
        if (on_round) on_round(rr, res);
    }
    return res;
}

}  // namespace sage

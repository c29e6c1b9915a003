// sage: command-line front end. Every command reads its inputs from files,
// resolves a RunConfig (defaults < --config < flags < --set) and writes a JSON
// report embedding that config and the content hashes of its inputs.

#include <deque>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sage/diagnostics.hpp"
#include "sage/io.hpp"
#include "sage/metrics.hpp"
#include "sage/pipeline.hpp"
#include "sage/query_planner.hpp"
#include "sage/run_config.hpp"
#include "sage/synth.hpp"

using nlohmann::json;
using namespace sage;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitIo = 2;

struct Mirror {
    std::string key;
    bool is_string;
    std::string value;
    CLI::Option* opt = nullptr;
};

// Flags that mirror RunConfig keys, plus --config and --set.
struct Options {
    std::string config_path;
    std::vector<std::string> sets;
    std::deque<Mirror> mirrors;

    void mirror(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help,
                bool is_string = false) {
        mirrors.push_back({key, is_string, "", nullptr});
        mirrors.back().opt = app->add_option(flag, mirrors.back().value, help + " [" + key + "]");
    }

    RunConfig resolve() const {
        json overlay = json::object();
        if (!config_path.empty()) overlay = io::read_json(config_path);
        for (const auto& m : mirrors) {
            if (m.opt->count() == 0) continue;
            if (m.is_string) {
                json* cur = &overlay;
                std::size_t start = 0;
                while (true) {
                    auto dot = m.key.find('.', start);
                    std::string part = m.key.substr(start, dot == std::string::npos ? dot : dot - start);
                    if (!cur->is_object()) *cur = json::object();
                    if (dot == std::string::npos) {
                        (*cur)[part] = m.value;
                        break;
                    }
                    cur = &(*cur)[part];
                    start = dot + 1;
                }
            } else {
                apply_assignment(overlay, m.key + "=" + m.value);
            }
        }
        for (const auto& s : sets) apply_assignment(overlay, s);
        return run_config_from_json(overlay);
    }
};

void add_common(CLI::App* app, Options& o) {
    app->add_option("-c,--config", o.config_path, "JSON config overlay");
    app->add_option("--set", o.sets, "key.path=value override (repeatable)");
    o.mirror(app, "--seed", "seed", "run seed");
    o.mirror(app, "-o,--out", "paths.out", "output path", true);
    o.mirror(app, "--report", "paths.report", "report path (stdout when empty)", true);
}

std::string require(const std::string& path, const char* what) {
    if (path.empty()) throw std::invalid_argument(std::string("missing required path: ") + what);
    return path;
}

struct Report {
    json j;
    Report(const char* command, const RunConfig& cfg) {
        j = {{"command", command}, {"config", run_config_to_json(cfg)}, {"inputs", json::object()}};
    }
    void input(const std::string& path) {
        if (!path.empty()) j["inputs"][path] = io::file_hash(path);
    }
};

void emit(const Report& r, const RunConfig& cfg) {
    if (cfg.paths.report.empty()) {
        std::cout << r.j.dump(2) << "\n";
    } else {
        io::write_json(cfg.paths.report, r.j);
    }
}

void ensure_parent(const std::string& path) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

// Architecture comes from the checkpoint; scoring switches from the config.
ReaderParams load_reader(const RunConfig& cfg, Report& rep) {
    if (cfg.paths.reader.empty()) return init_reader_params(cfg.reader);
    rep.input(cfg.paths.reader);
    ReaderParams p = reader_from_json(io::read_json(cfg.paths.reader));
    p.cfg.doc_mode = cfg.reader.doc_mode;
    p.cfg.K_e = cfg.reader.K_e;
    p.cfg.C_e = cfg.reader.C_e;
    p.cfg.init_entities_weight = cfg.reader.init_entities_weight;
    return p;
}

bool norm_fitted(const ReaderParams& p) { return p.summary_fitted.value[0] != 0.0; }

std::vector<Sample> load_samples(const std::string& path, Report& rep, const char* what) {
    rep.input(require(path, what));
    return io::read_samples(path);
}

MockWriterParams load_writer(const RunConfig& cfg, Report& rep) {
    if (cfg.paths.writer.empty()) return cfg.writer;
    rep.input(cfg.paths.writer);
    return MockWriterParams::from_json(io::read_json(cfg.paths.writer));
}

std::unique_ptr<MockLLMClient> load_transcript(const RunConfig& cfg, Report& rep) {
    if (cfg.paths.transcript.empty()) return nullptr;
    rep.input(cfg.paths.transcript);
    return std::make_unique<MockLLMClient>(io::read_json(cfg.paths.transcript));
}

// ---- commands --------------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
    Report rep("synth", cfg);
    auto corpus = generate_synthetic(cfg.synth);
    std::filesystem::path dir = require(cfg.paths.out, "--out directory");
    std::filesystem::create_directories(dir);
    io::write_corpus((dir / "corpus.jsonl").string(), corpus.docs);
    io::write_triples((dir / "triples.jsonl").string(), corpus.triples);
    io::write_samples((dir / "train.jsonl").string(), corpus.train);
    io::write_samples((dir / "heldout.jsonl").string(), corpus.heldout);
    rep.j["result"] = {{"documents", corpus.docs.size()},
                       {"triples", corpus.triples.size()},
                       {"train", corpus.train.size()},
                       {"heldout", corpus.heldout.size()},
                       {"files",
                        {{"corpus", io::file_hash((dir / "corpus.jsonl").string())},
                         {"triples", io::file_hash((dir / "triples.jsonl").string())},
                         {"train", io::file_hash((dir / "train.jsonl").string())},
                         {"heldout", io::file_hash((dir / "heldout.jsonl").string())}}}};
    emit(rep, cfg);
    return 0;
}

int cmd_build(const RunConfig& cfg) {
    Report rep("build", cfg);
    rep.input(require(cfg.paths.corpus, "--corpus"));
    auto docs = io::read_corpus(cfg.paths.corpus);
    std::vector<Triple> triples;
    if (!cfg.paths.triples.empty()) {
        rep.input(cfg.paths.triples);
        triples = io::read_triples(cfg.paths.triples);
    }
    IngestStats stats;
    GraphMemory g = ingest_triples(triples, docs, cfg.env.mode, &stats);
    std::string out = require(cfg.paths.out, "--out graph file");
    ensure_parent(out);
    io::write_json(out, graph_to_json(g));
    rep.j["result"] = graph_stats(g);
    rep.j["result"]["ingest"] = {
        {"accepted", stats.accepted}, {"dropped", stats.dropped}, {"low_confidence", stats.low_confidence}};
    rep.j["result"]["checkpoint_hash"] = io::file_hash(out);
    emit(rep, cfg);
    return 0;
}

int cmd_plan(const RunConfig& cfg, const std::string& question) {
    Report rep("plan", cfg);
    if (question.empty()) throw std::invalid_argument("missing --question");
    std::optional<GraphMemory> g;
    if (!cfg.paths.graph.empty()) {
        rep.input(cfg.paths.graph);
        g = graph_from_json(io::read_json(cfg.paths.graph));
    }
    auto client = load_transcript(cfg, rep);
    json result;
    if (client) {
        auto out = plan_llm(question, *client, kDefaultPseudoQueries, 3, g ? &*g : nullptr);
        result = {{"plan", plan_to_json(out.plan)},
                  {"used_fallback", out.used_fallback},
                  {"attempts", out.attempts},
                  {"warnings", out.warnings}};
    } else {
        result = {{"plan", plan_to_json(plan_deterministic(question, g ? &*g : nullptr))}, {"used_fallback", true}};
    }
    rep.j["question"] = question;
    rep.j["result"] = result;
    emit(rep, cfg);
    return 0;
}

int cmd_retrieve(const RunConfig& cfg, const std::string& query) {
    Report rep("retrieve", cfg);
    if (query.empty()) throw std::invalid_argument("missing --query");
    rep.input(require(cfg.paths.graph, "--graph"));
    GraphMemory g = graph_from_json(io::read_json(cfg.paths.graph));
    ReaderParams params = load_reader(cfg, rep);
    if (!norm_fitted(params)) params.set_summary_norm(fit_norm({g}));
    HashedNgramEmbedder emb(params.cfg.emb_dim);
    PreparedGraph pg = prepare_graph(g, emb, params.summary_norm());
    auto client = load_transcript(cfg, rep);
    RetrievalOptions opt = cfg.retrieval_options();
    opt.mode = params.cfg.doc_mode;
    auto r = retrieve(query, pg, client.get(), emb, params, opt);
    rep.j["result"] = retrieval_report(query, pg, r);
    emit(rep, cfg);
    return 0;
}

struct Prepared {
    std::vector<GraphMemory> graphs;
    std::deque<PreparedGraph> store;
    std::vector<FinetuneSample> samples;
};

int cmd_train(const RunConfig& cfg, const std::string& stage) {
    Report rep("train", cfg);
    rep.j["stage"] = stage;
    auto train = load_samples(cfg.paths.samples, rep, "--samples");
    std::vector<Sample> held;
    if (!cfg.paths.heldout.empty()) held = load_samples(cfg.paths.heldout, rep, "--heldout");
    ReaderParams params = load_reader(cfg, rep);
    HashedNgramEmbedder emb(params.cfg.emb_dim);
    std::string out = require(cfg.paths.out, "--out checkpoint");

    auto gt = sample_graphs(train, cfg);
    auto gh = sample_graphs(held, cfg);
    if (!norm_fitted(params)) params.set_summary_norm(fit_norm(gt));

    std::vector<json> log;
    json result;
    if (stage == "pretrain") {
        std::deque<PreparedGraph> store;
        std::vector<const PreparedGraph*> ptrs;
        for (const auto& g : gt) {
            if (g.num_entities() == 0) continue;
            store.push_back(prepare_graph(g, emb, params.summary_norm()));
            ptrs.push_back(&store.back());
        }
        auto r = pretrain(params, ptrs, cfg.pretrain);
        for (std::size_t i = 0; i < r.losses.size(); ++i) log.push_back({{"step", i}, {"loss", r.losses[i]}});
        result = {{"steps", r.losses.size()}, {"diverged", r.diverged}};
    } else if (stage == "finetune") {
        std::deque<PreparedGraph> store;
        auto tr = reader_samples(train, gt, emb, params.summary_norm(), store);
        auto he = reader_samples(held, gh, emb, params.summary_norm(), store);
        FinetuneConfig fc = cfg.finetune;
        auto r = finetune(params, tr, he, emb, fc, [&](const json& row) { log.push_back(row); });
        result = {{"epochs_run", r.epoch_losses.size()},
                  {"best_epoch", r.best_epoch},
                  {"diverged", r.diverged},
                  {"early_stopped", r.early_stopped},
                  {"heldout_recall", r.heldout_recall}};
        if (!r.epoch_losses.empty()) result["final_loss"] = r.epoch_losses.back().to_json();
        if (!he.empty()) result["heldout_recall_final"] = heldout_recall(params, he, emb, cfg.k);
    } else {
        throw std::invalid_argument("train stage must be 'pretrain' or 'finetune'");
    }
    ensure_parent(out);
    io::write_json(out, reader_to_json(params));
    io::write_jsonl(out + ".metrics.jsonl", log);
    rep.j["result"] = result;
    rep.j["result"]["checkpoint_hash"] = io::file_hash(out);
    emit(rep, cfg);
    return 0;
}

FrozenReader frozen_reader(const RunConfig& cfg, Report& rep, const std::vector<Sample>& fit_on) {
    ReaderParams params = load_reader(cfg, rep);
    if (!norm_fitted(params)) params.set_summary_norm(fit_norm(sample_graphs(fit_on, cfg)));
    auto emb = std::make_shared<HashedNgramEmbedder>(params.cfg.emb_dim);
    RetrievalOptions opt = retrieval_options_from(params.cfg, std::max<std::size_t>(cfg.evolve.reward_k, 1));
    opt.seed_budget = cfg.seed_budget;
    opt.use_pseudo_queries = cfg.use_pseudo_queries;
    return FrozenReader{std::move(params), emb, opt, nullptr};
}

int cmd_rollout(const RunConfig& cfg) {
    Report rep("rollout", cfg);
    auto samples = load_samples(cfg.paths.samples, rep, "--samples");
    MockWriter writer(load_writer(cfg, rep));
    FrozenReader reader = frozen_reader(cfg, rep, samples);
    json trajs = json::array();
    MeanAccumulator mean_R;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto t = run_episode(writer, samples[i], reader, cfg.env, nn::derive_seed(cfg.seed, i));
        json turns = json::array();
        for (const auto& tr : t.turns) {
            turns.push_back({{"state", tr.state_digest},
                             {"kind", tr.action_kind},
                             {"action", tr.action_text},
                             {"reward", tr.reward}});
        }
        trajs.push_back({{"sample", samples[i].id},
                         {"seed", t.seed},
                         {"turns", turns},
                         {"rewards", t.breakdown.to_json()},
                         {"R", t.R},
                         {"graph_hash", graph_content_hash(t.graph)}});
        mean_R.add(t.R);
    }
    rep.j["result"] = {{"mean_R", mean_R.mean()}, {"trajectories", trajs}};
    if (!cfg.paths.out.empty()) {
        ensure_parent(cfg.paths.out);
        io::write_json(cfg.paths.out, rep.j["result"]);
    }
    emit(rep, cfg);
    return 0;
}

int cmd_evolve(const RunConfig& cfg) {
    Report rep("evolve", cfg);
    auto train = load_samples(cfg.paths.samples, rep, "--samples");
    auto held = load_samples(cfg.paths.heldout, rep, "--heldout");
    ReaderParams params = load_reader(cfg, rep);
    MockWriter writer(load_writer(cfg, rep));
    auto emb = std::make_shared<HashedNgramEmbedder>(params.cfg.emb_dim);
    std::filesystem::path dir = require(cfg.paths.out, "--out directory");
    std::filesystem::create_directories(dir);
    json resolved = rep.j;
    // Artifacts are written as each round completes, so an aborted run keeps
    // every finished round.
    auto sink = [&](const RoundRecord& r, const EvolutionResult& state) {
        std::string tag = "round" + std::to_string(r.round);
        io::write_json((dir / (tag + ".json")).string(), r.to_json());
        io::write_json((dir / ("reader_" + tag + ".json")).string(), reader_to_json(state.reader));
        io::write_json((dir / ("writer_" + tag + ".json")).string(), state.writer.params().to_json());
    };
    auto res = evolve(train, held, writer, std::move(params), emb, cfg.evolve_config(), sink);
    io::write_json((dir / "reader.json").string(), reader_to_json(res.reader));
    io::write_json((dir / "writer.json").string(), res.writer.params().to_json());
    rep.j["result"] = res.report();
    io::write_json((dir / "report.json").string(), rep.j);
    emit(rep, cfg);
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::vector<std::size_t>& ks) {
    Report rep("eval", cfg);
    auto samples = load_samples(cfg.paths.samples, rep, "--samples");
    if (samples.empty()) throw std::invalid_argument("eval: empty sample set");
    ReaderParams params = load_reader(cfg, rep);
    HashedNgramEmbedder emb(params.cfg.emb_dim);
    std::vector<GraphMemory> graphs;
    if (!cfg.paths.graph.empty()) {
        rep.input(cfg.paths.graph);
        graphs.push_back(graph_from_json(io::read_json(cfg.paths.graph)));
    } else {
        graphs = sample_graphs(samples, cfg);
    }
    if (!norm_fitted(params)) params.set_summary_norm(fit_norm(graphs));
    std::vector<const GraphMemory*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    RetrievalOptions opt = cfg.retrieval_options();
    opt.mode = params.cfg.doc_mode;
    auto m = evaluate_reader(samples, ptrs, params, emb, ks, opt);
    rep.j["result"] = m.to_json();
    emit(rep, cfg);
    return 0;
}

int cmd_diagnose(const RunConfig& cfg, const std::string& suite) {
    Report rep("diagnose", cfg);
    const auto& d = cfg.diagnostics;
    std::vector<diag::CheckReport> reports;
    if (suite == "all") {
        reports = diag::run_suite(d);
    } else if (suite == "stability") {
        reports = diag::check_stability_suite(d.trials, d.seed, d.stability);
    } else if (suite == "topk") {
        reports.push_back(diag::check_topk_boundary({5, 4, 1, 0.5}, 0.2, 2, d.trials, d.seed, d.topk_perturb_scale));
        reports.push_back(diag::check_topk_boundary_random(d.trials, d.seed, d.topk_perturb_scale));
    } else if (suite == "cone") {
        reports.push_back(diag::check_influence_cone_random(d.trials, d.seed, d.cone_layers, d.cone_rz));
    } else if (suite == "snr") {
        reports.push_back(diag::snr_recurrence_random(d.trials, d.seed, d.snr_nodes, d.snr_layers));
    } else if (suite == "budget") {
        reports.push_back(diag::budget_bound_random(d.trials, d.seed));
    } else {
        throw std::invalid_argument("unknown suite '" + suite + "' (all|stability|topk|cone|snr|budget)");
    }
    rep.j["suite"] = suite;
    rep.j["result"] = diag::suite_report(reports);
    emit(rep, cfg);
    if (!rep.j["result"].at("passed").get<bool>()) {
        for (const auto& r : reports)
            if (!r.passed()) std::cerr << "FAIL " << r.name << ": " << r.counterexample.dump() << "\n";
        return kExitFailure;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph memory construction, retrieval, training and diagnostics"};
    app.require_subcommand(1);

    Options o_synth, o_build, o_plan, o_retr, o_train, o_roll, o_evo, o_eval, o_diag;

    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-hop corpus");
    add_common(synth, o_synth);
    o_synth.mirror(synth, "--entities", "synth.num_entities", "entity pool size");
    o_synth.mirror(synth, "--docs", "synth.num_docs", "document count");
    o_synth.mirror(synth, "--hops", "synth.hops", "hops per question");
    o_synth.mirror(synth, "--distractor-ratio", "synth.distractor_ratio", "distractors per gold document");
    o_synth.mirror(synth, "--synth-seed", "synth.seed", "generator seed");

    auto* build = app.add_subcommand("build", "ingest triples into a graph checkpoint");
    add_common(build, o_build);
    o_build.mirror(build, "--corpus", "paths.corpus", "corpus JSONL", true);
    o_build.mirror(build, "--triples", "paths.triples", "triples JSONL", true);
    o_build.mirror(build, "--mode", "env.mode", "iterative|single", true);

    std::string question;
    auto* plan = app.add_subcommand("plan", "plan a question");
    add_common(plan, o_plan);
    plan->add_option("-q,--question", question, "question text");
    o_plan.mirror(plan, "--graph", "paths.graph", "graph checkpoint", true);
    o_plan.mirror(plan, "--transcript", "paths.transcript", "LLM transcript for replay", true);

    std::string query;
    auto* retr = app.add_subcommand("retrieve", "retrieve documents for a query");
    add_common(retr, o_retr);
    retr->add_option("-q,--query", query, "query text");
    o_retr.mirror(retr, "--graph", "paths.graph", "graph checkpoint", true);
    o_retr.mirror(retr, "--reader", "paths.reader", "reader checkpoint", true);
    o_retr.mirror(retr, "--transcript", "paths.transcript", "LLM transcript for replay", true);
    o_retr.mirror(retr, "-k,--k", "retrieval.k", "documents returned");
    o_retr.mirror(retr, "--mode", "reader.doc_mode", "raw|topk|idf|idf_topk", true);
    o_retr.mirror(retr, "--K_e", "reader.K_e", "entities kept in top-k modes");

    std::string stage;
    auto* train = app.add_subcommand("train", "pretrain or fine-tune the reader");
    add_common(train, o_train);
    train->add_option("stage", stage, "pretrain|finetune")->required();
    o_train.mirror(train, "--samples", "paths.samples", "training samples JSONL", true);
    o_train.mirror(train, "--heldout", "paths.heldout", "held-out samples JSONL", true);
    o_train.mirror(train, "--reader", "paths.reader", "initial reader checkpoint", true);
    o_train.mirror(train, "--graphs", "graphs", "oracle|writer", true);
    o_train.mirror(train, "--epochs", "finetune.epochs", "fine-tune epochs");
    o_train.mirror(train, "--steps", "pretrain.steps", "pretraining steps");

    auto* roll = app.add_subcommand("rollout", "run writer episodes against a frozen reader");
    add_common(roll, o_roll);
    o_roll.mirror(roll, "--samples", "paths.samples", "samples JSONL", true);
    o_roll.mirror(roll, "--reader", "paths.reader", "reader checkpoint", true);
    o_roll.mirror(roll, "--writer", "paths.writer", "writer parameters JSON", true);

    auto* evo = app.add_subcommand("evolve", "alternate writer and reader updates");
    add_common(evo, o_evo);
    o_evo.mirror(evo, "--samples", "paths.samples", "training samples JSONL", true);
    o_evo.mirror(evo, "--heldout", "paths.heldout", "held-out samples JSONL", true);
    o_evo.mirror(evo, "--reader", "paths.reader", "initial reader checkpoint", true);
    o_evo.mirror(evo, "--writer", "paths.writer", "initial writer parameters JSON", true);
    o_evo.mirror(evo, "--rounds", "evolve.rounds", "evolution rounds");

    std::vector<std::size_t> ks{2, 5};
    auto* eval = app.add_subcommand("eval", "retrieval and answer metrics");
    add_common(eval, o_eval);
    o_eval.mirror(eval, "--samples", "paths.samples", "samples JSONL", true);
    o_eval.mirror(eval, "--reader", "paths.reader", "reader checkpoint", true);
    o_eval.mirror(eval, "--graph", "paths.graph", "shared graph checkpoint", true);
    o_eval.mirror(eval, "--graphs", "graphs", "per-sample graphs: oracle|writer", true);
    o_eval.mirror(eval, "--mode", "reader.doc_mode", "raw|topk|idf|idf_topk", true);
    eval->add_option("--ks", ks, "recall depths")->delimiter(',');

    std::string suite = "all";
    auto* diagnose = app.add_subcommand("diagnose", "run the stability and propagation checks");
    add_common(diagnose, o_diag);
    diagnose->add_option("--suite", suite, "all|stability|topk|cone|snr|budget");
    o_diag.mirror(diagnose, "--trials", "diagnostics.trials", "trials per check");
    o_diag.mirror(diagnose, "--perturb-scale", "diagnostics.topk_perturb_scale",
                  "top-k perturbation scale (> 1 injects violations)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitIo;
    }

    try {
        if (*synth) return cmd_synth(o_synth.resolve());
        if (*build) return cmd_build(o_build.resolve());
        if (*plan) return cmd_plan(o_plan.resolve(), question);
        if (*retr) return cmd_retrieve(o_retr.resolve(), query);
        if (*train) return cmd_train(o_train.resolve(), stage);
        if (*roll) return cmd_rollout(o_roll.resolve());
        if (*evo) return cmd_evolve(o_evo.resolve());
        if (*eval) return cmd_eval(o_eval.resolve(), ks);
        if (*diagnose) return cmd_diagnose(o_diag.resolve(), suite);
    } catch (const io::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitIo;
}

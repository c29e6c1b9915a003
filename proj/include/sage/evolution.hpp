#pragma once
// Alternating writer/reader improvement: rollout groups with group-relative
// advantages, derivative-free writer updates, and reader fine-tuning on the
// regenerated graphs.

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/mock_writer.hpp"
#include "sage/training.hpp"
#include "sage/writer_env.hpp"

namespace sage {

struct TurnRecord {
    std::string state_digest;
    std::string action_kind;
    std::string action_text;
    double reward = 0.0;
};

struct Trajectory {
    std::uint64_t seed = 0;
    std::vector<TurnRecord> turns;
    GraphMemory graph;
    RewardBreakdown breakdown;
    double R = 0.0;
};

struct EnvConfig {
    WriteMode mode = WriteMode::Iterative;
    std::size_t turn_cap = 12;
    RewardConfig reward;
};

// Runs one episode to STOP.
Trajectory run_episode(const WriterPolicy& policy, const Sample& sample, FrozenReader& reader, const EnvConfig& env,
                       std::uint64_t seed);

struct RolloutGroup {
    std::vector<Trajectory> trajectories;
    std::vector<double> returns;
    std::vector<double> advantages;
};

// G episodes with seeds derived from seed.
RolloutGroup rollout_group(const WriterPolicy& policy, const Sample& sample, FrozenReader& reader, const EnvConfig& env,
                           std::size_t G, std::uint64_t seed);

// (R_i - mean) / (std + 1e-8), population std.
std::vector<double> group_advantages(const std::vector<double>& returns);

// Keeps R >= the percentile cutoff (linear interpolation); always keeps the argmax.
RolloutGroup filter_rollouts(const RolloutGroup& g, double percentile);
double percentile_cutoff(std::vector<double> values, double percentile);

using ReturnEvaluator = std::function<double(const MockWriterParams&)>;

struct UpdateRecord {
    std::size_t coordinate = 0;
    double before = 0.0;
    double after = 0.0;
    double direction = 0.0;  // +1, -1 or 0 when rejected
    bool accepted = false;
};

// Tries params[coord] += step * scale and -= step * scale; keeps the better
// one only when it strictly beats the current value.
UpdateRecord update_mock_policy(MockWriter& writer, const ReturnEvaluator& eval, double step, std::size_t coordinate,
                                double current);

struct EvolveConfig {
    std::size_t rounds = 2;
    std::size_t group_size = 4;
    double filter_percentile = 0.0;
    std::size_t eval_batch = 80;
    std::size_t updates_per_round = 5;
    double step = 1.0;
    std::size_t reward_k = 2;  // depth of P_k in the writer rewards
    EnvConfig env;
    bool pretrain_round0 = true;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    std::uint64_t seed = 17;
};

nlohmann::json evolve_config_to_json(const EvolveConfig& c);

struct RoundRecord {
    std::size_t round = 0;
    double writer_return_before = 0.0;
    double writer_return_after = 0.0;
    std::vector<UpdateRecord> updates;
    double r_rec = 0, r_pre = 0, r_ded = 0, rho_rep = 0;  // held-out means
    double recall_at_2 = 0, recall_at_5 = 0;
    double utility_after_writer = 0.0;  // held-out mean r_task, old reader
    double utility = 0.0;               // held-out mean r_task after the reader phase
    double delta_W = 0.0, delta_R = 0.0;
    MockWriterParams writer;
    double wall_seconds = 0.0;

    nlohmann::json to_json() const;
};

struct EvolutionResult {
    std::vector<RoundRecord> history;  // round 0 is the starting point
    MockWriter writer;
    ReaderParams reader;
    nlohmann::json report() const;
};

// Construction phase only; the returned state is in RAG or STOP.
WriterState construct(const WriterPolicy& policy, const Sample& sample, const EnvConfig& env, std::uint64_t seed,
                      std::vector<TurnRecord>* turns = nullptr);

// Graphs written by the policy for each sample (one episode each).
std::vector<GraphMemory> write_graphs(const WriterPolicy& policy, const std::vector<Sample>& samples,
                                      const EnvConfig& env, std::uint64_t seed);

// Reader supervision on writer graphs; PreparedGraphs are owned by `store`.
std::vector<FinetuneSample> reader_samples(const std::vector<Sample>& samples, const std::vector<GraphMemory>& graphs,
                                           const TextEmbedder& emb, const SummaryNorm& norm,
                                           std::deque<PreparedGraph>& store);

struct HeldoutEval {
    double utility = 0, r_rec = 0, r_pre = 0, r_ded = 0, rho_rep = 0, recall_at_2 = 0, recall_at_5 = 0;
};

HeldoutEval evaluate_heldout(const WriterPolicy& policy, const std::vector<Sample>& heldout, FrozenReader& reader,
                             const EnvConfig& env, std::uint64_t seed);

using RoundSink = std::function<void(const RoundRecord&, const EvolutionResult&)>;

EvolutionResult evolve(const std::vector<Sample>& train, const std::vector<Sample>& heldout, MockWriter writer,
                       ReaderParams reader, std::shared_ptr<const TextEmbedder> emb, const EvolveConfig& cfg,
                       const RoundSink& on_round = {});

}  // namespace sage

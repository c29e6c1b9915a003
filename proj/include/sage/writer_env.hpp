#pragma once
// Graph-construction MDP: state, action parsing, transitions, rewards against
// a frozen reader, and trajectory return.

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sage/embedder.hpp"
#include "sage/graph_store.hpp"
#include "sage/reader.hpp"

namespace sage {

// One question with its private document pool.
struct Sample {
    std::string id;
    std::string question;
    std::string answer;
    std::vector<std::string> aliases;
    std::vector<Document> docs;
    std::vector<std::string> support_doc_ids;
    std::vector<std::string> support_entities;
    std::vector<Triple> oracle_triples;  // optional gold triples

    std::vector<std::string> answers() const;  // answer plus aliases
};

enum class Flag { Construct, Rag, Stop };
std::string to_string(Flag f);

struct WriterState {
    std::string query;
    WriteMode mode = WriteMode::Iterative;
    GraphMemory graph;
    std::vector<std::string> processed;
    std::vector<std::string> remaining;
    Flag flag = Flag::Construct;
    std::size_t turn = 0;
    std::size_t turn_cap = 12;
    bool zero_reward = false;          // illegal action seen
    std::vector<double> format_rewards;  // one entry per legal turn
    std::optional<nlohmann::json> terminal_fields;

    std::string digest() const;
    bool operator==(const WriterState& o) const;
};

struct TriplesAction {
    std::vector<Triple> triples;
};
struct TerminateAction {
    std::optional<std::string> answer;
    nlohmann::json fields = nlohmann::json::object();
};
struct IllegalAction {
    std::string raw;
};
using Action = std::variant<TriplesAction, TerminateAction, IllegalAction>;

std::string action_kind(const Action& a);

// Lenient parse; arrays of triple objects are cleaned entry by entry.
Action parse_action(std::string_view raw);

WriterState reset(const Sample& sample, WriteMode mode, std::size_t turn_cap = 12);

struct StepResult {
    double reward = 0.0;  // per-turn format reward
    bool done = false;    // flag left CONSTRUCT
};

// Throws std::logic_error unless the state is in CONSTRUCT.
StepResult step(WriterState& s, const Action& a);

// Frozen reader used as the retrieval environment.
struct FrozenReader {
    ReaderParams params;
    std::shared_ptr<const TextEmbedder> emb;
    RetrievalOptions options;
    LLMClient* planner = nullptr;
};

struct Evidence {
    std::vector<std::string> doc_ids;  // P_k in rank order
    std::vector<double> scores;
    bool empty_graph = false;
};

Evidence evaluate_graph(const GraphMemory& g, std::string_view question, FrozenReader& reader);

class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    // nullopt on failure
    virtual std::optional<bool> judge(std::string_view q, const std::vector<std::string>& answers,
                                      const std::vector<std::string>& evidence) = 0;
};

class AnswererClient {
public:
    virtual ~AnswererClient() = default;
    virtual std::optional<std::string> answer(std::string_view q, const std::vector<std::string>& answers,
                                              const std::vector<std::string>& evidence) = 0;
};

// Yes iff some normalised answer alias occurs contiguously in the evidence.
class DeterministicJudge : public JudgeClient {
public:
    std::optional<bool> judge(std::string_view q, const std::vector<std::string>& answers,
                              const std::vector<std::string>& evidence) override;
};

// Longest alias span present in the evidence, else the sentence with the
// highest token overlap with the question.
class DeterministicAnswerer : public AnswererClient {
public:
    std::optional<std::string> answer(std::string_view q, const std::vector<std::string>& answers,
                                      const std::vector<std::string>& evidence) override;
};

struct RewardConfig {
    double alpha = 1.0, beta = 1.0, gamma = 1.0;
    double lambda_rep = 0.1;
    double lambda_fmt = 0.01;
};

struct RewardBreakdown {
    double r_rec = 0, r_pre = 0, r_ded = 0, r_ans = 0;
    double r_task = 0;
    double rho_rep = 0;
    std::vector<double> format_rewards;
    double R = 0;
    bool zero_reward = false;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

double hybrid_task_reward(double r_rec, double r_pre, double r_ded, double alpha, double beta, double gamma);

RewardBreakdown compute_rewards(const std::vector<std::string>& P_k, const Sample& sample, JudgeClient& judge,
                                AnswererClient& answerer, const RewardConfig& cfg);

// R = r_task - lambda_rep * rho_rep(G) + lambda_fmt * sum r_fmt; fills
// rho_rep and R in b.
double trajectory_return(RewardBreakdown& b, const GraphMemory& g, double lambda_rep, double lambda_fmt);

// RAG stage: evaluates the graph, computes rewards, moves the state to STOP.
RewardBreakdown finish(WriterState& s, const Sample& sample, FrozenReader& reader, JudgeClient& judge,
                       AnswererClient& answerer, const RewardConfig& cfg);

}  // namespace sage

#pragma once
// Query planning: a two-stage extractor/inferer over a pluggable LLM client,
// plus a deterministic offline planner used as fallback.

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sage/graph_store.hpp"

namespace sage {

inline constexpr std::size_t kDefaultPseudoQueries = 3;

struct PseudoQuery {
    std::string text;
    double confidence = 1.0;
    std::string intent;
    bool operator==(const PseudoQuery&) const = default;
};

struct QueryPlan {
    std::vector<std::string> explicit_entities;
    std::map<std::string, std::vector<std::string>> aliases;
    std::vector<std::string> relation_clues;
    std::map<std::string, std::string> hard_constraints;
    std::string answer_type = "entity";
    std::vector<PseudoQuery> pseudo_queries;
    bool operator==(const QueryPlan&) const = default;
};

nlohmann::json plan_to_json(const QueryPlan& p);

// Schema enforcement. Requires "explicit_entities" and "answer_type"; accepts
// "candidate_aliases" for "aliases" and "constraints" for "hard_constraints".
// pseudo_queries may be objects {text, confidence, intent} or strings paired
// with a parallel "rewriter_confidence" array. Confidences are clamped to
// [0,1], empty strings dropped, lists deduplicated in first-seen order, and
// pseudo-queries capped at max_pseudo by descending confidence (stable).
// Throws std::invalid_argument naming a missing required key.
QueryPlan validate_plan(const nlohmann::json& raw, std::size_t max_pseudo = kDefaultPseudoQueries);

class LLMClient {
public:
    virtual ~LLMClient() = default;
    // nullopt models a timeout or transport failure.
    virtual std::optional<std::string> complete(const std::string& prompt) = 0;
};

// Replays a transcript {"version":1,"entries":[{"prompt_hash","response"}]}.
// Entries sharing a hash are consumed in order; unknown prompts time out.
class MockLLMClient final : public LLMClient {
public:
    explicit MockLLMClient(const nlohmann::json& transcript);
    std::optional<std::string> complete(const std::string& prompt) override;
    std::size_t calls() const { return calls_; }

private:
    std::map<std::string, std::vector<std::string>> responses_;
    std::map<std::string, std::size_t> cursor_;
    std::size_t calls_ = 0;
};

std::string prompt_hash(std::string_view prompt);
std::string render_extractor_prompt(std::string_view question);
std::string render_inferer_prompt(std::string_view question, const nlohmann::json& extraction,
                                  std::size_t max_pseudo);

struct PlanOutcome {
    QueryPlan plan;
    bool used_fallback = false;
    std::size_t attempts = 0;
    std::vector<std::string> warnings;
};

PlanOutcome plan_llm(std::string_view question, LLMClient& client, std::size_t max_pseudo,
                     std::size_t retries = 3, const GraphMemory* g = nullptr);

QueryPlan plan_deterministic(std::string_view question, const GraphMemory* g,
                             std::size_t max_pseudo = kDefaultPseudoQueries);

// Heuristic intent label for a pseudo-query.
std::string intent_label(std::string_view pseudo_query, const QueryPlan& plan);

}  // namespace sage

#pragma once
// Resolved configuration for command-line runs. JSON overlays are merged onto
// the defaults key by key; unknown keys and type mismatches are rejected.

#include <string>
#include <string_view>

#include <json.hpp>

#include "sage/diagnostics.hpp"
#include "sage/evolution.hpp"
#include "sage/synth.hpp"

namespace sage {

struct RunPaths {
    std::string corpus, samples, heldout, triples, graph, reader, writer, out, report, transcript;
};

struct RunConfig {
    std::uint64_t seed = 17;
    RunPaths paths;
    ReaderConfig reader = default_reader();
    std::size_t k = 5;                  // retrieval depth for retrieve/eval
    std::size_t seed_budget = 3;
    bool use_pseudo_queries = true;
    std::string graphs = "oracle";      // training graphs: oracle | writer
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    EnvConfig env;
    MockWriterParams writer;
    EvolveConfig evolve;  // env, pretrain and finetune are taken from the sections above
    SynthSpec synth;
    diag::SuiteConfig diagnostics;

    // Anchor-restricted, frequency-weighted document scores.
    static ReaderConfig default_reader() {
        ReaderConfig r;
        r.doc_mode = DocScoreMode::IdfTopK;
        r.K_e = 6;
        return r;
    }

    RetrievalOptions retrieval_options() const;
    EvolveConfig evolve_config() const;
};

nlohmann::json run_config_to_json(const RunConfig& c);
// Throws std::invalid_argument naming the offending key.
RunConfig run_config_from_json(const nlohmann::json& overlay);

// Recursive overlay with key and type checking against base.
nlohmann::json merge_checked(const nlohmann::json& base, const nlohmann::json& overlay, const std::string& where = "");

// Applies "a.b.c=value" to j; value is parsed as JSON, falling back to a string.
void apply_assignment(nlohmann::json& j, std::string_view assignment);

}  // namespace sage

#pragma once
// Parametric rule-based writer standing in for an LLM policy.

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/tensor.hpp"
#include "sage/writer_env.hpp"

namespace sage {

class WriterPolicy {
public:
    virtual ~WriterPolicy() = default;
    // Raw action text for the current state.
    virtual std::string propose(const WriterState& s, const Sample& sample, nn::Rng& rng) const = 0;
};

struct MockWriterParams {
    double threshold = 0.0;   // minimum extraction confidence
    double max_triples = 3;   // per turn, rounded
    double window = 2;        // co-occurrence sentence window, rounded
    double noise = 0.3;       // per-triple corruption probability
    double duplicate = 0.3;   // per-triple duplication probability

    static constexpr std::size_t kCount = 5;
    std::array<double, kCount> vec() const { return {threshold, max_triples, window, noise, duplicate}; }
    static MockWriterParams from_vec(const std::array<double, kCount>& v);
    static std::array<const char*, kCount> names();
    static std::array<std::pair<double, double>, kCount> ranges();
    static std::array<double, kCount> step_scales();
    void clamp();
    bool operator==(const MockWriterParams&) const = default;

    nlohmann::json to_json() const;
    static MockWriterParams from_json(const nlohmann::json& j);
};

struct Extraction {
    Triple triple;
    double confidence = 0.0;
};

// Candidate triples found in one text, highest confidence first.
std::vector<Extraction> extract_candidates(const std::string& text, std::size_t window);

class MockWriter : public WriterPolicy {
public:
    MockWriter() = default;
    explicit MockWriter(MockWriterParams p) : params_(p) { params_.clamp(); }

    std::string propose(const WriterState& s, const Sample& sample, nn::Rng& rng) const override;

    // Triples written for one text under the current parameters.
    std::vector<Triple> write(const std::string& text, nn::Rng& rng) const;

    const MockWriterParams& params() const { return params_; }
    void set_params(const MockWriterParams& p) {
        params_ = p;
        params_.clamp();
    }

private:
    MockWriterParams params_;
};

// Writes the gold triples of the current document(s) verbatim.
class OracleWriter : public WriterPolicy {
public:
    std::string propose(const WriterState& s, const Sample& sample, nn::Rng& rng) const override;
};

}  // namespace sage

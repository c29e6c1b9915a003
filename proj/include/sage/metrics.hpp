#pragma once
// Retrieval and answer metrics.

#include <cstddef>
#include <string>
#include <vector>

namespace sage {

// |top-k(ranked) ∩ gold| / |gold|; 0 for an empty gold set.
double recall_at_k(const std::vector<std::size_t>& ranked, const std::vector<std::size_t>& gold, std::size_t k);

// Best exact match / token F1 over the accepted answers.
double best_exact_match(const std::string& prediction, const std::vector<std::string>& answers);
double best_token_f1(const std::string& prediction, const std::vector<std::string>& answers);

struct MeanAccumulator {
    double sum = 0.0;
    std::size_t count = 0;
    void add(double v) {
        sum += v;
        ++count;
    }
    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

}  // namespace sage

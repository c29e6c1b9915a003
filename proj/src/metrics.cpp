#include "sage/metrics.hpp"

#include <algorithm>
#include <set>

#include "sage/text.hpp"

namespace sage {

double recall_at_k(const std::vector<std::size_t>& ranked, const std::vector<std::size_t>& gold, std::size_t k) {
    if (gold.empty()) return 0.0;
    std::set<std::size_t> g(gold.begin(), gold.end());
    std::size_t hit = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) hit += g.count(ranked[i]);
    return static_cast<double>(hit) / static_cast<double>(g.size());
}

double best_exact_match(const std::string& prediction, const std::vector<std::string>& answers) {
    double best = 0.0;
    for (const auto& a : answers) if (text::exact_match(prediction, a)) best = 1.0;
    return best;
}

double best_token_f1(const std::string& prediction, const std::vector<std::string>& answers) {
    double best = 0.0;
    for (const auto& a : answers) best = std::max(best, text::token_f1(prediction, a));
    return best;
}

}  // namespace sage

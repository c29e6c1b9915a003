#include "sage/embedder.hpp"

#include <cmath>
#include <stdexcept>

#include "sage/text.hpp"

namespace sage {

std::vector<double> HashedNgramEmbedder::embed(std::string_view s) const {
    std::vector<double> v(dim_, 0.0);
    auto toks = text::tokenize(s);
    for (const auto& t : toks) {
        v[text::fnv1a64("w:" + t) % dim_] += 1.0;
        std::string padded = "#" + t + "#";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
            v[text::fnv1a64("c:" + padded.substr(i, 3)) % dim_] += 1.0;
        }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
    }
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

}  // namespace sage

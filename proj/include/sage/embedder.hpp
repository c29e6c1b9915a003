#pragma once
// Text embedders. The default hashes character trigrams and word unigrams into
// a fixed-width count vector and L2-normalises it; any encoder with the same
// interface can replace it.

#include <cstddef>
#include <string_view>
#include <vector>

namespace sage {

class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<double> embed(std::string_view text) const = 0;
};

class HashedNgramEmbedder final : public TextEmbedder {
public:
    explicit HashedNgramEmbedder(std::size_t dim = 256) : dim_(dim) {}
    std::size_t dim() const override { return dim_; }
    std::vector<double> embed(std::string_view text) const override;

private:
    std::size_t dim_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sage

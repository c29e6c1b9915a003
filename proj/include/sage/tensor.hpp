#pragma once
// Dense float64 tensor used by the reader and its training losses.
//
// Rank 0 (scalar), rank 1 (vector) and rank 2 (row-major matrix) are the only
// shapes the kernels need. A rank-1 tensor behaves as a single row wherever a
// row-wise op is applied.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sage::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return values_.size(); }
    // Row view: rank 2 -> shape[0] rows; rank 0/1 -> one row.
    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const {
        if (shape_.empty()) return 1;
        return shape_.back();
    }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double item() const;

    std::span<double> data() { return values_; }
    std::span<const double> data() const { return values_; }
    std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const {
        return {values_.data() + r * cols(), cols()};
    }
    const std::vector<double>& values() const { return values_; }

    void fill(double v);
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

// Max |a - b| over entries; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

// Deterministic 64-bit generator with a portable uniform mapping; std
// distributions are implementation-defined, which breaks cross-build replay.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9E3779B97F4A7C15ULL) {}
    std::uint64_t next_u64();
    double uniform();                         // [0, 1)
    double uniform(double lo, double hi);     // [lo, hi)
    double normal();                          // Box-Muller
    std::size_t index(std::size_t n);         // [0, n)
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Mix a base seed with a stream id so sibling streams stay independent.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

enum class InitScheme { Zeros, Identity, UniformFanIn, Ones };

// zeros / identity / ones / U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = cols.
Tensor seeded_init(const Shape& shape, InitScheme scheme, std::uint64_t seed, double gain = 1.0);

}  // namespace sage::nn

#include "sage/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sage::nn {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {
    if (shape_.size() > 2) throw std::invalid_argument("tensor rank > 2 unsupported");
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_.size() > 2) throw std::invalid_argument("tensor rank > 2 unsupported");
    if (values_.size() != shape_numel(shape_)) {
        throw std::invalid_argument("tensor value count " + std::to_string(values_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
    }
    return values_[0];
}

void Tensor::fill(double v) {
    for (auto& x : values_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : values_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::uint64_t Rng::next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index on empty range");
    return static_cast<std::size_t>(next_u64() % n);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    Rng r(base ^ (stream * 0xD1B54A32D192ED03ULL + 0x632BE59BD9B4E019ULL));
    r.next_u64();
    return r.next_u64();
}

Tensor seeded_init(const Shape& shape, InitScheme scheme, std::uint64_t seed, double gain) {
    Tensor t(shape);
    switch (scheme) {
        case InitScheme::Zeros:
            break;
        case InitScheme::Ones:
            t.fill(1.0);
            break;
        case InitScheme::Identity: {
            if (shape.size() != 2 || shape[0] != shape[1]) {
                throw std::invalid_argument("identity init requires a square matrix, got " +
                                            shape_str(shape));
            }
            for (std::size_t i = 0; i < shape[0]; ++i) t.at(i, i) = 1.0;
            break;
        }
        case InitScheme::UniformFanIn: {
            Rng rng(seed);
            double fan_in = static_cast<double>(t.cols());
            double bound = gain / std::sqrt(fan_in);
            for (auto& x : t.data()) x = rng.uniform(-bound, bound);
            break;
        }
    }
    return t;
}

}  // namespace sage::nn

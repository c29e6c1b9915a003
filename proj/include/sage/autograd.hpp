#pragma once
// Tape-based reverse-mode differentiation over sage::nn::Tensor.
//
// Every op appends one node to the tape; backward walks the tape in reverse
// insertion order, which is a valid topological order by construction.
// Nodes that do not depend on any parameter or leaf carry no backward closure.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sage/tensor.hpp"

namespace sage::nn {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)), trainable(train) {}
    void zero_grad() { grad = Tensor::zeros_like(value); }
};

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor t);
    // Differentiable leaf; gradient is accumulated into p.grad on backward().
    Var param(Parameter& p);
    // Differentiable leaf owned by the tape; read its gradient with grad().
    Var leaf(Tensor t);

    Var push(Tensor value, bool requires_grad, BackwardFn fn);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    // Gradient of a node after backward(); zeros when nothing flowed into it.
    Tensor grad(Var v) const;
    // Mutable gradient buffer, allocated on first use.
    Tensor& grad_buffer(std::size_t id);
    bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

    // loss must hold exactly one finite value.
    void backward(Var loss);
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

// Elementwise, same shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul_const(Var a, const Tensor& c);
Var add_const_tensor(Var a, const Tensor& c);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
// a * s where s holds a single value.
Var mul_scalar(Var a, Var s);

// Row broadcasts: X is [n,d] (or [d]), v is [d].
Var add_row(Var x, Var v);
Var mul_row(Var x, Var v);
// [d] -> [n,d]
Var broadcast_rows(Var v, std::size_t n);

Var matmul(Var a, Var b);
// x @ w^T (+ b). x: [n,in] or [in]; w: [out,in]; b: [out].
Var linear(Var x, Var w);
Var linear(Var x, Var w, Var b);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
// a^p for a > 0.
Var pow_const(Var a, double p);
// max(x,0) + slope * min(x,0); slope holds one value.
Var prelu(Var x, Var slope);

// Row-wise layer normalisation, biased variance, stabiliser inside the sqrt.
Var layer_norm(Var x, double eps = 1e-5);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Row-wise (rank 1 is a single row).
Var softmax(Var x);
Var log_softmax(Var x);

// Row gather / scatter-add for rank 2; element gather / scatter for rank 1.
Var gather_rows(Var x, std::span<const std::size_t> index);
Var scatter_add_rows(Var m, std::span<const std::size_t> index, std::size_t n);

// [n,d] . [d] -> [n]
Var rowdot(Var x, Var z);
Var dot(Var a, Var b);

Var sum(Var a);
Var mean(Var a);
Var mean_rows(Var x);                 // [n,d] -> [d]
Var sum_rows(Var x);                  // [n,d] -> [d]
Var std_rows(Var x, double eps = 0);  // population std per column, [n,d] -> [d]

Var concat_cols(const std::vector<Var>& parts);
Var reshape(Var a, Shape shape);
// Row-wise L2 normalisation x / sqrt(|x|^2 + eps).
Var normalize_rows(Var x, double eps = 1e-12);

// Numerically stable BCE with logits against constant targets, elementwise.
Var bce_with_logits(Var logits, const Tensor& targets);

// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);

}  // namespace sage::nn

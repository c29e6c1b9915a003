#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "sage/autograd.hpp"
#include "sage/optim.hpp"

using namespace sage::nn;

namespace {

Tensor rand_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(s);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
    return t;
}

using OpFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces op output to a scalar with fixed random weights, then compares the
// tape gradient of each input with central differences.
void grad_check(const char* name, const OpFn& op, std::vector<Tensor> inputs, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    Tensor w;
    auto eval = [&](std::vector<Tensor>& in, std::vector<Tensor>* grads) {
        Tape tape;
        std::vector<Var> vars;
        for (auto& t : in) vars.push_back(tape.leaf(t));
        Var out = op(tape, vars);
        if (w.numel() == 0) w = rand_tensor(out.shape(), rng);
        Var loss = sum(mul_const(out, w));
        double v = loss.value().item();
        if (grads) {
            tape.backward(loss);
            for (auto& x : vars) grads->push_back(tape.grad(x));
        }
        return v;
    };
    std::vector<Tensor> analytic;
    eval(inputs, &analytic);
    const double h = 1e-6;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
            double x0 = inputs[k][i];
            inputs[k][i] = x0 + h;
            double fp = eval(inputs, nullptr);
            inputs[k][i] = x0 - h;
            double fm = eval(inputs, nullptr);
            inputs[k][i] = x0;
            double num = (fp - fm) / (2 * h);
            double a = analytic[k][i];
            double err = std::fabs(a - num);
            INFO(name << " input " << k << " coord " << i << " analytic " << a << " numeric " << num);
            CHECK((err <= 1e-7 || err / std::max(std::fabs(a), std::fabs(num)) < 1e-4));
        }
    }
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("forward ops") {
    Tape t;
    auto s = softmax(t.constant(Tensor::vector({2, 2, 2, 2})));
    for (std::size_t i = 0; i < 4; ++i) CHECK(s.value()[i] == doctest::Approx(0.25));
    auto ln = layer_norm(t.constant(Tensor::matrix(1, 3, {5, 5, 5})));
    for (double v : ln.value().values()) CHECK(v == 0.0);
    std::vector<std::size_t> dst = {0, 0, 0};
    auto sc = scatter_add_rows(t.constant(Tensor::matrix(3, 1, {1, 1, 1})), dst, 4);
    CHECK(sc.value().at(0, 0) == 3.0);
    CHECK(sc.value().at(1, 0) == 0.0);
    auto pr = prelu(t.constant(Tensor::vector({-2, 3})), t.constant(Tensor::scalar(0.25)));
    CHECK(pr.value()[0] == -0.5);
    CHECK(pr.value()[1] == 3.0);
    auto lin = linear(t.constant(Tensor::matrix(1, 2, {1, 2})), t.constant(Tensor::matrix(2, 2, {1, 0, 0, 3})),
                      t.constant(Tensor::vector({1, 1})));
    CHECK(lin.value().at(0, 0) == 2.0);
    CHECK(lin.value().at(0, 1) == 7.0);
}

TEST_CASE("shape mismatches are rejected") {
    Tape t;
    auto a = t.constant(Tensor(Shape{2, 3}));
    auto b = t.constant(Tensor(Shape{3, 2}));
    CHECK_THROWS(add(a, b));
    CHECK_THROWS(matmul(a, a));
    CHECK_THROWS(t.backward(a));  // not a scalar
}

TEST_CASE("softmax sums to one and is positive") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tape t;
        auto x = rand_tensor({3, 7}, rng, -30, 30);
        auto s = softmax(t.constant(x)).value();
        for (std::size_t r = 0; r < 3; ++r) {
            double tot = 0;
            for (std::size_t c = 0; c < 7; ++c) {
                CHECK(s.at(r, c) > 0.0);
                tot += s.at(r, c);
            }
            CHECK(std::fabs(tot - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("gradients of every op match central differences") {
    std::mt19937_64 rng(11);
    auto M = [&](std::size_t r, std::size_t c) { return rand_tensor({r, c}, rng); };
    auto V = [&](std::size_t n) { return rand_tensor({n}, rng); };
    auto P = [&](std::size_t r, std::size_t c) { return rand_tensor({r, c}, rng, 0.5, 2.0); };

    grad_check("add", [](Tape&, auto& v) { return add(v[0], v[1]); }, {M(2, 3), M(2, 3)});
    grad_check("sub", [](Tape&, auto& v) { return sub(v[0], v[1]); }, {M(2, 3), M(2, 3)});
    grad_check("mul", [](Tape&, auto& v) { return mul(v[0], v[1]); }, {M(2, 3), M(2, 3)});
    grad_check("scale", [](Tape&, auto& v) { return add_scalar(scale(v[0], -1.7), 0.3); }, {M(2, 3)});
    grad_check("mul_scalar", [](Tape&, auto& v) { return mul_scalar(v[0], v[1]); }, {M(2, 3), Tensor::scalar(0.7)});
    grad_check("add_row", [](Tape&, auto& v) { return add_row(v[0], v[1]); }, {M(3, 4), V(4)});
    grad_check("mul_row", [](Tape&, auto& v) { return mul_row(v[0], v[1]); }, {M(3, 4), V(4)});
    grad_check("broadcast", [](Tape&, auto& v) { return broadcast_rows(v[0], 3); }, {V(4)});
    grad_check("matmul", [](Tape&, auto& v) { return matmul(v[0], v[1]); }, {M(2, 3), M(3, 4)});
    grad_check("linear", [](Tape&, auto& v) { return linear(v[0], v[1], v[2]); }, {M(3, 4), M(2, 4), V(2)});
    grad_check("tanh", [](Tape&, auto& v) { return tanh(v[0]); }, {M(2, 3)});
    grad_check("sigmoid", [](Tape&, auto& v) { return sigmoid(v[0]); }, {M(2, 3)});
    grad_check("exp", [](Tape&, auto& v) { return exp(v[0]); }, {M(2, 3)});
    grad_check("log", [](Tape&, auto& v) { return log(v[0]); }, {P(2, 3)});
    grad_check("sqrt", [](Tape&, auto& v) { return sqrt(v[0]); }, {P(2, 3)});
    grad_check("square", [](Tape&, auto& v) { return square(v[0]); }, {M(2, 3)});
    grad_check("pow", [](Tape&, auto& v) { return pow_const(v[0], 0.5); }, {P(2, 3)});
    grad_check("prelu", [](Tape&, auto& v) { return prelu(v[0], v[1]); }, {M(3, 3), Tensor::scalar(0.25)});
    grad_check("layer_norm", [](Tape&, auto& v) { return layer_norm(v[0], v[1], v[2]); }, {M(3, 5), V(5), V(5)});
    grad_check("softmax", [](Tape&, auto& v) { return softmax(v[0]); }, {M(2, 5)});
    grad_check("log_softmax", [](Tape&, auto& v) { return log_softmax(v[0]); }, {V(6)});
    std::vector<std::size_t> idx = {2, 0, 2, 1};
    grad_check("gather", [&](Tape&, auto& v) { return gather_rows(v[0], idx); }, {M(3, 2)});
    grad_check("scatter", [&](Tape&, auto& v) { return scatter_add_rows(v[0], idx, 3); }, {M(4, 2)});
    grad_check("rowdot", [](Tape&, auto& v) { return rowdot(v[0], v[1]); }, {M(3, 4), V(4)});
    grad_check("dot", [](Tape&, auto& v) { return dot(v[0], v[1]); }, {V(4), V(4)});
    grad_check("mean", [](Tape&, auto& v) { return mean(v[0]); }, {M(3, 4)});
    grad_check("mean_rows", [](Tape&, auto& v) { return mean_rows(v[0]); }, {M(3, 4)});
    grad_check("sum_rows", [](Tape&, auto& v) { return sum_rows(v[0]); }, {M(3, 4)});
    grad_check("std_rows", [](Tape&, auto& v) { return std_rows(v[0], 1e-9); }, {M(4, 3)});
    grad_check("concat", [](Tape&, auto& v) { return concat_cols({v[0], v[1]}); }, {M(3, 2), M(3, 4)});
    grad_check("reshape", [](Tape&, auto& v) { return reshape(v[0], {6}); }, {M(2, 3)});
    grad_check("normalize", [](Tape&, auto& v) { return normalize_rows(v[0]); }, {M(3, 4)});
    Tensor y = Tensor::matrix(2, 3, {1, 0, 1, 0, 0, 1});
    grad_check("bce", [&](Tape&, auto& v) { return bce_with_logits(v[0], y); }, {M(2, 3)});
    // A two-layer tanh MLP.
    grad_check("mlp",
               [](Tape&, auto& v) { return linear(tanh(linear(v[0], v[1], v[2])), v[3], v[4]); },
               {M(4, 3), M(5, 3), V(5), M(2, 5), V(2)});
}

TEST_CASE("backward of a linear map") {
    Tape t;
    Parameter W("W", Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Tensor x = Tensor::vector({0.5, -1, 2});
    Var out = sum(linear(t.constant(x), t.param(W)));
    t.backward(out);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(W.grad.at(r, c) == x[c]);
}

TEST_CASE("finite difference oracle") {
    Tensor x = Tensor::vector({3.0});
    auto g = finite_difference_gradient([&] { return x[0] * x[0]; }, x);
    CHECK(std::fabs(g[0] - 6.0) < 1e-8);
    CHECK(x[0] == 3.0);

    // Rows of the softmax Jacobian sum to zero.
    std::mt19937_64 rng(5);
    Tensor z = rand_tensor({5}, rng, -2, 2);
    for (std::size_t i = 0; i < 5; ++i) {
        auto gi = finite_difference_gradient(
            [&] {
                Tape t;
                return softmax(t.constant(z)).value()[i];
            },
            z);
        double tot = 0;
        for (double v : gi.values()) tot += v;
        CHECK(std::fabs(tot) < 1e-8);
    }
}

TEST_CASE("seeded initialisation") {
    auto z = seeded_init({3, 3}, InitScheme::Zeros, 1);
    for (double v : z.values()) CHECK(v == 0.0);
    auto I = seeded_init({4, 4}, InitScheme::Identity, 1);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) CHECK(I.at(r, c) == (r == c ? 1.0 : 0.0));
    CHECK_THROWS(seeded_init({3, 4}, InitScheme::Identity, 1));
    auto a = seeded_init({5, 7}, InitScheme::UniformFanIn, 42), b = seeded_init({5, 7}, InitScheme::UniformFanIn, 42);
    CHECK(a == b);
    CHECK(a != seeded_init({5, 7}, InitScheme::UniformFanIn, 43));
    for (double v : a.values()) CHECK(std::fabs(v) <= 1.0 / std::sqrt(7.0));
}

TEST_CASE("deterministic forward and backward") {
    auto run = [] {
        std::mt19937_64 rng(9);
        Tape t;
        Parameter W("W", rand_tensor({4, 4}, rng));
        Var x = t.constant(rand_tensor({3, 4}, rng));
        Var out = sum(layer_norm(tanh(linear(x, t.param(W)))));
        Var loss = add(out, sum(square(t.param(W))));
        t.backward(loss);
        return std::make_pair(loss.value(), W.grad);
    };
    auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("adam step and checkpoint round trip") {
    Parameter p("p", Tensor::vector({1.0, -2.0}));
    Adam opt({&p}, AdamConfig{.lr = 0.1});
    p.grad = Tensor::vector({1.0, -1.0});
    opt.step();
    // First bias-corrected step moves each coordinate by lr * sign(grad).
    CHECK(p.value[0] == doctest::Approx(0.9));
    CHECK(p.value[1] == doctest::Approx(-1.9));
    CHECK(p.grad[0] == 0.0);

    Parameter q("p", Tensor::vector({0, 0}));
    params_from_json(params_to_json({&p}), {&q});
    CHECK(q.value == p.value);
    Parameter wrong("p", Tensor::vector({0, 0, 0}));
    CHECK_THROWS(params_from_json(params_to_json({&p}), {&wrong}));
}

}  // TEST_SUITE

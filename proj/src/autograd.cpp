#include "sage/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace sage::nn {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) shape_error(op, a, b);
}

void require_same_tape(Var a, Var b) {
    if (a.tape() != b.tape()) throw std::invalid_argument("vars live on different tapes");
}

bool any_grad(Tape& t, std::initializer_list<Var> vs) {
    for (auto v : vs) {
        if (t.requires_grad(v.id())) return true;
    }
    return false;
}

// Accumulate g into the gradient of node id if that node participates.
void accumulate(Tape& t, std::size_t id, const Tensor& g) {
    if (!t.requires_grad(id)) return;
    Tensor& buf = t.grad_buffer(id);
    auto dst = buf.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename F>
Var unary(Var a, Tensor out, F&& local_grad) {
    Tape& t = *a.tape();
    bool rg = t.requires_grad(a.id());
    std::size_t ia = a.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia, local_grad](Tape& tp, std::size_t self) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& x = tp.value(ia);
            const Tensor& y = tp.value(self);
            Tensor& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * local_grad(x[i], y[i]);
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor t) { return push(std::move(t), false, nullptr); }

Var Tape::param(Parameter& p) {
    Var v = push(p.value, p.trainable, nullptr);
    if (p.trainable) nodes_[v.id()].param = &p;
    return v;
}

Var Tape::leaf(Tensor t) { return push(std::move(t), true, nullptr); }

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id()];
    if (!n.has_grad) return Tensor::zeros_like(n.value);
    return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor::zeros_like(n.value);
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss from another tape");
    const Tensor& lv = nodes_[loss.id()].value;
    if (lv.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(lv.shape()));
    }
    if (!lv.all_finite()) throw std::domain_error("backward: non-finite loss");
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param != nullptr) {
            auto dst = n.param->grad.data();
            auto src = n.grad.data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
    require_same_tape(a, b);
    Tape& t = *a.tape();
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same("add", x, y);
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i];
    bool rg = any_grad(t, {a, b});
    std::size_t ia = a.id(), ib = b.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia, ib](Tape& tp, std::size_t self) {
            Tensor g = tp.grad_buffer(self);
            accumulate(tp, ia, g);
            accumulate(tp, ib, g);
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var sub(Var a, Var b) {
    require_same_tape(a, b);
    Tape& t = *a.tape();
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same("sub", x, y);
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= y[i];
    bool rg = any_grad(t, {a, b});
    std::size_t ia = a.id(), ib = b.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia, ib](Tape& tp, std::size_t self) {
            Tensor g = tp.grad_buffer(self);
            accumulate(tp, ia, g);
            for (auto& v : g.data()) v = -v;
            accumulate(tp, ib, g);
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    Tape& t = *a.tape();
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same("mul", x, y);
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
    bool rg = any_grad(t, {a, b});
    std::size_t ia = a.id(), ib = b.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia, ib](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            if (tp.requires_grad(ia)) {
                const Tensor& yv = tp.value(ib);
                Tensor& ga = tp.grad_buffer(ia);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * yv[i];
            }
            if (tp.requires_grad(ib)) {
                const Tensor& xv = tp.value(ia);
                Tensor& gb = tp.grad_buffer(ib);
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * xv[i];
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var mul_const(Var a, const Tensor& c) {
    Tape& t = *a.tape();
    require_same("mul_const", a.value(), c);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
    bool rg = t.requires_grad(a.id());
    std::size_t ia = a.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia, c](Tape& tp, std::size_t self) {
            const Tensor& g = tp.grad_buffer(self);
            Tensor& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * c[i];
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var add_const_tensor(Var a, const Tensor& c) {
    Tape& t = *a.tape();
    require_same("add_const_tensor", a.value(), c);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c[i];
    bool rg = t.requires_grad(a.id());
    std::size_t ia = a.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia](Tape& tp, std::size_t self) { accumulate(tp, ia, tp.grad_buffer(self)); };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var scale(Var a, double c) {
    return unary(a, [&] {
        Tensor out = a.value();
        for (auto& v : out.data()) v *= c;
        return out;
    }(), [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
    return unary(a, [&] {
        Tensor out = a.value();
        for (auto& v : out.data()) v += c;
        return out;
    }(), [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, Var s) {
    require_same_tape(a, s);
    Tape& t = *a.tape();
    if (s.value().numel() != 1) {
        throw std::invalid_argument("mul_scalar: scalar operand has shape " +
                                    shape_str(s.value().shape()));
    }
    double sv = s.value()[0];
    Tensor out = a.value();
    for (auto& v : out.data()) v *= sv;
    bool rg = any_grad(t, {a, s});
    std::size_t ia = a.id(), is = s.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia, is](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            const Tensor& xv = tp.value(ia);
            double svv = tp.value(is)[0];
            if (tp.requires_grad(ia)) {
                Tensor& ga = tp.grad_buffer(ia);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * svv;
            }
            if (tp.requires_grad(is)) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
                tp.grad_buffer(is)[0] += acc;
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

// ---------------------------------------------------------------- broadcasts

Var add_row(Var x, Var v) {
    require_same_tape(x, v);
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (vv.numel() != xv.cols()) shape_error("add_row", xv, vv);
    Tensor out = xv;
    std::size_t n = xv.rows(), d = xv.cols();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] += vv[c];
    bool rg = any_grad(t, {x, v});
    std::size_t ix = x.id(), iv = v.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, iv, n, d](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            accumulate(tp, ix, g);
            if (tp.requires_grad(iv)) {
                Tensor& gv = tp.grad_buffer(iv);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) gv[c] += g[r * d + c];
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var mul_row(Var x, Var v) {
    require_same_tape(x, v);
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (vv.numel() != xv.cols()) shape_error("mul_row", xv, vv);
    Tensor out = xv;
    std::size_t n = xv.rows(), d = xv.cols();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] *= vv[c];
    bool rg = any_grad(t, {x, v});
    std::size_t ix = x.id(), iv = v.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, iv, n, d](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            const Tensor& xv2 = tp.value(ix);
            const Tensor& vv2 = tp.value(iv);
            if (tp.requires_grad(ix)) {
                Tensor& gx = tp.grad_buffer(ix);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r * d + c] * vv2[c];
            }
            if (tp.requires_grad(iv)) {
                Tensor& gv = tp.grad_buffer(iv);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) gv[c] += g[r * d + c] * xv2[r * d + c];
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var broadcast_rows(Var v, std::size_t n) {
    Tape& t = *v.tape();
    const Tensor& vv = v.value();
    std::size_t d = vv.numel();
    Tensor out(Shape{n, d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = vv[c];
    bool rg = t.requires_grad(v.id());
    std::size_t iv = v.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [iv, n, d](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            Tensor& gv = tp.grad_buffer(iv);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) gv[c] += g[r * d + c];
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (bv.rank() != 2 || av.cols() != bv.rows()) shape_error("matmul", av, bv);
    std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Shape os = av.rank() == 2 ? Shape{m, n} : Shape{n};
    Tensor out(os);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    bool rg = any_grad(t, {a, b});
    std::size_t ia = a.id(), ib = b.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia, ib, m, k, n](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            const Tensor& A = tp.value(ia);
            const Tensor& B = tp.value(ib);
            if (tp.requires_grad(ia)) {
                Tensor& ga = tp.grad_buffer(ia);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                        ga[i * k + p] += acc;
                    }
            }
            if (tp.requires_grad(ib)) {
                Tensor& gb = tp.grad_buffer(ib);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double aip = A[i * k + p];
                        if (aip == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                    }
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var linear(Var x, Var w) {
    require_same_tape(x, w);
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (wv.rank() != 2 || xv.cols() != wv.cols()) shape_error("linear", xv, wv);
    std::size_t n = xv.rows(), in = xv.cols(), out_d = wv.rows();
    Shape os = xv.rank() == 2 ? Shape{n, out_d} : Shape{out_d};
    Tensor out(os);
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = xv.data().data() + r * in;
        for (std::size_t o = 0; o < out_d; ++o) {
            const double* wr = wv.data().data() + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            out[r * out_d + o] = acc;
        }
    }
    bool rg = any_grad(t, {x, w});
    std::size_t ix = x.id(), iw = w.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, iw, n, in, out_d](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            const Tensor& X = tp.value(ix);
            const Tensor& W = tp.value(iw);
            if (tp.requires_grad(ix)) {
                Tensor& gx = tp.grad_buffer(ix);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t o = 0; o < out_d; ++o) {
                        double go = g[r * out_d + o];
                        if (go == 0.0) continue;
                        const double* wr = W.data().data() + o * in;
                        double* gxr = gx.data().data() + r * in;
                        for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
                    }
            }
            if (tp.requires_grad(iw)) {
                Tensor& gw = tp.grad_buffer(iw);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t o = 0; o < out_d; ++o) {
                        double go = g[r * out_d + o];
                        if (go == 0.0) continue;
                        const double* xr = X.data().data() + r * in;
                        double* gwr = gw.data().data() + o * in;
                        for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
                    }
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var linear(Var x, Var w, Var b) { return add_row(linear(x, w), b); }

// ---------------------------------------------------------------- pointwise

Var tanh(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = std::tanh(v);
    return unary(a, std::move(out), [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) {
        v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return unary(a, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = std::exp(v);
    return unary(a, std::move(out), [](double, double y) { return y; });
}

Var log(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) {
        if (v <= 0.0) throw std::domain_error("log of non-positive value");
        v = std::log(v);
    }
    return unary(a, std::move(out), [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) {
        if (v < 0.0) throw std::domain_error("sqrt of negative value");
        v = std::sqrt(v);
    }
    return unary(a, std::move(out), [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = v * v;
    return unary(a, std::move(out), [](double x, double) { return 2.0 * x; });
}

Var pow_const(Var a, double p) {
    Tensor out = a.value();
    for (auto& v : out.data()) {
        if (v <= 0.0) throw std::domain_error("pow_const of non-positive value");
        v = std::pow(v, p);
    }
    return unary(a, std::move(out), [p](double x, double y) { return p * y / x; });
}

Var prelu(Var x, Var slope) {
    require_same_tape(x, slope);
    Tape& t = *x.tape();
    if (slope.value().numel() != 1) shape_error("prelu", x.value(), slope.value());
    double s = slope.value()[0];
    Tensor out = x.value();
    for (auto& v : out.data()) v = v >= 0.0 ? v : s * v;
    bool rg = any_grad(t, {x, slope});
    std::size_t ix = x.id(), is = slope.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, is](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            const Tensor& X = tp.value(ix);
            double sv = tp.value(is)[0];
            if (tp.requires_grad(ix)) {
                Tensor& gx = tp.grad_buffer(ix);
                for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (X[i] >= 0.0 ? 1.0 : sv);
            }
            if (tp.requires_grad(is)) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (X[i] < 0.0) acc += g[i] * X[i];
                tp.grad_buffer(is)[0] += acc;
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

// ---------------------------------------------------------------- normalisation

Var layer_norm(Var x, double eps) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    std::size_t n = xv.rows(), d = xv.cols();
    Tensor out(xv.shape());
    std::vector<double> inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += xv[r * d + c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            double z = xv[r * d + c] - mu;
            var += z * z;
        }
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (xv[r * d + c] - mu) * inv_std[r];
    }
    bool rg = t.requires_grad(x.id());
    std::size_t ix = x.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, n, d, inv_std](Tape& tp, std::size_t self) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& y = tp.value(self);
            Tensor& gx = tp.grad_buffer(ix);
            double dd = static_cast<double>(d);
            for (std::size_t r = 0; r < n; ++r) {
                double gsum = 0.0, gysum = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    gsum += g[r * d + c];
                    gysum += g[r * d + c] * y[r * d + c];
                }
                for (std::size_t c = 0; c < d; ++c) {
                    gx[r * d + c] +=
                        inv_std[r] * (g[r * d + c] - gsum / dd - y[r * d + c] * gysum / dd);
                }
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    return add_row(mul_row(layer_norm(x, eps), gamma), beta);
}

Var softmax(Var x) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    std::size_t n = xv.rows(), d = xv.cols();
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < n; ++r) {
        double m = xv[r * d];
        for (std::size_t c = 1; c < d; ++c) m = std::max(m, xv[r * d + c]);
        double z = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            out[r * d + c] = std::exp(xv[r * d + c] - m);
            z += out[r * d + c];
        }
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= z;
    }
    bool rg = t.requires_grad(x.id());
    std::size_t ix = x.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, n, d](Tape& tp, std::size_t self) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& y = tp.value(self);
            Tensor& gx = tp.grad_buffer(ix);
            for (std::size_t r = 0; r < n; ++r) {
                double dotp = 0.0;
                for (std::size_t c = 0; c < d; ++c) dotp += g[r * d + c] * y[r * d + c];
                for (std::size_t c = 0; c < d; ++c)
                    gx[r * d + c] += y[r * d + c] * (g[r * d + c] - dotp);
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var log_softmax(Var x) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    std::size_t n = xv.rows(), d = xv.cols();
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < n; ++r) {
        double m = xv[r * d];
        for (std::size_t c = 1; c < d; ++c) m = std::max(m, xv[r * d + c]);
        double z = 0.0;
        for (std::size_t c = 0; c < d; ++c) z += std::exp(xv[r * d + c] - m);
        double lz = m + std::log(z);
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] - lz;
    }
    bool rg = t.requires_grad(x.id());
    std::size_t ix = x.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, n, d](Tape& tp, std::size_t self) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& y = tp.value(self);
            Tensor& gx = tp.grad_buffer(ix);
            for (std::size_t r = 0; r < n; ++r) {
                double gs = 0.0;
                for (std::size_t c = 0; c < d; ++c) gs += g[r * d + c];
                for (std::size_t c = 0; c < d; ++c)
                    gx[r * d + c] += g[r * d + c] - std::exp(y[r * d + c]) * gs;
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

// ---------------------------------------------------------------- gather / scatter

Var gather_rows(Var x, std::span<const std::size_t> index) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    std::size_t m = index.size();
    std::vector<std::size_t> idx(index.begin(), index.end());
    if (xv.rank() == 2) {
        std::size_t n = xv.rows(), d = xv.cols();
        Tensor out(Shape{m, d});
        for (std::size_t i = 0; i < m; ++i) {
            if (idx[i] >= n) throw std::out_of_range("gather_rows index out of range");
            for (std::size_t c = 0; c < d; ++c) out[i * d + c] = xv[idx[i] * d + c];
        }
        bool rg = t.requires_grad(x.id());
        std::size_t ix = x.id();
        Tape::BackwardFn fn;
        if (rg) {
            fn = [ix, idx, d](Tape& tp, std::size_t self) {
                const Tensor g = tp.grad_buffer(self);
                Tensor& gx = tp.grad_buffer(ix);
                for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < d; ++c) gx[idx[i] * d + c] += g[i * d + c];
            };
        }
        return t.push(std::move(out), rg, std::move(fn));
    }
    Tensor out(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
        if (idx[i] >= xv.numel()) throw std::out_of_range("gather index out of range");
        out[i] = xv[idx[i]];
    }
    bool rg = t.requires_grad(x.id());
    std::size_t ix = x.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, idx](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            Tensor& gx = tp.grad_buffer(ix);
            for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var scatter_add_rows(Var m, std::span<const std::size_t> index, std::size_t n) {
    Tape& t = *m.tape();
    const Tensor& mv = m.value();
    std::vector<std::size_t> idx(index.begin(), index.end());
    if (mv.rank() == 2) {
        if (mv.rows() != idx.size()) {
            throw std::invalid_argument("scatter_add_rows: " + std::to_string(idx.size()) +
                                        " indices for shape " + shape_str(mv.shape()));
        }
        std::size_t d = mv.cols();
        Tensor out(Shape{n, d});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= n) throw std::out_of_range("scatter index out of range");
            for (std::size_t c = 0; c < d; ++c) out[idx[i] * d + c] += mv[i * d + c];
        }
        bool rg = t.requires_grad(m.id());
        std::size_t im = m.id();
        Tape::BackwardFn fn;
        if (rg) {
            fn = [im, idx, d](Tape& tp, std::size_t self) {
                const Tensor g = tp.grad_buffer(self);
                Tensor& gm = tp.grad_buffer(im);
                for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < d; ++c) gm[i * d + c] += g[idx[i] * d + c];
            };
        }
        return t.push(std::move(out), rg, std::move(fn));
    }
    if (mv.numel() != idx.size()) {
        throw std::invalid_argument("scatter_add: index count mismatch for shape " +
                                    shape_str(mv.shape()));
    }
    Tensor out(Shape{n});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= n) throw std::out_of_range("scatter index out of range");
        out[idx[i]] += mv[i];
    }
    bool rg = t.requires_grad(m.id());
    std::size_t im = m.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [im, idx](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            Tensor& gm = tp.grad_buffer(im);
            for (std::size_t i = 0; i < idx.size(); ++i) gm[i] += g[idx[i]];
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

// ---------------------------------------------------------------- reductions

Var rowdot(Var x, Var z) {
    require_same_tape(x, z);
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& zv = z.value();
    if (zv.numel() != xv.cols()) shape_error("rowdot", xv, zv);
    std::size_t n = xv.rows(), d = xv.cols();
    Tensor out(Shape{n});
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += xv[r * d + c] * zv[c];
        out[r] = acc;
    }
    bool rg = any_grad(t, {x, z});
    std::size_t ix = x.id(), iz = z.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, iz, n, d](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            const Tensor& X = tp.value(ix);
            const Tensor& Z = tp.value(iz);
            if (tp.requires_grad(ix)) {
                Tensor& gx = tp.grad_buffer(ix);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r] * Z[c];
            }
            if (tp.requires_grad(iz)) {
                Tensor& gz = tp.grad_buffer(iz);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) gz[c] += g[r] * X[r * d + c];
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var dot(Var a, Var b) {
    if (a.value().numel() != b.value().numel()) shape_error("dot", a.value(), b.value());
    return sum(mul(reshape(a, Shape{a.value().numel()}), reshape(b, Shape{b.value().numel()})));
}

Var sum(Var a) {
    Tape& t = *a.tape();
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    bool rg = t.requires_grad(a.id());
    std::size_t ia = a.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia](Tape& tp, std::size_t self) {
            double g = tp.grad_buffer(self)[0];
            Tensor& ga = tp.grad_buffer(ia);
            for (auto& v : ga.data()) v += g;
        };
    }
    return t.push(Tensor::scalar(s), rg, std::move(fn));
}

Var mean(Var a) {
    std::size_t n = a.value().numel();
    if (n == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var x) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    std::size_t n = xv.rows(), d = xv.cols();
    Tensor out(Shape{d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[c] += xv[r * d + c];
    bool rg = t.requires_grad(x.id());
    std::size_t ix = x.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, n, d](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            Tensor& gx = tp.grad_buffer(ix);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[c];
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var mean_rows(Var x) {
    std::size_t n = x.value().rows();
    if (n == 0) throw std::invalid_argument("mean_rows of empty tensor");
    return scale(sum_rows(x), 1.0 / static_cast<double>(n));
}

Var std_rows(Var x, double eps) {
    std::size_t n = x.value().rows();
    Var mu = mean_rows(x);
    Var centered = sub(x, broadcast_rows(mu, n));
    if (x.value().rank() < 2) centered = sub(x, reshape(mu, x.value().shape()));
    Var var = mean_rows(square(centered));
    return sqrt(add_scalar(var, eps));
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
    Tape& t = *parts.front().tape();
    std::size_t n = parts.front().value().rows();
    bool rank2 = parts.front().value().rank() == 2;
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    bool rg = false;
    for (auto& p : parts) {
        if (p.tape() != &t) throw std::invalid_argument("vars live on different tapes");
        if (p.value().rows() != n) shape_error("concat_cols", parts.front().value(), p.value());
        widths.push_back(p.value().cols());
        total += p.value().cols();
        rg = rg || t.requires_grad(p.id());
    }
    Tensor out(rank2 ? Shape{n, total} : Shape{total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c)
                out[r * total + off + c] = pv[r * widths[k] + c];
        off += widths[k];
    }
    std::vector<std::size_t> ids;
    for (auto& p : parts) ids.push_back(p.id());
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ids, widths, n, total](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            std::size_t o = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (tp.requires_grad(ids[k])) {
                    Tensor& gp = tp.grad_buffer(ids[k]);
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < widths[k]; ++c)
                            gp[r * widths[k] + c] += g[r * total + o + c];
                }
                o += widths[k];
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var reshape(Var a, Shape shape) {
    Tape& t = *a.tape();
    if (shape_numel(shape) != a.value().numel()) {
        throw std::invalid_argument("reshape " + shape_str(a.value().shape()) + " to " +
                                    shape_str(shape));
    }
    Tensor out(std::move(shape), a.value().values());
    bool rg = t.requires_grad(a.id());
    std::size_t ia = a.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            Tensor& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var normalize_rows(Var x, double eps) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    std::size_t n = xv.rows(), d = xv.cols();
    Tensor out(xv.shape());
    std::vector<double> inv(n);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += xv[r * d + c] * xv[r * d + c];
        inv[r] = 1.0 / std::sqrt(s + eps);
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * inv[r];
    }
    bool rg = t.requires_grad(x.id());
    std::size_t ix = x.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ix, n, d, inv](Tape& tp, std::size_t self) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& y = tp.value(self);
            Tensor& gx = tp.grad_buffer(ix);
            for (std::size_t r = 0; r < n; ++r) {
                double gy = 0.0;
                for (std::size_t c = 0; c < d; ++c) gy += g[r * d + c] * y[r * d + c];
                for (std::size_t c = 0; c < d; ++c)
                    gx[r * d + c] += inv[r] * (g[r * d + c] - y[r * d + c] * gy);
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var bce_with_logits(Var logits, const Tensor& targets) {
    Tape& t = *logits.tape();
    const Tensor& a = logits.value();
    require_same("bce_with_logits", a, targets);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double x = a[i];
        out[i] = std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    }
    bool rg = t.requires_grad(logits.id());
    std::size_t ia = logits.id();
    Tape::BackwardFn fn;
    if (rg) {
        fn = [ia, targets](Tape& tp, std::size_t self) {
            const Tensor g = tp.grad_buffer(self);
            const Tensor& x = tp.value(ia);
            Tensor& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < g.numel(); ++i) {
                double s = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                     : std::exp(x[i]) / (1.0 + std::exp(x[i]));
                ga[i] += g[i] * (s - targets[i]);
            }
        };
    }
    return t.push(std::move(out), rg, std::move(fn));
}

Var dropout(Var x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
    Tensor mask(x.value().shape());
    for (auto& m : mask.data()) m = rng.bernoulli(rate) ? 0.0 : 1.0 / (1.0 - rate);
    return mul_const(x, mask);
}

}  // namespace sage::nn

#include "sage/optim.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace sage::nn {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
        m_.push_back(Tensor::zeros_like(p->value));
        v_.push_back(Tensor::zeros_like(p->value));
    }
}

void Adam::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

void Adam::step() {
    ++t_;
    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
        double sq = 0.0;
        for (auto* p : params_) {
            if (!p->trainable) continue;
            for (double g : p->grad.data()) sq += g * g;
        }
        double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter* p = params_[k];
        if (!p->trainable) continue;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            double g = p->grad[i] * clip_scale + cfg_.weight_decay * p->value[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
    zero_grad();
}

Tensor finite_difference_gradient(const std::function<double()>& f, Tensor& theta,
                                  const std::vector<std::size_t>& coords, double step) {
    Tensor g = Tensor::zeros_like(theta);
    for (std::size_t i : coords) {
        double orig = theta[i];
        theta[i] = orig + step;
        double fp = f();
        theta[i] = orig - step;
        double fm = f();
        theta[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

Tensor finite_difference_gradient(const std::function<double()>& f, Tensor& theta, double step) {
    std::vector<std::size_t> all(theta.numel());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return finite_difference_gradient(f, theta, all, step);
}

GradCheckResult compare_gradients(const std::string& name, const Tensor& analytic,
                                  const Tensor& numeric, const std::vector<std::size_t>& coords,
                                  double rel_tol, double abs_tol) {
    GradCheckResult r;
    r.name = name;
    for (std::size_t i : coords) {
        double a = analytic[i], n = numeric[i];
        double abs_err = std::abs(a - n);
        double denom = std::max(std::abs(a), std::abs(n));
        double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
        r.max_abs_err = std::max(r.max_abs_err, abs_err);
        if (abs_err > abs_tol) r.max_rel_err = std::max(r.max_rel_err, rel_err);
        if (!(abs_err <= abs_tol || rel_err < rel_tol)) ++r.failures;
        ++r.checked;
    }
    return r;
}

nlohmann::json params_to_json(const std::vector<const Parameter*>& params) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto* p : params) {
        tensors.push_back({{"name", p->name},
                           {"shape", p->value.shape()},
                           {"trainable", p->trainable},
                           {"data", p->value.values()}});
    }
    return {{"format", kParamFormat}, {"version", kParamFormatVersion}, {"tensors", tensors}};
}

void params_from_json(const nlohmann::json& j, const std::vector<Parameter*>& params) {
    if (j.value("format", "") != kParamFormat) throw std::runtime_error("not a parameter checkpoint");
    if (j.value("version", 0) != kParamFormatVersion) {
        throw std::runtime_error("unsupported parameter checkpoint version");
    }
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& t : j.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    for (auto* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint missing tensor " + p->name);
        Shape shape = it->second->at("shape").get<Shape>();
        if (shape != p->value.shape()) {
            throw std::runtime_error("checkpoint tensor " + p->name + " has shape " + shape_str(shape) +
                                     ", expected " + shape_str(p->value.shape()));
        }
        p->value = Tensor(shape, it->second->at("data").get<std::vector<double>>());
        p->zero_grad();
    }
}

}  // namespace sage::nn

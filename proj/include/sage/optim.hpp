#pragma once
// Adam, finite-difference oracle, and named-tensor checkpoints.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/autograd.hpp"

namespace sage::nn {

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 0.0;  // global L2 clip; 0 disables
};

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig cfg);
    // Applies one update from the accumulated grads, then zeroes them.
    void step();
    void zero_grad();
    std::uint64_t steps() const { return t_; }

private:
    std::vector<Parameter*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

// Central differences (f(theta+h) - f(theta-h)) / 2h, coordinate by coordinate.
// theta is restored exactly after each probe.
Tensor finite_difference_gradient(const std::function<double()>& f, Tensor& theta, double step = 1e-6);

// Same, restricted to the listed flat coordinates; the others are left at 0.
Tensor finite_difference_gradient(const std::function<double()>& f, Tensor& theta,
                                  const std::vector<std::size_t>& coords, double step = 1e-6);

struct GradCheckResult {
    std::string name;
    std::size_t checked = 0;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::size_t failures = 0;
};

// Compares analytic with numeric entries; an entry passes when the absolute
// error is <= abs_tol or the relative error is < rel_tol.
GradCheckResult compare_gradients(const std::string& name, const Tensor& analytic,
                                  const Tensor& numeric, const std::vector<std::size_t>& coords,
                                  double rel_tol = 1e-4, double abs_tol = 1e-7);

inline constexpr const char* kParamFormat = "sage.params";
inline constexpr int kParamFormatVersion = 1;

nlohmann::json params_to_json(const std::vector<const Parameter*>& params);
// Loads values by name; every listed parameter must be present with a matching shape.
void params_from_json(const nlohmann::json& j, const std::vector<Parameter*>& params);

}  // namespace sage::nn

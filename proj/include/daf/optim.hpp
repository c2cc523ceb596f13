#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "daf/model.hpp"
#include "daf/tensor.hpp"

namespace daf::nn {

// First/second moment accumulators per parameter plus the shared step count.
// Entries appear lazily the first time a parameter is stepped.
struct OptState {
    std::unordered_map<std::string, Tensor> m;
    std::unordered_map<std::string, Tensor> v;
    long step = 0;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

// One Adam step with decoupled weight decay:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
// Gradients are applied in the order given (callers pass a deterministic
// order). A non-finite gradient element raises TrainError naming the
// parameter and step. Parameters not named in `grads` are untouched.
void adamw_step(ParamStore& ps, const std::vector<std::pair<std::string, const Tensor*>>& grads,
                OptState& st, const AdamWConfig& cfg);

// Warmup then stepped decay: during epochs [0, warmup) the base rate is
// scaled by (epoch+1)/warmup; afterwards it is multiplied by 0.2 once per
// decay boundary already reached (epoch >= boundary).
double lr_at(int epoch, double base_lr, int warmup_epochs, const std::vector<int>& decay_epochs);

// Central-difference audit of analytic gradients: re-evaluates `forward`
// (a pure scalar function of the store) around each element of the listed
// parameters and returns the worst relative error, where the denominator is
// floored at 1e-4 so near-zero slopes compare sanely.
double grad_check(const std::function<double(ParamStore&)>& forward, ParamStore& ps,
                  const std::vector<std::string>& params,
                  const std::unordered_map<std::string, Tensor>& analytic, double eps = 1e-4);

}  // namespace daf::nn

#include "daf/optim.hpp"

#include <cmath>

#include "daf/error.hpp"

namespace daf::nn {

void adamw_step(ParamStore& ps, const std::vector<std::pair<std::string, const Tensor*>>& grads,
                OptState& st, const AdamWConfig& cfg) {
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.step));
    for (const auto& [name, gp] : grads) {
        const Tensor& g = *gp;
        Tensor& p = ps.at(name);
        if (!g.same_shape(p)) throw ShapeError("gradient shape mismatch for " + name);
        Tensor& m = st.m.try_emplace(name, Tensor(p.shape)).first->second;
        Tensor& v = st.v.try_emplace(name, Tensor(p.shape)).first->second;
        for (long i = 0; i < p.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw TrainError("non-finite gradient in " + name + " at step " +
                                 std::to_string(st.step));
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
        }
    }
}

double lr_at(int epoch, double base_lr, int warmup_epochs, const std::vector<int>& decay_epochs) {
    if (warmup_epochs > 0 && epoch < warmup_epochs)
        return base_lr * double(epoch + 1) / double(warmup_epochs);
    double lr = base_lr;
    for (int d : decay_epochs)
        if (epoch >= d) lr *= 0.2;
    return lr;
}

double grad_check(const std::function<double(ParamStore&)>& forward, ParamStore& ps,
                  const std::vector<std::string>& params,
                  const std::unordered_map<std::string, Tensor>& analytic, double eps) {
    double worst = 0.0;
    for (const auto& name : params) {
        Tensor& p = ps.at(name);
        auto it = analytic.find(name);
        if (it == analytic.end()) throw ParamError("no analytic gradient for " + name);
        const Tensor& a = it->second;
        if (!a.same_shape(p)) throw ShapeError("analytic gradient shape mismatch for " + name);
        for (long i = 0; i < p.size(); ++i) {
            const double keep = p[i];
            p[i] = keep + eps;
            const double fp = forward(ps);
            p[i] = keep - eps;
            const double fm = forward(ps);
            p[i] = keep;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double denom = std::max(std::max(std::abs(a[i]), std::abs(numeric)), 1e-4);
            worst = std::max(worst, std::abs(a[i] - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace daf::nn

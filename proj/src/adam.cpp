#include "flens/adam.hpp"

#include <cmath>

namespace flens {

AdamState AdamState::init(const std::vector<Tensor*>& params, AdamHyper hyper) {
    AdamState s;
    s.hyper = hyper;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor* p : params) {
        s.m.emplace_back(p->shape());
        s.v.emplace_back(p->shape());
    }
    return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw InputError("adam_step: params/grads/state tensor counts differ");
    }
    state.step += 1;
    const double b1 = state.hyper.beta1;
    const double b2 = state.hyper.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        const Tensor& g = *grads[t];
        Tensor& m = state.m[t];
        Tensor& v = state.v[t];
        if (!p.same_shape(g) || !p.same_shape(m)) {
            throw InputError("adam_step: shape mismatch between parameter " + p.shape_str() +
                             " and gradient " + g.shape_str());
        }
        const int64_t n = p.numel();
        for (int64_t i = 0; i < n; ++i) {
            const double gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= state.hyper.lr * mhat / (std::sqrt(vhat) + state.hyper.epsilon);
        }
    }
}

}  // namespace flens

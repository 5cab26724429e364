#pragma once

#include <cstdint>
#include <vector>

#include "flens/tensor.hpp"

namespace flens {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second-moment accumulators for one list of parameter tensors.
/// Moment tensors mirror their parameter shapes; step counts completed
/// updates.
struct AdamState {
    AdamHyper hyper;
    int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static AdamState init(const std::vector<Tensor*>& params, AdamHyper hyper);
};

/// Standard bias-corrected Adam update, in place on `params`.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state);

}  // namespace flens

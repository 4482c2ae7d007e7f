#pragma once

#include <unordered_map>

#include "frcnn/tensor.hpp"

namespace frcnn {

// SGD or Adam with L2 weight decay folded into the gradient. Moment buffers
// are allocated only for the adaptive variant.
struct OptimState {
    Scalar learning_rate = 2e-4;
    Scalar weight_decay = 1e-4;
    bool adaptive = true;  // Adam when true, plain SGD otherwise
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar eps = 1e-8;
    long step_count = 0;

    struct Moments {
        std::vector<Scalar> m1, m2;
    };
    std::unordered_map<const detail::TensorNode*, Moments> moments;
};

inline void optimizer_step(std::vector<Tensor>& params, OptimState& st) {
    ++st.step_count;
    const Scalar bc1 = 1 - std::pow(st.beta1, static_cast<Scalar>(st.step_count));
    const Scalar bc2 = 1 - std::pow(st.beta2, static_cast<Scalar>(st.step_count));
    for (Tensor& p : params) {
        require(p.has_grad(), "optimizer_step: parameter '" + p.name() + "' has no gradient");
        auto& w = p.mutable_data();
        auto& g = p.node()->grad;
        if (st.adaptive) {
            auto& mom = st.moments[p.node()];
            if (mom.m1.size() != w.size()) {
                mom.m1.assign(w.size(), Scalar(0));
                mom.m2.assign(w.size(), Scalar(0));
            }
            for (std::size_t i = 0; i < w.size(); ++i) {
                const Scalar gi = g[i] + st.weight_decay * w[i];
                mom.m1[i] = st.beta1 * mom.m1[i] + (1 - st.beta1) * gi;
                mom.m2[i] = st.beta2 * mom.m2[i] + (1 - st.beta2) * gi * gi;
                const Scalar mhat = mom.m1[i] / bc1;
                const Scalar vhat = mom.m2[i] / bc2;
                w[i] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.eps);
            }
        } else {
            for (std::size_t i = 0; i < w.size(); ++i)
                w[i] -= st.learning_rate * (g[i] + st.weight_decay * w[i]);
        }
        p.zero_grad();
    }
}

}  // namespace frcnn

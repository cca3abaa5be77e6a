#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "lcnet/error.hpp"

namespace lcnet::nn {

/// Adam with bias correction. Defaults follow the Keras optimizer.
struct AdamState {
    long step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

inline void adam_step(AdamState& st, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size()) throw DimensionError("adam_step: params and grads differ in length");
    if (st.m.empty() && st.v.empty()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    if (st.m.size() != params.size() || st.v.size() != params.size())
        throw DimensionError("adam_step: moment arrays not aligned with params");
    for (double g : grads)
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.epsilon);
    }
}

} // namespace lcnet::nn

// SPDX-License-Identifier: Apache-2.0
//
// Adam with bias correction, applied in place over a parameter store.

#pragma once

#include <cmath>
#include <map>
#include <string>

#include "peftlab/param_store.hpp"
#include "peftlab/tensor.hpp"

namespace peftlab {

struct AdamConfig {
    double lr    = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps   = 1e-8;
};

// Moment buffers exist only for parameters that can receive gradients, so a
// frozen parameter can never drift, not even by a rounding step.
template <typename Real>
class AdamState {
  public:
    explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig & config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    int64_t step_count() const { return t_; }

    // One optimizer step. grads must contain exactly the parameters the
    // store marks trainable or row-masked: a gradient for a frozen parameter
    // and a missing gradient for a trainable one are both errors. Rows that a
    // row mask excludes carry exact-zero gradients (collect_gradients
    // guarantees this), so their moments stay zero and the update is a no-op
    // at the bit level.
    void step(ParamStore<Real> & store, const GradientMap<Real> & grads) {
        for (const auto & [name, g] : grads) {
            if (!store.has(name)) throw StoreError("gradient for unknown parameter: " + name);
            if (!store.requires_grad(name)) {
                throw StoreError("gradient provided for frozen parameter: " + name);
            }
        }
        for (const std::string & name : store.grad_param_names()) {
            if (!grads.count(name)) throw StoreError("missing gradient for trainable parameter: " + name);
        }
        t_++;
        const Real bc1 = Real(1) - (Real) std::pow(cfg_.beta1, (double) t_);
        const Real bc2 = Real(1) - (Real) std::pow(cfg_.beta2, (double) t_);
        for (const auto & [name, g] : grads) {
            Tensor<Real> & w = store.tensor(name);
            if (!w.same_shape(g)) {
                throw StoreError("gradient shape mismatch for " + name + ": " + shape_str(g.shape) + " vs " +
                                 shape_str(w.shape));
            }
            auto & [m, v] = moments(name, w);
            const Real b1 = (Real) cfg_.beta1;
            const Real b2 = (Real) cfg_.beta2;
            const Real lr = (Real) cfg_.lr;
            const Real eps = (Real) cfg_.eps;
            for (size_t i = 0; i < w.values.size(); ++i) {
                Real gi = g.values[i];
                m.values[i] = b1 * m.values[i] + (Real(1) - b1) * gi;
                v.values[i] = b2 * v.values[i] + (Real(1) - b2) * gi * gi;
                Real mhat = m.values[i] / bc1;
                Real vhat = v.values[i] / bc2;
                w.values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

  private:
    AdamConfig cfg_;
    int64_t    t_ = 0;
    std::map<std::string, std::pair<Tensor<Real>, Tensor<Real>>> moments_;

    std::pair<Tensor<Real>, Tensor<Real>> & moments(const std::string & name, const Tensor<Real> & like) {
        auto it = moments_.find(name);
        if (it == moments_.end()) {
            it = moments_.emplace(name, std::make_pair(Tensor<Real>::zeros(like.shape),
                                                       Tensor<Real>::zeros(like.shape))).first;
        }
        return it->second;
    }
};

}  // namespace peftlab

#pragma once

#include <cmath>
#include <span>

#include "probegen/array.hpp"

namespace probegen {

// Adam with bias correction. Moment buffers are created lazily on the first
// step and then shape-checked on every call.
template <typename T>
class AdamState {
  public:
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamState(double lr = 3e-4) : learning_rate(lr) {}

    std::uint64_t step_count() const { return step_; }

    void step(std::span<DenseArray<T>* const> params, std::span<const DenseArray<T>* const> grads) {
        if (params.size() != grads.size())
            throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                             std::to_string(grads.size()) + " grads");
        if (m_.empty()) {
            m_.reserve(params.size());
            v_.reserve(params.size());
            for (const DenseArray<T>* p : params) {
                m_.emplace_back(p->shape);
                v_.emplace_back(p->shape);
            }
        }
        if (m_.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
        ++step_;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (std::size_t j = 0; j < params.size(); ++j) {
            DenseArray<T>& p = *params[j];
            const DenseArray<T>& g = *grads[j];
            if (!same_shape(p.shape, m_[j].shape) || !same_shape(g.shape, p.shape))
                throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(j) +
                                 ": " + shape_str(p.shape) + " vs " + shape_str(g.shape));
            T* pv = p.ptr();
            const T* gv = g.ptr();
            T* m = m_[j].ptr();
            T* v = v_[j].ptr();
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = static_cast<T>(beta1 * m[i] + (1.0 - beta1) * gv[i]);
                v[i] = static_cast<T>(beta2 * v[i] + (1.0 - beta2) * gv[i] * gv[i]);
                double mhat = static_cast<double>(m[i]) / bc1;
                double vhat = static_cast<double>(v[i]) / bc2;
                pv[i] -= static_cast<T>(learning_rate * mhat / (std::sqrt(vhat) + epsilon));
            }
        }
    }

  private:
    std::uint64_t step_ = 0;
    std::vector<DenseArray<T>> m_, v_;
};

template <typename T>
void adam_step(AdamState<T>& state, std::span<DenseArray<T>* const> params,
               std::span<const DenseArray<T>* const> grads) {
    state.step(params, grads);
}

}  // namespace probegen

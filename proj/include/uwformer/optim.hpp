#pragma once
// Adam with bias correction. Moments live beside the parameters, keyed by
// parameter name; both are zero-initialized the first time a parameter is
// seen. A parameter whose grad buffer is missing is treated as having zero
// gradient.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "uwformer/params.hpp"

namespace uwf {

template <typename T>
struct AdamState {
  i64 step = 0;  // number of completed steps
  std::map<std::string, std::vector<T>> m, v;
};

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& st, T lr, T beta1 = static_cast<T>(0.9),
               T beta2 = static_cast<T>(0.999), T eps = static_cast<T>(1e-8)) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(st.step));
  for (const auto& name : params.names()) {
    Tensor<T>& p = params.at(name);
    const std::size_t n = static_cast<std::size_t>(p.numel());
    auto& m = st.m[name];
    auto& v = st.v[name];
    if (m.empty()) m.assign(n, T(0));
    if (v.empty()) v.assign(n, T(0));
    check(m.size() == n && v.size() == n, "adam: moment shape mismatch for " + name);
    const std::vector<T>* g = p.grad ? p.grad.get() : nullptr;
    check(g == nullptr || g->size() == n, "adam: grad shape mismatch for " + name);
    T* pd = p.ptr();
    for (std::size_t i = 0; i < n; ++i) {
      const T gi = g ? (*g)[i] : T(0);
      m[i] = beta1 * m[i] + (T(1) - beta1) * gi;
      v[i] = beta2 * v[i] + (T(1) - beta2) * gi * gi;
      const T mhat = m[i] / static_cast<T>(bc1);
      const T vhat = v[i] / static_cast<T>(bc2);
      pd[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void zero_grads(ParamStore<T>& params) {
  for (const auto& name : params.names()) {
    Tensor<T>& p = params.at(name);
    if (p.grad) std::fill(p.grad->begin(), p.grad->end(), T(0));
  }
}

}  // namespace uwf

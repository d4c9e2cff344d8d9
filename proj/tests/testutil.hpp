#pragma once
// Shared helpers for the test binaries.
//
// grad_check_max_rel is the independent oracle for all backward passes: it
// compares tape gradients against 64-bit central finite differences computed
// straight from the forward function, element by element.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "uwformer/tensor.hpp"

namespace testutil {

using uwf::i64;
using uwf::Tape;
using uwf::Tensor;

inline Tensor<double> randn(std::vector<i64> shape, std::mt19937_64& rng, double stddev = 1.0) {
  return Tensor<double>::randn(std::move(shape), rng, stddev);
}

// Uniform values in [lo, hi); handy for image-like tensors.
inline Tensor<double> rand_uniform(std::vector<i64> shape, std::mt19937_64& rng, double lo = 0.0,
                                   double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : *t.data) v = dist(rng);
  return t;
}

inline Tensor<float> rand_uniform_f(std::vector<i64> shape, std::mt19937_64& rng, float lo = 0.0f,
                                    float hi = 1.0f) {
  Tensor<float> t = Tensor<float>::zeros(std::move(shape));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : *t.data) v = dist(rng);
  return t;
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-4});
  return std::abs(a - b) / denom;
}

// Checks d(loss)/d(leaf) for every element of every leaf.
//
// `loss_fn` must rebuild the computation from the current leaf values each
// time it is called. Returns the worst relative error between the tape
// gradient and the central difference (f(x+h)-f(x-h))/(2h).
inline double grad_check_max_rel(const std::function<Tensor<double>()>& loss_fn,
                                 const std::vector<Tensor<double>*>& leaves, double h = 1e-5) {
  Tape<double> tape;
  for (Tensor<double>* leaf : leaves) {
    leaf->grad = nullptr;  // fresh buffer per check
    tape.watch(*leaf);
  }
  Tensor<double> loss = loss_fn();
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (Tensor<double>* leaf : leaves) analytic.push_back(*leaf->grad);

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double>* leaf = leaves[li];
    for (i64 i = 0; i < leaf->numel(); ++i) {
      const double saved = leaf->ptr()[i];
      leaf->ptr()[i] = saved + h;
      const double lp = loss_fn().ptr()[0];
      leaf->ptr()[i] = saved - h;
      const double lm = loss_fn().ptr()[0];
      leaf->ptr()[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[li][static_cast<std::size_t>(i)], fd));
    }
  }
  return worst;
}

// Like grad_check_max_rel but only probes `samples` randomly chosen elements,
// for computations too large to sweep exhaustively.
inline double grad_check_sampled(const std::function<Tensor<double>()>& loss_fn,
                                 const std::vector<Tensor<double>*>& leaves, int samples,
                                 std::mt19937_64& rng, double h = 1e-5) {
  Tape<double> tape;
  for (Tensor<double>* leaf : leaves) {
    leaf->grad = nullptr;
    tape.watch(*leaf);
  }
  Tensor<double> loss = loss_fn();
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (Tensor<double>* leaf : leaves) analytic.push_back(*leaf->grad);

  double worst = 0.0;
  std::uniform_int_distribution<std::size_t> pick_leaf(0, leaves.size() - 1);
  for (int s = 0; s < samples; ++s) {
    const std::size_t li = pick_leaf(rng);
    Tensor<double>* leaf = leaves[li];
    std::uniform_int_distribution<i64> pick_elem(0, leaf->numel() - 1);
    const i64 i = pick_elem(rng);
    const double saved = leaf->ptr()[i];
    leaf->ptr()[i] = saved + h;
    const double lp = loss_fn().ptr()[0];
    leaf->ptr()[i] = saved - h;
    const double lm = loss_fn().ptr()[0];
    leaf->ptr()[i] = saved;
    const double fd = (lp - lm) / (2.0 * h);
    worst = std::max(worst, rel_err(analytic[li][static_cast<std::size_t>(i)], fd));
  }
  return worst;
}

// Weighted scalar readout: sum(w .* t) with fixed pseudorandom weights, so a
// gradient check exercises every output element of an op.
inline Tensor<double> weighted_sum(const Tensor<double>& t, unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  Tensor<double> w = Tensor<double>::randn(t.shape, rng);
  return uwf::sum(uwf::mul(t, w.detached()));
}

}  // namespace testutil

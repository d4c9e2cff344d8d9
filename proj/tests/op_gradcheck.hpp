#pragma once
// One finite-difference gradient check per differentiable op, on small random
// inputs. Used by both the unit tests and the acceptance suite so the op
// registry lives in exactly one place.

#include <string>
#include <utility>
#include <vector>

#include "testutil.hpp"
#include "uwformer/wavelet.hpp"

namespace testutil {

struct OpCheck {
  std::string name;
  double max_rel_err;
};

inline std::vector<OpCheck> run_op_grad_checks() {
  using uwf::Tensor;
  std::vector<OpCheck> results;
  std::mt19937_64 rng(20240817);

  auto record = [&](const std::string& name, double err) {
    results.push_back(OpCheck{name, err});
  };

  {
    auto a = randn({2, 3, 4}, rng);
    auto b = randn({2, 3, 4}, rng);
    record("add", grad_check_max_rel([&] { return weighted_sum(uwf::add(a, b)); }, {&a, &b}));
  }
  {
    auto a = randn({2, 3, 4}, rng);
    auto b = randn({2, 3, 4}, rng);
    record("sub", grad_check_max_rel([&] { return weighted_sum(uwf::sub(a, b)); }, {&a, &b}));
  }
  {
    auto a = randn({3, 5}, rng);
    auto b = randn({3, 5}, rng);
    record("mul", grad_check_max_rel([&] { return weighted_sum(uwf::mul(a, b)); }, {&a, &b}));
  }
  {
    auto a = randn({4, 4}, rng);
    record("scale", grad_check_max_rel([&] { return weighted_sum(uwf::scale(a, 1.7)); }, {&a}));
  }
  {
    auto a = randn({3, 7}, rng);
    record("gelu", grad_check_max_rel([&] { return weighted_sum(uwf::gelu(a)); }, {&a}));
  }
  {
    // keep values away from the |.| kink so central differences are valid
    auto a = randn({3, 7}, rng);
    for (auto& v : *a.data) v += (v >= 0 ? 0.5 : -0.5);
    record("abs", grad_check_max_rel([&] { return weighted_sum(uwf::abs(a)); }, {&a}));
  }
  {
    auto a = randn({2, 6}, rng);
    record("sum", grad_check_max_rel([&] { return uwf::sum(a); }, {&a}));
  }
  {
    auto a = randn({2, 6}, rng);
    record("mean", grad_check_max_rel([&] { return uwf::mean(a); }, {&a}));
  }
  {
    auto a = randn({2, 3, 5}, rng);
    record("softmax_last", grad_check_max_rel([&] { return weighted_sum(uwf::softmax(a, -1)); }, {&a}));
  }
  {
    auto a = randn({2, 3, 5}, rng);
    record("softmax_mid", grad_check_max_rel([&] { return weighted_sum(uwf::softmax(a, 1)); }, {&a}));
  }
  {
    auto a = randn({2, 3, 4}, rng);
    record("reshape", grad_check_max_rel([&] { return weighted_sum(uwf::reshape(a, {4, 6})); }, {&a}));
  }
  {
    auto a = randn({2, 2, 3}, rng);
    auto b = randn({2, 3, 3}, rng);
    record("concat", grad_check_max_rel(
                         [&] { return weighted_sum(uwf::concat<double>({a, b}, 1)); }, {&a, &b}));
  }
  {
    auto a = randn({2, 5, 3}, rng);
    record("split", grad_check_max_rel(
                        [&] {
                          auto parts = uwf::split(a, 1, {2, 3});
                          return uwf::add(weighted_sum(parts[0], 11), weighted_sum(parts[1], 13));
                        },
                        {&a}));
  }
  {
    auto a = randn({2, 3, 4}, rng);
    record("transpose_last2",
           grad_check_max_rel([&] { return weighted_sum(uwf::transpose_last2(a)); }, {&a}));
  }
  {
    auto a = randn({2, 3, 4}, rng);
    auto b = randn({2, 4, 5}, rng);
    record("matmul_batched",
           grad_check_max_rel([&] { return weighted_sum(uwf::matmul(a, b)); }, {&a, &b}));
  }
  {
    auto a = randn({4, 3}, rng);
    auto b = randn({2, 3, 5}, rng);
    record("matmul_broadcast_a",
           grad_check_max_rel([&] { return weighted_sum(uwf::matmul(a, b)); }, {&a, &b}));
  }
  {
    auto a = randn({2, 4, 3}, rng);
    auto b = randn({3, 5}, rng);
    record("matmul_broadcast_b",
           grad_check_max_rel([&] { return weighted_sum(uwf::matmul(a, b)); }, {&a, &b}));
  }
  {
    auto x = randn({2, 3, 5, 5}, rng);
    auto w = randn({4, 3, 3, 3}, rng);
    auto b = randn({4}, rng);
    record("conv2d_s1p1", grad_check_max_rel(
                              [&] { return weighted_sum(uwf::conv2d(x, w, b, 1, 1)); }, {&x, &w, &b}));
  }
  {
    auto x = randn({1, 2, 6, 6}, rng);
    auto w = randn({3, 2, 3, 3}, rng);
    auto b = randn({3}, rng);
    record("conv2d_s2p1", grad_check_max_rel(
                              [&] { return weighted_sum(uwf::conv2d(x, w, b, 2, 1)); }, {&x, &w, &b}));
  }
  {
    auto x = randn({2, 4, 5, 5}, rng);
    auto w = randn({3, 4, 1, 1}, rng);
    auto b = randn({3}, rng);
    record("conv2d_1x1", grad_check_max_rel(
                             [&] { return weighted_sum(uwf::conv2d(x, w, b, 1, 0)); }, {&x, &w, &b}));
  }
  {
    auto x = randn({2, 3, 5, 5}, rng);
    auto w = randn({3, 1, 3, 3}, rng);
    auto b = randn({3}, rng);
    record("dwconv2d_k3", grad_check_max_rel(
                              [&] { return weighted_sum(uwf::dwconv2d(x, w, b, 1)); }, {&x, &w, &b}));
  }
  {
    auto x = randn({1, 2, 6, 6}, rng);
    auto w = randn({2, 1, 5, 5}, rng);
    auto b = randn({2}, rng);
    record("dwconv2d_k5", grad_check_max_rel(
                              [&] { return weighted_sum(uwf::dwconv2d(x, w, b, 2)); }, {&x, &w, &b}));
  }
  {
    auto x = randn({2, 3, 4, 4}, rng);
    auto w = randn({3, 2, 2, 2}, rng);
    auto b = randn({2}, rng);
    record("conv_transpose2d",
           grad_check_max_rel([&] { return weighted_sum(uwf::conv_transpose2d(x, w, b, 2)); },
                              {&x, &w, &b}));
  }
  {
    auto x = randn({2, 3, 6, 6}, rng);
    record("avgpool2", grad_check_max_rel([&] { return weighted_sum(uwf::avgpool2(x)); }, {&x}));
  }
  {
    auto x = randn({2, 5, 3, 3}, rng);
    auto g = randn({5}, rng);
    auto b = randn({5}, rng);
    record("layernorm_channels",
           grad_check_max_rel([&] { return weighted_sum(uwf::layernorm_channels(x, g, b)); },
                              {&x, &g, &b}));
  }
  {
    auto x = randn({2, 3, 6, 6}, rng);
    record("dwt2", grad_check_max_rel([&] { return weighted_sum(uwf::dwt2_packed(x)); }, {&x}));
  }
  {
    auto p = randn({2, 8, 3, 3}, rng);
    record("idwt2", grad_check_max_rel([&] { return weighted_sum(uwf::idwt2_packed(p)); }, {&p}));
  }
  return results;
}

}  // namespace testutil

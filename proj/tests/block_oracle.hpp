#pragma once

// Finite-difference oracle for one full transformer block in 64-bit, shared by
// the unit tests and the acceptance runner.

#include <random>
#include <string>
#include <vector>

#include "testutil.hpp"
#include "uwformer/blocks.hpp"

namespace blockcheck {

// Builds a channels=4, heads=2 block on a 1x4x4x4 input and checks the tape
// gradient of a fixed readout against central differences for the input and
// every parameter element. Returns the worst relative error.
inline double transformer_block_fd_error() {
  using uwf::Tensor;
  std::mt19937_64 rng(2024);
  const uwf::NfaConfig cfg{4, 2};
  uwf::ParamStore<double> ps;
  uwf::declare_block_params(cfg, 2.0, "blk.",
                            [&](const std::string& name, std::vector<uwf::i64> shape, uwf::Init init) {
                              uwf::add_param(ps, name, shape, init, rng);
                            });
  auto x = testutil::randn({1, 4, 4, 4}, rng, 0.5);

  std::vector<Tensor<double>*> leaves{&x};
  for (const auto& name : ps.names()) leaves.push_back(&ps.at(name));
  return testutil::grad_check_max_rel(
      [&] { return testutil::weighted_sum(uwf::transformer_block(x, ps, "blk.", cfg)); }, leaves);
}

}  // namespace blockcheck

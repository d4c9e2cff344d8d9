#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "block_oracle.hpp"
#include "testutil.hpp"
#include "uwformer/blocks.hpp"

using uwf::i64;
using uwf::Init;
using uwf::NfaConfig;
using uwf::ParamStore;
using uwf::Tensor;

namespace {

template <typename Declare>
ParamStore<double> make_store(Declare&& declare, unsigned seed = 1) {
  std::mt19937_64 rng(seed);
  ParamStore<double> ps;
  declare([&](const std::string& name, std::vector<i64> shape, Init init) {
    uwf::add_param(ps, name, shape, init, rng);
  });
  return ps;
}

double max_abs(const Tensor<double>& t) {
  double m = 0;
  for (double v : t.vals()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST_CASE("attention produces the declared Q/K/V shapes and preserves input shape") {
  const NfaConfig cfg{4, 2};
  auto ps = make_store([&](auto&& fn) { uwf::declare_nfa_params(cfg, "a.", fn); });
  std::mt19937_64 rng(3);
  auto x = testutil::randn({1, 4, 8, 8}, rng);

  uwf::NfaTrace<double> trace;
  auto out = uwf::nfa_forward(x, ps, "a.", cfg, &trace);
  CHECK(out.shape == std::vector<i64>{1, 4, 8, 8});
  CHECK(trace.q.shape == std::vector<i64>{1, 16, 8, 8});
  CHECK(trace.k.shape == std::vector<i64>{1, 64, 4, 4});
  CHECK(trace.v.shape == std::vector<i64>{1, 64, 4, 4});
  CHECK(trace.attention.shape == std::vector<i64>{1, 2, 8, 8});
}

TEST_CASE("attention maps zero input to zero with zero biases") {
  const NfaConfig cfg{2, 1};
  auto ps = make_store([&](auto&& fn) { uwf::declare_nfa_params(cfg, "a.", fn); });
  auto zero = Tensor<double>::zeros({1, 2, 4, 4});
  auto out = uwf::nfa_forward(zero, ps, "a.", cfg);
  CHECK(max_abs(out) == 0.0);
}

TEST_CASE("attention rows sum to one") {
  const NfaConfig cfg{4, 4};
  auto ps = make_store([&](auto&& fn) { uwf::declare_nfa_params(cfg, "a.", fn); });
  std::mt19937_64 rng(4);
  auto x = testutil::randn({2, 4, 6, 6}, rng);
  uwf::NfaTrace<double> trace;
  uwf::nfa_forward(x, ps, "a.", cfg, &trace);

  const i64 dh = cfg.head_dim();
  const auto& a = trace.attention.vals();
  const i64 rows = trace.attention.numel() / dh;
  for (i64 r = 0; r < rows; ++r) {
    double s = 0;
    for (i64 j = 0; j < dh; ++j) s += a[r * dh + j];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("attention rejects bad configs and odd sizes") {
  auto ps = make_store([&](auto&& fn) { uwf::declare_nfa_params(NfaConfig{3, 2}, "a.", fn); });
  auto x = Tensor<double>::zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(uwf::nfa_forward(x, ps, "a.", NfaConfig{3, 5}), uwf::ConfigError);

  const NfaConfig ok{3, 2};
  auto odd = Tensor<double>::zeros({1, 3, 5, 4});
  CHECK_THROWS_AS(uwf::nfa_forward(odd, ps, "a.", ok), uwf::ContractError);
}

TEST_CASE("feed-forward preserves shape and maps zero to zero") {
  for (i64 c : {4, 8}) {
    auto ps = make_store([&](auto&& fn) { uwf::declare_msfn_params(c, 2.0, "m.", fn); });
    std::mt19937_64 rng(5);
    auto x = testutil::randn({1, c, 6, 6}, rng);
    CHECK(uwf::msfn_forward(x, ps, "m.").shape == x.shape);

    auto zero = Tensor<double>::zeros({1, c, 6, 6});
    CHECK(max_abs(uwf::msfn_forward(zero, ps, "m.")) == 0.0);
  }
}

TEST_CASE("feed-forward gradients flow through both the 3x3 and 5x5 kernels") {
  auto ps = make_store([&](auto&& fn) { uwf::declare_msfn_params(4, 2.0, "m.", fn); });
  std::mt19937_64 rng(6);
  auto x = testutil::randn({1, 4, 4, 4}, rng, 0.5);

  Tensor<double>& w3 = ps.at("m.dw3_ll.w");
  Tensor<double>& w5 = ps.at("m.dw5_gl.w");
  const double err = testutil::grad_check_max_rel(
      [&] { return testutil::weighted_sum(uwf::msfn_forward(x, ps, "m.")); }, {&w3, &w5});
  CHECK(err < 1e-5);
  double n3 = 0, n5 = 0;
  for (double v : *w3.grad) n3 += std::abs(v);
  for (double v : *w5.grad) n5 += std::abs(v);
  CHECK(n3 > 0.0);
  CHECK(n5 > 0.0);
}

TEST_CASE("transformer block preserves shape") {
  const NfaConfig cfg{8, 2};
  auto ps = make_store([&](auto&& fn) { uwf::declare_block_params(cfg, 2.0, "b.", fn); });
  std::mt19937_64 rng(7);
  auto x = testutil::randn({1, 8, 8, 8}, rng);
  CHECK(uwf::transformer_block(x, ps, "b.", cfg).shape == x.shape);
}

TEST_CASE("transformer block is the identity when all weights are zero") {
  const NfaConfig cfg{4, 2};
  auto ps = make_store([&](auto&& fn) { uwf::declare_block_params(cfg, 2.0, "b.", fn); });
  for (const auto& name : ps.names()) {
    for (auto& v : ps.at(name).vals()) v = 0.0;
  }
  std::mt19937_64 rng(8);
  auto x = testutil::randn({1, 4, 6, 6}, rng);
  auto out = uwf::transformer_block(x, ps, "b.", cfg);
  CHECK(uwf::max_abs_diff(out, x) == 0.0);
}

TEST_CASE("transformer block is the identity when only the output projections are zero") {
  const NfaConfig cfg{4, 2};
  auto ps = make_store([&](auto&& fn) { uwf::declare_block_params(cfg, 2.0, "b.", fn); });
  for (const char* name : {"b.nfa.out_proj.w", "b.nfa.out_proj.b", "b.msfn.out_proj.w", "b.msfn.out_proj.b"}) {
    for (auto& v : ps.at(name).vals()) v = 0.0;
  }
  std::mt19937_64 rng(9);
  auto x = testutil::randn({1, 4, 6, 6}, rng);
  CHECK(uwf::max_abs_diff(uwf::transformer_block(x, ps, "b.", cfg), x) == 0.0);
}

TEST_CASE("transformer block output reacts to a single perturbed parameter") {
  const NfaConfig cfg{4, 2};
  auto ps = make_store([&](auto&& fn) { uwf::declare_block_params(cfg, 2.0, "b.", fn); });
  std::mt19937_64 rng(10);
  auto x = testutil::randn({1, 4, 4, 4}, rng);
  auto base = uwf::transformer_block(x, ps, "b.", cfg);
  ps.at("b.nfa.q_dw.w").vals()[0] += 0.05;
  auto bumped = uwf::transformer_block(x, ps, "b.", cfg);
  CHECK(uwf::max_abs_diff(base, bumped) > 0.0);
}

TEST_CASE("transformer block passes a full 64-bit finite-difference check") {
  CHECK(blockcheck::transformer_block_fd_error() < 1e-4);
}

TEST_CASE("real FFT round-trips for even and odd widths") {
  std::mt19937_64 rng(11);
  for (auto shape : {std::vector<i64>{1, 3, 6, 8}, std::vector<i64>{1, 1, 4, 5}, std::vector<i64>{2, 2, 8, 8}}) {
    auto x = testutil::randn(shape, rng);
    auto back = uwf::irfft2(uwf::rfft2(x), shape[3]);
    CHECK(uwf::max_abs_diff(x, back) < 1e-10);
  }
}

TEST_CASE("constant input concentrates spectral energy at the DC bin") {
  const i64 h = 6, w = 8, wh = w / 2 + 1;
  auto x = Tensor<double>::full({1, 1, h, w}, 0.25);
  auto spec = uwf::rfft2(x);
  CHECK(spec.shape == std::vector<i64>{1, 2, h, wh});
  const auto& v = spec.vals();
  CHECK(v[0] == doctest::Approx(0.25 * h * w).epsilon(1e-12));
  double off_dc = 0;
  for (i64 i = 1; i < spec.numel(); ++i) off_dc = std::max(off_dc, std::abs(v[i]));
  CHECK(off_dc < 1e-9);
}

TEST_CASE("doubling the DC bin doubles the mean") {
  std::mt19937_64 rng(12);
  auto x = testutil::rand_uniform({1, 2, 8, 8}, rng);
  auto spec = uwf::rfft2(x);
  const i64 h = 8, wh = 5;
  for (i64 c = 0; c < 2; ++c) spec.vals()[(2 * c) * h * wh] *= 2.0;  // real plane, k=0, l=0
  auto out = uwf::irfft2(spec, 8);

  const double mean_in = uwf::mean(x).vals()[0];
  const double mean_out = uwf::mean(out).vals()[0];
  CHECK(mean_out == doctest::Approx(2.0 * mean_in).epsilon(1e-10));

  auto xc = Tensor<double>::full({1, 1, 8, 8}, 0.3);
  auto spec_c = uwf::rfft2(xc);
  spec_c.vals()[0] *= 2.0;
  auto out_c = uwf::irfft2(spec_c, 8);
  CHECK(uwf::max_abs_diff(out_c, uwf::scale(xc, 2.0)) < 1e-10);
}

TEST_CASE("spectral residual block preserves shape and starts as the identity") {
  auto ps = make_store([&](auto&& fn) { uwf::declare_ffc_params(9, "f.", fn); });
  std::mt19937_64 rng(13);
  auto x = testutil::randn({1, 9, 16, 16}, rng);
  auto out = uwf::ffc_resblock(x, ps, "f.");
  CHECK(out.shape == x.shape);
  CHECK(uwf::max_abs_diff(out, x) == 0.0);  // zero-init output projection

  std::mt19937_64 rng2(14);
  ps.at("f.out_proj.w") = Tensor<double>::randn({9, 9, 1, 1}, rng2, 0.3);
  CHECK(uwf::max_abs_diff(uwf::ffc_resblock(x, ps, "f."), x) > 0.0);
}

TEST_CASE("spectral residual block passes a finite-difference check") {
  std::mt19937_64 rng(15);
  ParamStore<double> ps;
  uwf::declare_ffc_params(9, "f.", [&](const std::string& name, std::vector<i64> shape, Init init) {
    // Randomize even the identity-start projection so gradients reach every path.
    uwf::add_param(ps, name, shape, init == Init::kZero && name.ends_with(".w") ? Init::kHe : init, rng);
  });
  auto x = testutil::randn({1, 9, 4, 4}, rng, 0.5);

  std::vector<Tensor<double>*> leaves{&x};
  for (const auto& name : ps.names()) leaves.push_back(&ps.at(name));
  const double err = testutil::grad_check_max_rel(
      [&] { return testutil::weighted_sum(uwf::ffc_resblock(x, ps, "f.")); }, leaves);
  CHECK(err < 1e-5);
}

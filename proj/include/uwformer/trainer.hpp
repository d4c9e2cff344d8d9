#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "uwformer/model.hpp"
#include "uwformer/optim.hpp"
#include "uwformer/params.hpp"

namespace uwf {

struct TrainConfig {
  i64 epochs = 200;
  i64 batch_size = 4;
  double lr = 2e-4;
  i64 lr_drop_epoch = 100;
  double lr_drop_factor = 0.1;
  double ema_decay = 0.999;     // teacher update weight on its own value
  double unsup_weight = 0.1;    // weight of the pseudo-label consistency loss
  std::uint64_t seed = 0;
  double spl_gate_margin = 0.0; // teacher must beat the input's score by this much
  i64 checkpoint_every = 50;    // epochs between checkpoint writes
  ModelConfig model;

  void validate() const {
    if (epochs <= 0) throw ConfigError("train config: epochs must be positive");
    if (batch_size <= 0) throw ConfigError("train config: batch_size must be positive");
    if (lr < 0.0) throw ConfigError("train config: lr must be nonnegative");
    if (lr_drop_epoch < 0) throw ConfigError("train config: lr_drop_epoch must be nonnegative");
    if (lr_drop_factor <= 0.0) throw ConfigError("train config: lr_drop_factor must be positive");
    if (ema_decay < 0.0 || ema_decay > 1.0) throw ConfigError("train config: ema_decay must be in [0,1]");
    if (unsup_weight < 0.0) throw ConfigError("train config: unsup_weight must be nonnegative");
    if (checkpoint_every <= 0) throw ConfigError("train config: checkpoint_every must be positive");
    model.validate();
  }
};

struct TrainState {
  ParamStore<float> student;
  ParamStore<float> teacher;  // EMA copy; never receives gradients
  AdamState<float> opt;
  i64 step = 0;
  i64 epoch = 0;
  std::mt19937_64 rng;
};

struct StepLosses {
  double l_sup = 0.0;
  double l_unsup = 0.0;   // before weighting, 0 when no sample passes the gate
  double gate_rate = 0.0; // accepted fraction of the unlabeled batch
};

// Teacher starts as an exact copy of the student.
TrainState make_train_state(const ModelConfig& cfg, std::uint64_t seed);

// Mean absolute error as a tracked scalar.
Tensor<float> supervised_loss(const Tensor<float>& pred, const Tensor<float>& target);

// theta_t <- a * theta_t + (1 - a) * theta_s, elementwise in float so a replay
// from logged student values is bit-identical.
void ema_update(ParamStore<float>& teacher, const ParamStore<float>& student, float a);

// Per-sample acceptance: the teacher's output must score at least the input's
// perceptual score plus the margin. Scores are computed on clamped copies.
std::vector<int> spl_gate(const Tensor<float>& teacher_out, const Tensor<float>& input, double margin);

double lr_schedule(i64 epoch, const TrainConfig& cfg);

// One optimization step on a labeled batch plus an optional unlabeled batch:
// supervised L1, gated pseudo-label L1 against the teacher, backward, Adam,
// then the teacher EMA update. Pass x_u == nullptr for supervised-only data.
StepLosses train_step(TrainState& state, const Tensor<float>& x_l, const Tensor<float>& y_l,
                      const Tensor<float>* x_u, const TrainConfig& cfg);

// Dedicated supervised-only path (no teacher forward, no gate); a
// unsup_weight=0 train_step must match it bit for bit.
StepLosses supervised_step(TrainState& state, const Tensor<float>& x_l, const Tensor<float>& y_l,
                           const TrainConfig& cfg);

// Seeded random horizontal/vertical flips and, for square images, quarter
// rotations; the same draw is applied to both tensors of a pair.
void augment_pair(Tensor<float>& a, Tensor<float>* b, std::mt19937_64& rng);

// Full loop over directory datasets: loads everything into memory, shuffles
// and augments per epoch, logs one CSV row per epoch to <out>.log.csv, and
// checkpoints every checkpoint_every epochs and at the end.
TrainState train_loop(const std::filesystem::path& labeled_dir,
                      const std::filesystem::path& unlabeled_dir,  // empty: supervised only
                      const TrainConfig& cfg, const std::filesystem::path& out_path);

void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state,
                           const ModelConfig& cfg);
TrainState load_train_checkpoint(const std::filesystem::path& path, ModelConfig& cfg_out);

}  // namespace uwf

#include "uwformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <utility>

#include "uwformer/checkpoint.hpp"
#include "uwformer/dataset.hpp"
#include "uwformer/image_io.hpp"
#include "uwformer/metrics.hpp"

namespace uwf {

namespace {

// Parameter handles keep a raw pointer to the tape they were watched on, and
// tracked() dereferences it. Each step watches the student on a stack-local
// tape, so the handles must be disconnected before that tape dies — including
// on the exception path.
struct LeafRelease {
  ParamStore<float>* ps;
  explicit LeafRelease(ParamStore<float>& s) : ps(&s) {}
  LeafRelease(const LeafRelease&) = delete;
  LeafRelease& operator=(const LeafRelease&) = delete;
  ~LeafRelease() {
    for (const auto& name : ps->names()) {
      Tensor<float>& p = ps->at(name);
      p.tape = nullptr;
      p.node = -1;
    }
  }
};

void watch_all(Tape<float>& tape, ParamStore<float>& ps) {
  for (const auto& name : ps.names()) {
    Tensor<float>& p = ps.at(name);
    p.grad = nullptr;  // watch() reuses an existing buffer without zeroing it
    tape.watch(p);
  }
}

// Clamped standalone copy of sample `b` of a [B,3,H,W] batch.
Tensor<float> clamped_sample(const Tensor<float>& batch, i64 b) {
  const i64 per = batch.shape[1] * batch.shape[2] * batch.shape[3];
  std::vector<float> v(static_cast<std::size_t>(per));
  const float* src = batch.ptr() + b * per;
  for (i64 i = 0; i < per; ++i) v[static_cast<std::size_t>(i)] = std::clamp(src[i], 0.0f, 1.0f);
  return Tensor<float>::from(std::move(v), {batch.shape[1], batch.shape[2], batch.shape[3]});
}

// Reverses the last (width) axis.
Tensor<float> flip_last(const Tensor<float>& t) {
  const i64 w = t.shape.back();
  const i64 rows = t.numel() / w;
  Tensor<float> out = Tensor<float>::zeros(t.shape);
  const float* src = t.ptr();
  float* dst = out.ptr();
  for (i64 r = 0; r < rows; ++r)
    for (i64 j = 0; j < w; ++j) dst[r * w + j] = src[r * w + (w - 1 - j)];
  return out;
}

// Reverses the second-to-last (height) axis.
Tensor<float> flip_rows(const Tensor<float>& t) {
  const i64 w = t.shape.back();
  const i64 h = t.shape[t.shape.size() - 2];
  const i64 planes = t.numel() / (h * w);
  Tensor<float> out = Tensor<float>::zeros(t.shape);
  const float* src = t.ptr();
  float* dst = out.ptr();
  for (i64 p = 0; p < planes; ++p)
    for (i64 i = 0; i < h; ++i)
      for (i64 j = 0; j < w; ++j) dst[(p * h + i) * w + j] = src[(p * h + (h - 1 - i)) * w + j];
  return out;
}

// One quarter turn of a square image: out(i,j) = in(j, n-1-i).
Tensor<float> quarter_turn(const Tensor<float>& t) {
  const i64 n = t.shape.back();
  const i64 planes = t.numel() / (n * n);
  Tensor<float> out = Tensor<float>::zeros(t.shape);
  const float* src = t.ptr();
  float* dst = out.ptr();
  for (i64 p = 0; p < planes; ++p)
    for (i64 i = 0; i < n; ++i)
      for (i64 j = 0; j < n; ++j) dst[(p * n + i) * n + j] = src[(p * n + j) * n + (n - 1 - i)];
  return out;
}

double scalar_of(const Tensor<float>& t) { return static_cast<double>(t.vals()[0]); }

}  // namespace

TrainState make_train_state(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState state;
  state.student = build_params<float>(cfg, seed);
  state.teacher = clone_params(state.student);
  state.rng.seed(seed);
  return state;
}

Tensor<float> supervised_loss(const Tensor<float>& pred, const Tensor<float>& target) {
  check(pred.shape == target.shape, "supervised_loss: prediction/target shape mismatch");
  return mean(abs(sub(pred, target)));
}

void ema_update(ParamStore<float>& teacher, const ParamStore<float>& student, float a) {
  check(teacher.size() == student.size(), "ema_update: parameter stores differ in size");
  for (const auto& name : teacher.names()) {
    check(student.contains(name), "ema_update: student is missing " + name);
    Tensor<float>& t = teacher.at(name);
    const Tensor<float>& s = student.at(name);
    check(t.numel() == s.numel(), "ema_update: shape mismatch for " + name);
    float* td = t.ptr();
    const float* sd = s.ptr();
    const i64 n = t.numel();
    for (i64 i = 0; i < n; ++i) td[i] = a * td[i] + (1.0f - a) * sd[i];
  }
}

std::vector<int> spl_gate(const Tensor<float>& teacher_out, const Tensor<float>& input,
                          double margin) {
  check(teacher_out.rank() == 4 && teacher_out.shape[1] == 3, "spl_gate: expected [N,3,H,W]");
  check(teacher_out.shape == input.shape, "spl_gate: output/input shape mismatch");
  const i64 n = teacher_out.shape[0];
  std::vector<int> accepted(static_cast<std::size_t>(n), 0);
  for (i64 b = 0; b < n; ++b) {
    const double score_out = spl(clamped_sample(teacher_out, b));
    const double score_in = spl(clamped_sample(input, b));
    accepted[static_cast<std::size_t>(b)] = score_out >= score_in + margin ? 1 : 0;
  }
  return accepted;
}

double lr_schedule(i64 epoch, const TrainConfig& cfg) {
  return epoch >= cfg.lr_drop_epoch ? cfg.lr * cfg.lr_drop_factor : cfg.lr;
}

StepLosses supervised_step(TrainState& state, const Tensor<float>& x_l, const Tensor<float>& y_l,
                           const TrainConfig& cfg) {
  Tape<float> tape;
  LeafRelease guard(state.student);
  watch_all(tape, state.student);

  Tensor<float> pred = msformer_forward(x_l, state.student, cfg.model, /*inference=*/false);
  Tensor<float> loss = supervised_loss(pred, y_l);

  StepLosses out;
  out.l_sup = scalar_of(loss);
  if (!std::isfinite(out.l_sup)) throw NumericError("train step: supervised loss is not finite");

  tape.backward(loss);
  adam_step(state.student, state.opt, static_cast<float>(lr_schedule(state.epoch, cfg)));
  ema_update(state.teacher, state.student, static_cast<float>(cfg.ema_decay));
  state.step += 1;
  return out;
}

StepLosses train_step(TrainState& state, const Tensor<float>& x_l, const Tensor<float>& y_l,
                      const Tensor<float>* x_u, const TrainConfig& cfg) {
  if (x_u == nullptr || cfg.unsup_weight == 0.0) return supervised_step(state, x_l, y_l, cfg);

  // Teacher pass first: its parameters are never watched, so nothing records.
  Tensor<float> pseudo = msformer_forward(*x_u, state.teacher, cfg.model, /*inference=*/true);
  const std::vector<int> gate = spl_gate(pseudo, *x_u, cfg.spl_gate_margin);
  const i64 accepted = std::accumulate(gate.begin(), gate.end(), i64{0});

  Tape<float> tape;
  LeafRelease guard(state.student);
  watch_all(tape, state.student);

  Tensor<float> pred_l = msformer_forward(x_l, state.student, cfg.model, /*inference=*/false);
  Tensor<float> l_sup = supervised_loss(pred_l, y_l);

  StepLosses out;
  out.l_sup = scalar_of(l_sup);
  out.gate_rate = static_cast<double>(accepted) / static_cast<double>(gate.size());

  Tensor<float> loss = l_sup;
  if (accepted > 0) {
    Tensor<float> pred_u = msformer_forward(*x_u, state.student, cfg.model, /*inference=*/false);
    // Per-sample 0/1 mask folded together with the mean normalizer, so the
    // masked sum is the mean absolute error over accepted samples only.
    const i64 per = pseudo.shape[1] * pseudo.shape[2] * pseudo.shape[3];
    Tensor<float> mask = Tensor<float>::zeros(pseudo.shape);
    const float norm = 1.0f / (static_cast<float>(accepted) * static_cast<float>(per));
    float* md = mask.ptr();
    for (i64 b = 0; b < pseudo.shape[0]; ++b)
      if (gate[static_cast<std::size_t>(b)])
        std::fill(md + b * per, md + (b + 1) * per, norm);
    Tensor<float> l_unsup = sum(mul(abs(sub(pred_u, pseudo)), mask));
    out.l_unsup = scalar_of(l_unsup);
    loss = add(l_sup, scale(l_unsup, static_cast<float>(cfg.unsup_weight)));
  }

  if (!std::isfinite(out.l_sup) || !std::isfinite(out.l_unsup))
    throw NumericError("train step: loss is not finite");

  tape.backward(loss);
  adam_step(state.student, state.opt, static_cast<float>(lr_schedule(state.epoch, cfg)));
  ema_update(state.teacher, state.student, static_cast<float>(cfg.ema_decay));
  state.step += 1;
  return out;
}

void augment_pair(Tensor<float>& a, Tensor<float>* b, std::mt19937_64& rng) {
  check(a.rank() >= 2, "augment_pair: need at least a 2-D image");
  if (b != nullptr) check(a.shape == b->shape, "augment_pair: pair shapes differ");
  const i64 h = a.shape[a.shape.size() - 2];
  const i64 w = a.shape.back();
  // Raw engine draws keep the sequence independent of library distribution
  // internals.
  const bool do_h = (rng() & 1u) != 0;
  const bool do_v = (rng() & 1u) != 0;
  const int turns = h == w ? static_cast<int>(rng() % 4) : 0;
  auto apply = [&](Tensor<float>& t) {
    if (do_h) t = flip_last(t);
    if (do_v) t = flip_rows(t);
    for (int k = 0; k < turns; ++k) t = quarter_turn(t);
  };
  apply(a);
  if (b != nullptr) apply(*b);
}

void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state,
                           const ModelConfig& cfg) {
  std::vector<CheckpointEntry> entries = encode_config(cfg);
  append_store(entries, state.student, "");
  append_store(entries, state.teacher, "__teacher__.");
  for (const auto& name : state.student.names()) {
    const auto mi = state.opt.m.find(name);
    const auto vi = state.opt.v.find(name);
    if (mi == state.opt.m.end() || vi == state.opt.v.end()) continue;
    const Tensor<float>& p = state.student.at(name);
    entries.push_back({"__opt__.m." + name, p.shape, mi->second});
    entries.push_back({"__opt__.v." + name, p.shape, vi->second});
  }
  entries.push_back({"__state__.step", {1}, {static_cast<float>(state.step)}});
  entries.push_back({"__state__.epoch", {1}, {static_cast<float>(state.epoch)}});
  save_checkpoint(path, entries);
}

TrainState load_train_checkpoint(const std::filesystem::path& path, ModelConfig& cfg_out) {
  const std::vector<CheckpointEntry> entries = load_checkpoint(path);
  cfg_out = decode_config(entries);

  TrainState state;
  state.student = build_params<float>(cfg_out, 0);
  state.teacher = build_params<float>(cfg_out, 0);
  load_into_store(entries, "", state.student);
  load_into_store(entries, "__teacher__.", state.teacher);

  for (const auto& e : entries) {
    const std::string& n = e.name;
    if (n.rfind("__opt__.m.", 0) == 0) {
      state.opt.m[n.substr(10)] = e.values;
    } else if (n.rfind("__opt__.v.", 0) == 0) {
      state.opt.v[n.substr(10)] = e.values;
    } else if (n == "__state__.step") {
      state.step = static_cast<i64>(e.values.at(0));
    } else if (n == "__state__.epoch") {
      state.epoch = static_cast<i64>(e.values.at(0));
    }
  }
  state.opt.step = state.step;
  for (const auto& [name, m] : state.opt.m) {
    check(state.student.contains(name) &&
              m.size() == static_cast<std::size_t>(state.student.at(name).numel()),
          "checkpoint: optimizer moment mismatch for " + name);
  }
  state.rng.seed(0);  // the loop reseeds; RNG state is not part of the format
  return state;
}

TrainState train_loop(const std::filesystem::path& labeled_dir,
                      const std::filesystem::path& unlabeled_dir, const TrainConfig& cfg,
                      const std::filesystem::path& out_path) {
  cfg.validate();

  const std::vector<LabeledPair> pairs = scan_labeled(labeled_dir);
  if (pairs.empty()) throw DataError("train: no labeled pairs under " + labeled_dir.string());

  auto load_batchable = [](const std::filesystem::path& p) {
    Tensor<float> t = load_image(p).tensor;
    return reshape(t, {1, t.shape[0], t.shape[1], t.shape[2]});
  };

  std::vector<std::pair<Tensor<float>, Tensor<float>>> labeled;
  labeled.reserve(pairs.size());
  for (const auto& p : pairs) {
    Tensor<float> in = load_batchable(p.input);
    Tensor<float> tg = load_batchable(p.target);
    if (in.shape != tg.shape)
      throw DataError("train: input/target sizes differ for " + p.name);
    if (!labeled.empty() && in.shape != labeled.front().first.shape)
      throw DataError("train: all training images must share one padded size (" + p.name + ")");
    labeled.emplace_back(std::move(in), std::move(tg));
  }

  std::vector<Tensor<float>> unlabeled;
  if (!unlabeled_dir.empty()) {
    for (const auto& path : list_images(unlabeled_dir)) {
      Tensor<float> u = load_batchable(path);
      if (u.shape != labeled.front().first.shape)
        throw DataError("train: unlabeled image size differs (" + path.string() + ")");
      unlabeled.push_back(std::move(u));
    }
  }
  const bool use_unsup = !unlabeled.empty() && cfg.unsup_weight > 0.0;

  TrainState state = make_train_state(cfg.model, cfg.seed);

  std::ofstream csv(out_path.string() + ".log.csv", std::ios::trunc);
  if (!csv) throw IoError("train: cannot write log next to " + out_path.string());
  csv << "epoch,l_sup,l_unsup,gate_rate,lr\n";

  const i64 n = static_cast<i64>(labeled.size());
  std::vector<i64> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), i64{0});
  std::size_t u_cursor = 0;

  for (i64 epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    std::shuffle(order.begin(), order.end(), state.rng);
    double sum_sup = 0.0, sum_unsup = 0.0, sum_gate = 0.0;
    i64 steps = 0;

    for (i64 start = 0; start < n; start += cfg.batch_size) {
      const i64 bs = std::min(cfg.batch_size, n - start);
      std::vector<Tensor<float>> xs, ys, us;
      for (i64 k = 0; k < bs; ++k) {
        const auto& [in, tg] = labeled[static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)])];
        Tensor<float> a = in, b = tg;  // augmentation rebinds, never mutates storage
        augment_pair(a, &b, state.rng);
        xs.push_back(std::move(a));
        ys.push_back(std::move(b));
      }
      if (use_unsup) {
        for (i64 k = 0; k < bs; ++k) {
          Tensor<float> u = unlabeled[u_cursor];
          u_cursor = (u_cursor + 1) % unlabeled.size();
          augment_pair(u, nullptr, state.rng);
          us.push_back(std::move(u));
        }
      }
      const Tensor<float> x_l = concat(xs, 0);
      const Tensor<float> y_l = concat(ys, 0);
      Tensor<float> x_u;
      if (use_unsup) x_u = concat(us, 0);

      const StepLosses sl = train_step(state, x_l, y_l, use_unsup ? &x_u : nullptr, cfg);
      sum_sup += sl.l_sup;
      sum_unsup += sl.l_unsup;
      sum_gate += sl.gate_rate;
      steps += 1;
    }

    char row[160];
    std::snprintf(row, sizeof row, "%lld,%.8f,%.8f,%.6f,%.6e\n",
                  static_cast<long long>(epoch), sum_sup / static_cast<double>(steps),
                  sum_unsup / static_cast<double>(steps), sum_gate / static_cast<double>(steps),
                  lr_schedule(epoch, cfg));
    csv << row;
    csv.flush();

    state.epoch = epoch + 1;  // completed-epoch count, as stored in checkpoints
    if ((epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs)
      save_train_checkpoint(out_path, state, cfg.model);
  }

  save_train_checkpoint(out_path, state, cfg.model);
  return state;
}

}  // namespace uwf

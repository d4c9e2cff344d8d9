// Command-line front end: train, enhance, eval, metrics.
//
// Exit codes: 0 success, 1 usage or configuration problem, 2 unreadable or
// inconsistent data, 3 numeric failure during optimization.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "uwformer/checkpoint.hpp"
#include "uwformer/dataset.hpp"
#include "uwformer/image_io.hpp"
#include "uwformer/metrics.hpp"
#include "uwformer/model.hpp"
#include "uwformer/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uwf::ModelConfig model_from_json(const json& j) {
  if (!j.is_object()) throw uwf::ConfigError("config: \"model\" must be an object");
  uwf::ModelConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "base_channels") {
        cfg.base_channels = value.get<uwf::i64>();
      } else if (key == "encoder_blocks") {
        cfg.encoder_blocks = value.get<std::vector<uwf::i64>>();
      } else if (key == "decoder_blocks") {
        cfg.decoder_blocks = value.get<std::vector<uwf::i64>>();
      } else if (key == "heads") {
        cfg.heads = value.get<std::vector<uwf::i64>>();
      } else if (key == "ffc_blocks") {
        cfg.ffc_blocks = value.get<uwf::i64>();
      } else if (key == "expansion") {
        cfg.expansion = value.get<double>();
      } else {
        throw uwf::ConfigError("config: unknown model key \"" + key + "\"");
      }
    } catch (const json::exception& e) {
      throw uwf::ConfigError("config: bad value for model." + key + ": " + e.what());
    }
  }
  return cfg;
}

uwf::TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw uwf::ConfigError("config: top level must be an object");
  uwf::TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "epochs") {
        cfg.epochs = value.get<uwf::i64>();
      } else if (key == "batch_size") {
        cfg.batch_size = value.get<uwf::i64>();
      } else if (key == "lr") {
        cfg.lr = value.get<double>();
      } else if (key == "lr_drop_epoch") {
        cfg.lr_drop_epoch = value.get<uwf::i64>();
      } else if (key == "lr_drop_factor") {
        cfg.lr_drop_factor = value.get<double>();
      } else if (key == "ema_decay") {
        cfg.ema_decay = value.get<double>();
      } else if (key == "unsup_weight") {
        cfg.unsup_weight = value.get<double>();
      } else if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "spl_gate_margin") {
        cfg.spl_gate_margin = value.get<double>();
      } else if (key == "checkpoint_every") {
        cfg.checkpoint_every = value.get<uwf::i64>();
      } else if (key == "model") {
        cfg.model = model_from_json(value);
      } else {
        throw uwf::ConfigError("config: unknown key \"" + key + "\"");
      }
    } catch (const json::exception& e) {
      throw uwf::ConfigError("config: bad value for \"" + key + "\": " + e.what());
    }
  }
  return cfg;
}

uwf::TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw uwf::ConfigError("cannot read config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw uwf::ConfigError("config: " + std::string(e.what()));
  }
  return train_config_from_json(j);
}

std::string fmt_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_metric(*v) : std::string(); }

// Top-left crop of a [3,H,W] or [1,3,H,W] tensor down to [3,h,w].
uwf::Tensor<float> crop_chw(const uwf::Tensor<float>& t, uwf::i64 h, uwf::i64 w) {
  uwf::Tensor<float> src = t.detached();
  if (src.rank() == 4 && src.shape[0] == 1)
    src = uwf::reshape(src, {src.shape[1], src.shape[2], src.shape[3]});
  uwf::check(src.rank() == 3 && src.shape[0] == 3, "crop: need a [3,H,W] image");
  const uwf::i64 fh = src.shape[1], fw = src.shape[2];
  uwf::check(h >= 1 && h <= fh && w >= 1 && w <= fw, "crop: region outside the image");
  uwf::Tensor<float> out = uwf::Tensor<float>::zeros({3, h, w});
  for (uwf::i64 c = 0; c < 3; ++c)
    for (uwf::i64 y = 0; y < h; ++y)
      for (uwf::i64 x = 0; x < w; ++x)
        out.vals()[static_cast<std::size_t>((c * h + y) * w + x)] =
            src.vals()[static_cast<std::size_t>((c * fh + y) * fw + x)];
  return out;
}

struct Model {
  uwf::ModelConfig cfg;
  uwf::ParamStore<float> weights;  // the student half of the checkpoint
};

Model load_model(const fs::path& path) {
  Model m;
  uwf::TrainState st = uwf::load_train_checkpoint(path, m.cfg);
  m.weights = std::move(st.student);
  return m;
}

// Pad, run the network, crop back, and return both views.
struct Enhanced {
  uwf::Tensor<float> padded;   // [1,3,Hp,Wp]
  uwf::Tensor<float> cropped;  // [3,h,w]
  uwf::i64 orig_h = 0, orig_w = 0;
};

Enhanced enhance_image(const Model& m, const fs::path& input) {
  const uwf::LoadedImage li = uwf::load_image(input);
  Enhanced e;
  e.orig_h = li.orig_h;
  e.orig_w = li.orig_w;
  const uwf::Tensor<float> x =
      uwf::reshape(li.tensor, {1, 3, li.tensor.shape[1], li.tensor.shape[2]});
  e.padded = uwf::msformer_forward(x, m.weights, m.cfg, /*inference=*/true);
  e.cropped = crop_chw(e.padded, e.orig_h, e.orig_w);
  return e;
}

// Opens the CSV sink: a file when a path is given, stdout otherwise.
class CsvSink {
 public:
  explicit CsvSink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw uwf::IoError("cannot write " + path);
    }
  }
  std::ostream& out() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

int run_train(const std::string& config, const std::string& labeled, const std::string& unlabeled,
              const std::string& out, const std::optional<std::uint64_t>& seed) {
  uwf::TrainConfig cfg = load_train_config(config);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const uwf::TrainState st = uwf::train_loop(labeled, unlabeled, cfg, out);
  std::cout << "wrote " << out << " after " << cfg.epochs << " epochs (" << st.step << " steps); log at "
            << out << ".log.csv\n";
  return 0;
}

int run_enhance(const std::string& model_path, const std::string& input, const std::string& output) {
  const Model m = load_model(model_path);
  if (fs::is_directory(input)) {
    const std::vector<fs::path> files = uwf::list_images(input);
    if (files.empty()) throw uwf::DataError("no .ppm images under " + input);
    fs::create_directories(output);
    for (const fs::path& f : files) {
      const Enhanced e = enhance_image(m, f);
      uwf::save_image(e.cropped, fs::path(output) / f.filename(), e.orig_h, e.orig_w);
    }
    std::cerr << "enhanced " << files.size() << " images into " << output << "\n";
  } else {
    const Enhanced e = enhance_image(m, input);
    uwf::save_image(e.cropped, output, e.orig_h, e.orig_w);
  }
  return 0;
}

int run_eval(const std::string& model_path, const std::string& input_dir,
             const std::string& target_dir, const std::string& csv) {
  const Model m = load_model(model_path);
  const std::vector<fs::path> files = uwf::list_images(input_dir);
  if (files.empty()) throw uwf::DataError("no .ppm images under " + input_dir);

  CsvSink sink(csv);
  sink.out() << "path,psnr,ssim,spl,uciqe\n";
  double sum_psnr = 0, sum_ssim = 0, sum_spl = 0, sum_uciqe = 0;
  for (const fs::path& f : files) {
    const fs::path target = fs::path(target_dir) / f.filename();
    if (!fs::is_regular_file(target))
      throw uwf::DataError("missing target image " + target.string());
    const Enhanced e = enhance_image(m, f);
    const uwf::Tensor<float> tgt = uwf::ppm_to_tensor(uwf::read_ppm(target));
    if (tgt.shape != e.cropped.shape)
      throw uwf::DataError("target size mismatch for " + f.filename().string());
    const double p = uwf::psnr(e.cropped, tgt);
    const double s = uwf::ssim(e.cropped, tgt);
    const double q = uwf::spl(e.cropped);
    const double u = uwf::uciqe(e.cropped);
    sink.out() << f.string() << "," << fmt_metric(p) << "," << fmt_metric(s) << ","
               << fmt_metric(q) << "," << fmt_metric(u) << "\n";
    sum_psnr += p;
    sum_ssim += s;
    sum_spl += q;
    sum_uciqe += u;
  }
  const double n = static_cast<double>(files.size());
  std::cerr << "mean over " << files.size() << " images: psnr=" << fmt_metric(sum_psnr / n)
            << " ssim=" << fmt_metric(sum_ssim / n) << " spl=" << fmt_metric(sum_spl / n)
            << " uciqe=" << fmt_metric(sum_uciqe / n) << "\n";
  return 0;
}

int run_metrics(const std::string& input, const std::string& reference, const std::string& csv) {
  std::vector<std::pair<fs::path, fs::path>> items;  // image, optional reference ("" = none)
  if (fs::is_directory(input)) {
    for (const fs::path& f : uwf::list_images(input)) {
      fs::path ref;
      if (!reference.empty()) {
        ref = fs::path(reference) / f.filename();
        if (!fs::is_regular_file(ref))
          throw uwf::DataError("missing reference image " + ref.string());
      }
      items.emplace_back(f, ref);
    }
    if (items.empty()) throw uwf::DataError("no .ppm images under " + input);
  } else {
    items.emplace_back(input, reference);
  }

  CsvSink sink(csv);
  sink.out() << "path,psnr,ssim,spl,uciqe,uiqm\n";
  for (const auto& [f, ref] : items) {
    const uwf::Tensor<float> img = uwf::ppm_to_tensor(uwf::read_ppm(f));
    uwf::MetricReport r;
    if (!ref.empty()) {
      const uwf::Tensor<float> rt = uwf::ppm_to_tensor(uwf::read_ppm(ref));
      if (rt.shape != img.shape)
        throw uwf::DataError("reference size mismatch for " + f.string());
      r = uwf::evaluate_image(img, &rt);
    } else {
      r = uwf::evaluate_image(img);
    }
    sink.out() << f.string() << "," << fmt_opt(r.psnr) << "," << fmt_opt(r.ssim) << ","
               << fmt_opt(r.spl) << "," << fmt_opt(r.uciqe) << "," << fmt_opt(r.uiqm) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Underwater image enhancement: wavelet-split transformer with a "
               "mean-teacher training loop"};
  app.require_subcommand(1);

  std::string config, labeled, unlabeled, out_path, model_path, input, output, target, csv,
      reference;
  std::optional<std::uint64_t> seed;

  CLI::App* train = app.add_subcommand("train", "Fit a model on paired (and optionally unpaired) images");
  train->add_option("--config", config, "JSON training configuration")->required();
  train->add_option("--labeled", labeled, "directory with input/ and target/ image pairs")->required();
  train->add_option("--unlabeled", unlabeled, "directory with unpaired images");
  train->add_option("--out", out_path, "checkpoint path to write")->required();
  train->add_option("--seed", seed, "override the seed from the config file");

  CLI::App* enhance = app.add_subcommand("enhance", "Run the model over an image or directory");
  enhance->add_option("--model", model_path, "checkpoint to load")->required();
  enhance->add_option("--input", input, "input .ppm image or directory")->required();
  enhance->add_option("--output", output, "output image or directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "Enhance a directory and score against targets");
  eval->add_option("--model", model_path, "checkpoint to load")->required();
  eval->add_option("--input", input, "directory of input .ppm images")->required();
  eval->add_option("--target", target, "directory of reference .ppm images")->required();
  eval->add_option("--csv", csv, "write rows here instead of stdout");

  CLI::App* metrics = app.add_subcommand("metrics", "Score images as they are, without a model");
  metrics->add_option("--input", input, "image or directory to score")->required();
  metrics->add_option("--reference", reference, "matching reference image or directory");
  metrics->add_option("--csv", csv, "write rows here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return run_train(config, labeled, unlabeled, out_path, seed);
    if (enhance->parsed()) return run_enhance(model_path, input, output);
    if (eval->parsed()) return run_eval(model_path, input, target, csv);
    if (metrics->parsed()) return run_metrics(input, reference, csv);
  } catch (const uwf::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const uwf::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {  // decode, io, data, contract
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

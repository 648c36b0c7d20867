#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "xvmunet/checkpoint.hpp"
#include "xvmunet/config.hpp"
#include "xvmunet/dataset.hpp"
#include "xvmunet/errors.hpp"
#include "xvmunet/gradcheck.hpp"
#include "xvmunet/loss.hpp"
#include "xvmunet/network.hpp"
#include "xvmunet/ops.hpp"
#include "xvmunet/pnm.hpp"
#include "xvmunet/synthetic.hpp"
#include "xvmunet/train.hpp"

namespace fs = std::filesystem;
using namespace xvmunet;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumerical = 4 };

// Flags shared by the subcommands that take them.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> folds;
  std::string out;
};

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed (data, initialization, shuffling)");
}

void add_training_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--epochs", c.epochs, "training epochs");
  cmd->add_option("--folds", c.folds, "cross-validation folds (1 = holdout split)");
}

config::RunConfig resolve(const Common& c) {
  config::RunConfig cfg;
  if (!c.config_path.empty()) cfg = config::load_run_config(c.config_path);
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.data.seed = *c.seed;
  }
  if (c.epochs) cfg.train.epochs = *c.epochs;
  if (c.folds) cfg.train.folds = *c.folds;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

void print_config(const config::RunConfig& cfg) {
  std::cout << "# resolved config\n" << config::to_text(cfg) << std::flush;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

// Dataset resolution and channel count must match the model.
void check_resolution(const net::ModelConfig& model, const data::Dataset& ds) {
  const Shape& s = ds.front().image.shape();
  if (s[0] != model.in_channels || s[1] != model.height || s[2] != model.width) {
    throw ConfigError("dataset images are " + std::to_string(s[2]) + "x" + std::to_string(s[1]) + "x" +
                      std::to_string(s[0]) + " but the model expects " + std::to_string(model.width) + "x" +
                      std::to_string(model.height) + "x" + std::to_string(model.in_channels));
  }
}

int run_gen_data(const Common& c) {
  const auto cfg = resolve(c);
  print_config(cfg);
  if (c.out.empty()) throw ConfigError("gen-data needs --out");
  data::gen_data(cfg.data, c.out);
  std::cout << "wrote " << cfg.data.count << " samples to " << c.out << "\n";
  return kOk;
}

int run_train(const Common& c, const std::string& data_dir) {
  const auto cfg = resolve(c);
  print_config(cfg);
  if (c.out.empty()) throw ConfigError("train needs --out");
  const data::Dataset ds = data::load_dataset(data_dir);
  check_resolution(cfg.model, ds);
  make_dir(c.out);
  io::write_file(fs::path(c.out) / "config.txt", config::to_text(cfg));

  std::ofstream log(fs::path(c.out) / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write metrics log in '" + c.out + "'");
  const auto result = train::train(cfg.model, cfg.train, ds, [&](const train::EpochRecord& r) {
    const std::string line = r.to_json();
    log << line << "\n" << std::flush;
    std::cout << line << "\n" << std::flush;
  });
  io::save_checkpoint(fs::path(c.out) / "model.xvmu", config::model_text(cfg.model), result.best_weights());

  for (const auto& f : result.folds) {
    std::printf("fold %zu: best epoch %zu  DSC %.4f  IoU %.4f  (final DSC %.4f  IoU %.4f)\n", f.fold, f.best_epoch,
                f.best_dsc, f.best_iou, f.final_dsc, f.final_iou);
  }
  std::printf("mean over %zu fold(s): DSC %.4f  IoU %.4f\n", result.folds.size(), result.mean_dsc, result.mean_iou);
  return kOk;
}

int run_eval(const std::string& checkpoint, const std::string& data_dir) {
  const auto ck = io::load_checkpoint(checkpoint);
  const auto model = config::parse_model_text(ck.config_text);
  const data::Dataset ds = data::load_dataset(data_dir);
  check_resolution(model, ds);
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto counts = train::evaluate(ck.weights, model, ds, all);
  std::printf("samples %zu  DSC %.4f  IoU %.4f\n", ds.size(), counts.dsc(), counts.iou());
  return kOk;
}

int run_predict(const std::string& checkpoint, const std::string& image_path, const std::string& mask_path,
                const std::string& out) {
  if (out.empty()) throw ConfigError("predict needs --out");
  const auto ck = io::load_checkpoint(checkpoint);
  const auto model = config::parse_model_text(ck.config_text);
  const io::Image image = io::read_pnm(image_path);
  if (image.width != model.width || image.height != model.height || image.channels != model.in_channels) {
    throw ConfigError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) + "x" +
                      std::to_string(image.channels) + " but the checkpoint expects " + std::to_string(model.width) +
                      "x" + std::to_string(model.height) + "x" + std::to_string(model.in_channels));
  }
  const Tensor pred = train::binarize_logits(net::infer_logits(ck.weights, model, data::image_to_tensor(image)));
  io::write_pnm(out, data::mask_to_image(pred));
  std::cout << "wrote " << out << "\n";
  if (!mask_path.empty()) {
    const data::Sample gt = data::make_sample("ground-truth", image, io::read_pnm(mask_path));
    const auto m = train::dsc_iou(pred, gt.mask);
    std::printf("DSC %.4f  IoU %.4f\n", m.dsc, m.iou);
  }
  return kOk;
}

int run_gradcheck(const Common& c, std::size_t samples, double tol, double step) {
  config::RunConfig cfg;
  cfg.model = net::ModelConfig::toy();
  if (!c.config_path.empty()) config::apply_text(cfg, io::read_file(c.config_path));
  if (c.seed) cfg.train.seed = *c.seed;
  cfg.model.validate();
  print_config(cfg);

  const auto& m = cfg.model;
  const ParamStore weights = net::init_model(m, cfg.train.seed);
  Rng rng(cfg.train.seed);
  const Tensor image = Tensor::uniform({m.in_channels, m.height, m.width}, rng, 0.0, 1.0);
  Tensor mask({1, m.height, m.width});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;

  GradCheckOptions opts;
  opts.samples = samples;
  opts.seed = cfg.train.seed;
  opts.step = step;
  const auto report = check_gradients(
      weights,
      [&](const Scope& s) {
        return train::bce_dice_loss(net::forward(s, m, s.tape().constant(image)), mask, cfg.train.loss);
      },
      opts);
  const auto& w = report.worst();
  std::printf("checked %zu of %zu parameters; max relative error %.3e at %s[%zu] (analytic %.6e, numeric %.6e)\n",
              report.entries.size(), weights.element_count(), report.max_rel_error, w.name.c_str(), w.index,
              w.analytic, w.numeric);
  const bool ok = report.passed(tol);
  std::printf("%s (tolerance %.1e)\n", ok ? "PASS" : "FAIL", tol);
  return ok ? kOk : kNumerical;
}

int run_ablate(const Common& c, const std::string& data_dir, std::size_t seeds) {
  const auto cfg = resolve(c);
  print_config(cfg);
  if (seeds == 0) throw ConfigError("--seeds must be at least 1");
  const data::Dataset ds = data::load_dataset(data_dir);
  check_resolution(cfg.model, ds);
  if (!c.out.empty()) make_dir(c.out);

  std::vector<std::vector<train::AblationRow>> runs;
  for (std::size_t k = 0; k < seeds; ++k) {
    train::TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + k;
    std::map<std::string, std::ofstream> logs;
    runs.push_back(train::ablate(cfg.model, tc, ds, [&](const train::AblationRow& row, const train::EpochRecord& r) {
      std::cout << row.version << " seed " << tc.seed << " " << r.to_json() << "\n" << std::flush;
      if (c.out.empty()) return;
      auto it = logs.find(row.version);
      if (it == logs.end()) {
        std::string file = row.version;
        file.erase(std::remove(file.begin(), file.end(), ' '), file.end());
        for (auto& ch : file) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        file += "_seed" + std::to_string(tc.seed) + ".jsonl";
        it = logs.emplace(row.version, std::ofstream(fs::path(c.out) / file, std::ios::binary)).first;
        if (!it->second) throw IoError("cannot write " + file);
      }
      it->second << r.to_json() << "\n";
    }));
    if (seeds > 1) std::cout << "\nseed " << tc.seed << "\n" << train::ablation_table(runs.back());
  }

  std::string summary = train::ablation_table(runs.front());
  if (seeds > 1) {
    std::vector<train::AblationRow> mean = runs.front();
    for (std::size_t v = 0; v < mean.size(); ++v) {
      double dsc = 0.0, iou = 0.0;
      for (const auto& run : runs) {
        dsc += run[v].result.mean_dsc;
        iou += run[v].result.mean_iou;
      }
      mean[v].result.mean_dsc = dsc / static_cast<double>(seeds);
      mean[v].result.mean_iou = iou / static_cast<double>(seeds);
    }
    summary = train::ablation_table(mean);
    char line[128];
    std::snprintf(line, sizeof line, "Ver 4 - Ver 1 mean DSC over %zu seeds: %+.4f\n", seeds,
                  mean[3].result.mean_dsc - mean[0].result.mean_dsc);
    summary += line;
    std::cout << "\nmean over " << seeds << " seeds\n";
  }
  std::cout << "\n" << summary;
  if (!c.out.empty()) io::write_file(fs::path(c.out) / "ablation.txt", summary);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xLSTM-VMUNet skin-lesion segmentation toolkit"};
  app.require_subcommand(1);

  Common gen, tr, gc, ab;
  std::string data_dir, checkpoint, image, mask, out;
  std::size_t samples = 120, seeds = 1;
  double tol = 1e-4, step = 1e-4;

  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic lesion dataset");
  add_config_flags(gen_cmd, gen);
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train, write metrics.jsonl and the best checkpoint");
  add_config_flags(train_cmd, tr);
  add_training_flags(train_cmd, tr);
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "pooled DSC / IoU of a checkpoint over a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();

  auto* predict_cmd = app.add_subcommand("predict", "write a 0/255 mask for one image");
  predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict_cmd->add_option("--image", image, "input PGM / PPM")->required();
  predict_cmd->add_option("--mask", mask, "ground-truth mask; prints DSC / IoU when given");
  predict_cmd->add_option("--out", out, "output mask path")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full model gradient");
  add_config_flags(grad_cmd, gc);
  grad_cmd->add_option("--samples", samples, "parameter entries to check");
  grad_cmd->add_option("--tol", tol, "maximum relative error");
  grad_cmd->add_option("--step", step, "central difference step");

  auto* ablate_cmd = app.add_subcommand("ablate", "train the four sLSTM / mLSTM variants");
  add_config_flags(ablate_cmd, ab);
  add_training_flags(ablate_cmd, ab);
  ablate_cmd->add_option("--data", data_dir, "dataset directory")->required();
  ablate_cmd->add_option("--out", ab.out, "directory for logs and the table");
  ablate_cmd->add_option("--seeds", seeds, "number of consecutive seeds to average");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr, data_dir);
    if (*eval_cmd) return run_eval(checkpoint, data_dir);
    if (*predict_cmd) return run_predict(checkpoint, image, mask, out);
    if (*grad_cmd) return run_gradcheck(gc, samples, tol, step);
    if (*ablate_cmd) return run_ablate(ab, data_dir, seeds);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

// gmx: dataset generation, training, evaluation, ablations and self-checks.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gmx/ablate.hpp"
#include "gmx/checkpoint.hpp"
#include "gmx/config.hpp"
#include "gmx/dataio.hpp"
#include "gmx/evalkit.hpp"
#include "gmx/trainer.hpp"
#include "gmx/verify.hpp"

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kDiverged = 3, kCheckpoint = 4, kVerify = 5 };

struct ConfigArgs {
  std::optional<std::string> file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "key=value config file");
    cmd->add_option("--set", overrides, "override one setting, e.g. --set mix.lambda_max=0.4")->allow_extra_args(false);
  }
  gmx::RunConfig load() const {
    std::optional<std::filesystem::path> path;
    if (file) path = *file;
    return gmx::load_run_config(path, overrides);
  }
};

std::size_t env_threads() {
  const char* v = std::getenv("GMX_THREADS");
  if (!v || !*v) return 1;
  try {
    const long n = std::stol(v);
    return n > 0 ? static_cast<std::size_t>(n) : 1;
  } catch (const std::exception&) {
    throw gmx::Error(gmx::Errc::InvalidConfig, std::string("GMX_THREADS is not a number: ") + v);
  }
}

gmx::DatasetManifest load_manifest(const gmx::RunConfig& cfg) {
  const auto path = cfg.manifest_path();
  if (!std::filesystem::exists(path)) {
    throw gmx::Error(gmx::Errc::Io, "manifest not found: " + path.string() + " (run `gmx generate` first)");
  }
  return gmx::read_manifest(path);
}

gmx::Split split_from_flag(const std::string& s) {
  if (s == "train") return gmx::Split::Labeled;
  return gmx::parse_split(s);
}

gmx::SegModel load_model(const gmx::RunConfig& cfg, const std::filesystem::path& checkpoint) {
  gmx::SegModel model(cfg.model, 0);
  model.load_tensors(gmx::load_checkpoint(checkpoint));
  return model;
}

int cmd_generate(const ConfigArgs& args) {
  const auto cfg = args.load();
  const auto all = gmx::generate_shapes(cfg.shapes, cfg.data_dir);
  const auto split = gmx::split_manifest(all, cfg.labeled_fraction, cfg.val_count, cfg.shapes.seed);
  gmx::write_manifest(cfg.manifest_path(), split);
  std::printf("manifest: %s\n", cfg.manifest_path().c_str());
  std::printf("labeled=%zu unlabeled=%zu val=%zu size=%zu\n", split.count(gmx::Split::Labeled),
              split.count(gmx::Split::Unlabeled), split.count(gmx::Split::Val), cfg.shapes.size);
  return kOk;
}

int cmd_train(const ConfigArgs& args) {
  const auto cfg = args.load();
  const auto manifest = load_manifest(cfg);
  const auto data = gmx::load_train_data(manifest);
  std::filesystem::create_directories(cfg.run_dir);
  gmx::write_file_bytes(cfg.run_dir / "config.txt", gmx::format_run_config(cfg));

  gmx::RunOutputs outputs;
  outputs.checkpoint = cfg.run_dir / "model.ckpt";
  outputs.metrics_csv = cfg.run_dir / "metrics.csv";
  outputs.on_step = [](const gmx::StepMetrics& m) {
    if (!m.val_miou) return;
    std::printf("iter %zu lr=%.3e sup=%.4f unsup=%.4f cls=%.4f w=%.3f val_miou=%.4f\n", m.iter + 1, m.lr,
                m.loss_sup, m.loss_unsup, m.loss_cls, m.weight_unsup, *m.val_miou);
    std::fflush(stdout);
  };
  const auto result = gmx::run_training(cfg.model, cfg.train, data, outputs);
  std::printf("checkpoint: %s\nmetrics: %s\n", outputs.checkpoint->c_str(), outputs.metrics_csv->c_str());
  std::printf("final val mIoU: %.17g\n", result.final_val_miou);
  return kOk;
}

int cmd_eval(const ConfigArgs& args, const std::optional<std::string>& checkpoint, const std::string& split,
             bool tta, const std::optional<std::string>& out) {
  const auto cfg = args.load();
  const auto which = split_from_flag(split);
  const auto manifest = load_manifest(cfg);
  auto model = load_model(cfg, checkpoint ? std::filesystem::path(*checkpoint) : cfg.run_dir / "model.ckpt");
  const auto samples = gmx::load_split(manifest, which, true);
  const auto result = gmx::miou(gmx::evaluate(model, samples, tta));
  const std::string report = gmx::format_report(result, manifest.class_names);
  if (out) gmx::write_file_bytes(*out, report);
  std::cout << report;
  return kOk;
}

int cmd_verify(bool corrupt_conv) {
  gmx::VerifyOptions options;
  options.corrupt_conv_backward = corrupt_conv;
  const auto report = gmx::run_verify(options);
  std::cout << report.format();
  if (report.passed()) return kOk;
  std::cerr << "failed:";
  for (const auto& name : report.failures()) std::cerr << ' ' << name;
  std::cerr << '\n';
  return kVerify;
}

int cmd_ablate(const ConfigArgs& args) {
  const auto cfg = args.load();
  const auto manifest = load_manifest(cfg);
  const std::size_t threads = env_threads();
  gmx::AblationOptions options;
  options.threads = threads;
  options.out_dir = cfg.run_dir;
  options.on_run = [](const gmx::AblationRun& r) {
    if (r.error.empty()) {
      std::printf("done %s seed %llu: val_miou=%.4f pseudo %.4f -> %.4f\n", r.row.c_str(),
                  static_cast<unsigned long long>(r.seed), *r.val_miou, *r.pseudo_initial, *r.pseudo_final);
    } else {
      std::printf("failed %s seed %llu: %s\n", r.row.c_str(), static_cast<unsigned long long>(r.seed), r.error.c_str());
    }
    std::fflush(stdout);
  };
  std::filesystem::create_directories(cfg.run_dir);
  gmx::write_file_bytes(cfg.run_dir / "config.txt", gmx::format_run_config(cfg));
  const auto table = gmx::run_ablation(cfg, manifest, options);
  gmx::write_file_bytes(cfg.run_dir / "ablation_runs.csv", table.runs_csv());
  gmx::write_file_bytes(cfg.run_dir / "ablation_summary.csv", table.summary_csv());
  std::cout << table.pretty();
  std::printf("tables: %s\n", (cfg.run_dir / "ablation_summary.csv").c_str());
  return table.complete() ? kOk : kDiverged;
}

int cmd_plot(const ConfigArgs& args, const std::optional<std::string>& checkpoint, const std::string& split,
             std::size_t count, const std::optional<std::string>& out) {
  const auto cfg = args.load();
  const auto manifest = load_manifest(cfg);
  auto model = load_model(cfg, checkpoint ? std::filesystem::path(*checkpoint) : cfg.run_dir / "model.ckpt");
  auto samples = gmx::load_split(manifest, split_from_flag(split), true);
  if (samples.size() > count) samples.resize(count);
  std::vector<gmx::Mask> preds;
  for (const auto& s : samples) preds.push_back(gmx::argmax_labels(gmx::predict(model, s.image)));
  const std::filesystem::path path = out ? std::filesystem::path(*out) : cfg.run_dir / "predictions.ppm";
  gmx::write_ppm(path, gmx::render_comparison(samples, preds, cfg.model.num_classes));
  std::printf("wrote %s (columns: image | ground truth | prediction)\n", path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gmx: semi-supervised segmentation with guided mixing on synthetic shapes"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, eval_args, ablate_args, plot_args;
  auto* gen = app.add_subcommand("generate", "render the shapes dataset and write the split manifest");
  gen_args.attach(gen);

  auto* train = app.add_subcommand("train", "train one model; writes model.ckpt and metrics.csv to run.dir");
  train_args.attach(train);

  std::optional<std::string> eval_ckpt, eval_out, plot_ckpt, plot_out;
  std::string eval_split = "val", plot_split = "val";
  bool tta = false;
  auto* eval = app.add_subcommand("eval", "per-class IoU and mIoU of a checkpoint");
  eval_args.attach(eval);
  eval->add_option("--checkpoint", eval_ckpt, "defaults to <run.dir>/model.ckpt");
  eval->add_option("--split", eval_split, "val | labeled | unlabeled")->check(CLI::IsMember({"val", "labeled", "unlabeled", "train"}));
  eval->add_flag("--tta", tta, "average with the horizontally flipped prediction");
  eval->add_option("--out", eval_out, "also write the report CSV here");

  bool corrupt = false;
  auto* verify = app.add_subcommand("verify", "gradient checks and property suites");
  verify->add_flag("--corrupt-conv-backward", corrupt, "negative control: perturb the conv weight gradient");

  auto* ablate = app.add_subcommand("ablate", "run the 6-row ablation matrix over ablate.seeds seeds");
  ablate_args.attach(ablate);

  std::size_t plot_count = 8;
  auto* plot = app.add_subcommand("plot", "render image | ground truth | prediction tiles to a PPM");
  plot_args.attach(plot);
  plot->add_option("--checkpoint", plot_ckpt, "defaults to <run.dir>/model.ckpt");
  plot->add_option("--split", plot_split, "val | labeled | unlabeled")->check(CLI::IsMember({"val", "labeled", "unlabeled", "train"}));
  plot->add_option("--count", plot_count, "number of samples")->check(CLI::PositiveNumber);
  plot->add_option("--out", plot_out, "defaults to <run.dir>/predictions.ppm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(gen_args);
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args, eval_ckpt, eval_split, tta, eval_out);
    if (*verify) return cmd_verify(corrupt);
    if (*ablate) return cmd_ablate(ablate_args);
    if (*plot) return cmd_plot(plot_args, plot_ckpt, plot_split, plot_count, plot_out);
  } catch (const gmx::DivergedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const gmx::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == gmx::Errc::CheckpointMismatch ? kCheckpoint : kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kConfig;
}

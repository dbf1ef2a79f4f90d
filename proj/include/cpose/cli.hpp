#pragma once

// Command-line front end. `run` is the whole program minus process exit, so
// tests can drive it with argument vectors and captured streams.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "cpose/augment.hpp"
#include "cpose/dataset.hpp"
#include "cpose/dataset_io.hpp"
#include "cpose/evaluator.hpp"
#include "cpose/gradcheck_suite.hpp"
#include "cpose/network.hpp"
#include "cpose/trainer.hpp"
#include "cpose/weights_io.hpp"

namespace cpose::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kFailure = 2 };

inline constexpr const char* kCheckpointFile = "checkpoint.cpck";
inline constexpr const char* kWeightsFile = "weights.cpsp";
inline constexpr const char* kLogFile = "train_log.tsv";

/// `key = value` lines; blank lines and lines starting with '#' are skipped.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CLI::ValidationError("--config", "cannot read config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t n = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("--config", path.string() + ":" + std::to_string(n) + ": expected key = value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

/// Splices config-file entries into the argument list as long flags unless
/// the same flag was given explicitly.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end()) return args;
  if (it + 1 == args.end()) throw CLI::ArgumentMismatch("--config needs a file path");
  const std::filesystem::path path = *(it + 1);
  args.erase(it, it + 2);
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));
  for (const auto& [key, value] : read_config_file(path)) {
    const std::string flag = "--" + key;
    if (given.count(flag)) continue;
    if (value == "true") {
      args.push_back(flag);
    } else if (value != "false") {
      args.push_back(flag);
      args.push_back(value);
    }
  }
  return args;
}

inline NetworkSpec spec_for_images(const std::string& net, const Dataset& ds) {
  if (net != "auto") return spec_from_name(net);
  if (ds.empty()) throw std::invalid_argument("cannot infer network input size from an empty dataset");
  const Shape& s = ds.samples[0].image.shape();
  if (s[1] != s[2]) throw std::invalid_argument("automatic network choice needs square images; pass --net");
  return scaled_spec(4, s[1]);
}

/// Weights from either a bare weight file or a training checkpoint (its
/// best-validation weights), matched by name.
template <typename T>
LoadReport load_pretrained(PoseNetwork<T>& net, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) return load_weights(net.parameters(), path);
  const PoseNetwork<T> src = Trainer<T>::resume(path, TrainConfig{}).best_network();
  const std::filesystem::path tmp =
      std::filesystem::temp_directory_path() / ("cpose_pretrained_" + std::to_string(std::hash<std::string>{}(path.string())));
  save_weights(src.parameters(), tmp);
  LoadReport report = load_weights(net.parameters(), tmp);
  std::filesystem::remove(tmp);
  return report;
}

/// Network to evaluate from a checkpoint or weight file.
inline PoseNetwork<double> load_network(const std::filesystem::path& path, const std::string& net_name,
                                        const Dataset& ds) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) == 0) return Trainer<double>::resume(path, TrainConfig{}).best_network();
  auto net = PoseNetwork<double>::build(spec_for_images(net_name, ds));
  const LoadReport r = load_weights(net.parameters(), path);
  if (!r.not_in_file.empty()) throw CheckpointError(path.string() + " lacks parameter " + r.not_in_file.front());
  return net;
}

inline std::string describe_subcommand_flags(const CLI::App& app) { return app.help(); }

struct Options {
  // synth
  std::uint64_t seed = 0;
  std::size_t frames = 2000;
  std::size_t size = 64;
  std::string trajectory = "smooth_loop";
  std::string out;
  std::size_t augment_per_frame = 0;
  std::uint64_t augment_seed = 0;
  std::size_t threads = 1;
  // train
  std::string data;
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 0.001;
  double lr_decay = 0.95;
  std::string beta = "250";
  std::string pretrained;
  std::string resume;
  std::string net = "auto";
  double split = 0.7;
  std::size_t patience = 10;
  std::size_t pilot_epochs = 2;
  // eval / export
  std::string ckpt;
  std::string report = "text";
  std::string subset = "all";
  bool align = false;
  std::string traj;
  std::string gt;
  std::string format = "csv";
  // gradcheck / bench
  std::string precision = "double";
  std::size_t instances = 100;
  double eps = 0.0;
  std::size_t warmup = 10;
};

inline Dataset select_subset(const Dataset& ds, const std::string& subset, double split) {
  if (subset == "all") return ds;
  auto [train, val] = split_dataset(ds, split);
  return subset == "train" ? train : val;
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  SynthOptions so;
  so.height = so.width = o.size;
  so.trajectory = trajectory_kind_from_string(o.trajectory);
  so.threads = o.threads;
  Dataset ds = generate_synthetic_dataset(o.seed, o.frames, so);
  if (o.augment_per_frame) {
    AugmentationSpec spec;
    spec.seed = o.augment_seed;
    ds = expand_with_augmentations(ds, spec, o.augment_per_frame);
    // Augmented copies share frame indices, so they go to a sibling set.
  }
  if (o.augment_per_frame) {
    const std::size_t n = o.frames;
    Dataset raw;
    raw.info = ds.info;
    raw.samples.assign(ds.samples.begin(), ds.samples.begin() + static_cast<std::ptrdiff_t>(n));
    save_dataset(raw, o.out);
    for (std::size_t d = 1; d <= o.augment_per_frame; ++d) {
      Dataset part;
      part.info = ds.info;
      part.samples.assign(ds.samples.begin() + static_cast<std::ptrdiff_t>(d * n),
                          ds.samples.begin() + static_cast<std::ptrdiff_t>((d + 1) * n));
      save_dataset(part, std::filesystem::path(o.out) / ("augmented_" + std::to_string(d)));
    }
    out << "wrote " << n << " frames and " << n * o.augment_per_frame << " augmented copies to " << o.out << "\n";
  } else {
    save_dataset(ds, o.out);
    out << "wrote " << ds.size() << " frames to " << o.out << "\n";
  }
  return kOk;
}

/// Training frames: the dataset itself plus any augmented_<k> sub-datasets.
inline Dataset with_augmented_copies(const Dataset& train, const std::filesystem::path& dir, std::size_t n_train) {
  Dataset out = train;
  for (std::size_t d = 1;; ++d) {
    const auto sub = dir / ("augmented_" + std::to_string(d));
    if (!std::filesystem::exists(sub / "manifest.txt")) break;
    const Dataset aug = load_dataset(sub);
    out.samples.insert(out.samples.end(), aug.samples.begin(),
                       aug.samples.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, aug.size())));
    out.info.lineage.insert(out.info.lineage.end(), aug.info.lineage.begin(), aug.info.lineage.end());
  }
  return out;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  const Dataset ds = load_dataset(o.data);
  auto [train_ds, val_ds] = split_dataset(ds, o.split);
  train_ds = with_augmented_copies(train_ds, o.data, train_ds.size());

  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.base_lr = o.lr;
  cfg.lr_decay = o.lr_decay;
  cfg.early_stop_patience = o.patience;
  cfg.pilot_epochs = o.pilot_epochs;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  if (o.beta == "auto") {
    cfg.beta.reset();
  } else {
    cfg.beta = std::stod(o.beta);
  }
  std::filesystem::create_directories(o.out);
  cfg.log_path = std::filesystem::path(o.out) / kLogFile;

  std::optional<Trainer<double>> trainer;
  if (!o.resume.empty()) {
    trainer.emplace(Trainer<double>::resume(o.resume, cfg));
    out << "resumed from " << o.resume << " at epoch " << trainer->state().next_epoch << "\n";
  } else {
    auto net = PoseNetwork<double>::build(spec_for_images(o.net, ds), o.seed);
    if (!o.pretrained.empty()) {
      const LoadReport r = load_pretrained(net, o.pretrained);
      out << "pretrained: loaded " << r.loaded.size() << " tensors, " << r.not_in_file.size()
          << " kept their initialization, " << r.unused.size() << " unused\n";
      net.set_lr_schedule(transfer_schedule());
    }
    trainer.emplace(std::move(net), cfg);
  }
  trainer->run(train_ds, val_ds);
  trainer->save_checkpoint(std::filesystem::path(o.out) / kCheckpointFile);
  save_weights(trainer->best_network().parameters(), std::filesystem::path(o.out) / kWeightsFile);
  const LossCurve& c = trainer->curve();
  out << "trained " << c.size() << " epochs (beta " << trainer->state().beta << ")";
  if (!c.empty()) {
    out << ", train loss " << c.epochs.front().train_total() << " -> " << c.epochs.back().train_total()
        << ", best val loss " << trainer->state().best_val;
  }
  if (trainer->state().stopped) out << ", stopped early";
  out << "\n";
  return kOk;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  const Dataset ds = select_subset(load_dataset(o.data), o.subset, o.split);
  const PoseNetwork<double> net = load_network(o.ckpt, o.net, ds);
  const Trajectory gt = Trajectory::from_dataset(ds);
  const Trajectory pred = predict_trajectory(net, ds);
  if (o.report == "csv" || o.report == "svg") {
    if (o.out.empty()) throw CLI::RequiredError("--out is required for csv and svg reports");
    export_trajectory(pred, o.out, export_format_from_string(o.report), &gt);
    out << "wrote " << o.report << " to " << o.out << "\n";
    return kOk;
  }
  const std::string text = metrics_report(per_axis_errors(pred, gt), trajectory_rmse(pred, gt, o.align),
                                          bounding_box_diagonal(gt));
  if (o.out.empty()) {
    out << text;
  } else {
    write_text_file(o.out, text);
  }
  return kOk;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out) {
  const bool dbl = o.precision == "double";
  const std::vector<OperatorCheck> results = dbl ? run_gradient_suite<double>(o.instances, o.seed, o.eps > 0 ? o.eps : 1e-5)
                                                 : run_precision_suite(o.instances, o.seed);
  out << (dbl ? "finite differences, double precision\n" : "float gradients against double gradients\n");
  bool ok = true;
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %9s %14s %11s  %s\n", "operator", "instances", "max_rel_error", "threshold",
                "status");
  out << line;
  for (const auto& r : results) {
    ok = ok && r.passed();
    std::snprintf(line, sizeof(line), "%-16s %9zu %14.3e %11.0e  %s\n", r.name.c_str(), r.instances,
                  r.max_relative_error, r.threshold(), r.passed() ? "ok" : "FAIL");
    out << line;
  }
  return ok ? kOk : kFailure;
}

struct BenchStats {
  double mean = 0, median = 0, stddev = 0, min = 0, max = 0;
  double cv() const { return mean > 0 ? stddev / mean : 0.0; }
};

inline BenchStats summarize(std::vector<double> ms) {
  BenchStats s;
  std::sort(ms.begin(), ms.end());
  const double n = static_cast<double>(ms.size());
  s.mean = std::accumulate(ms.begin(), ms.end(), 0.0) / n;
  s.median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  double var = 0;
  for (double v : ms) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / n);
  s.min = ms.front();
  s.max = ms.back();
  return s;
}

/// Per-frame single-image forward latency in milliseconds.
template <typename T>
std::vector<double> time_forward(const PoseNetwork<T>& net, const std::vector<Tensor<double>>& images,
                                 std::size_t frames, std::size_t warmup) {
  std::vector<Tensor<T>> batch;
  for (const auto& img : images) {
    Tensor<T> x(Shape{1, img.dim(0), img.dim(1), img.dim(2)});
    for (std::size_t i = 0; i < img.numel(); ++i) x[i] = static_cast<T>(img[i]);
    batch.push_back(std::move(x));
  }
  std::vector<double> ms;
  for (std::size_t i = 0; i < warmup + frames; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto poses = forward_pose(net, batch[i % batch.size()]);
    const auto t1 = std::chrono::steady_clock::now();
    if (poses.size() != 1) throw std::logic_error("forward pass returned no pose");
    if (i >= warmup) ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return ms;
}

inline int cmd_bench(const Options& o, std::ostream& out) {
  SynthOptions so;
  so.height = so.width = o.size;
  const Dataset frames = generate_synthetic_dataset(o.seed, 8, so);
  std::vector<Tensor<double>> images;
  for (const auto& s : frames.samples) images.push_back(s.image);
  PoseNetwork<double> net = o.ckpt.empty() ? PoseNetwork<double>::build(scaled_spec(4, o.size), o.seed)
                                           : load_network(o.ckpt, o.net, frames);
  if (net.spec().input.height != o.size) throw std::invalid_argument("--size does not match the checkpoint's network input");
  std::vector<double> ms;
  if (o.precision == "float") {
    PoseNetwork<float> fnet = PoseNetwork<float>::build(net.spec());
    for (auto& p : fnet.parameters().entries()) p.value = net.parameters().at(p.name).value.cast<float>();
    ms = time_forward(fnet, images, o.frames, o.warmup);
  } else {
    ms = time_forward(net, images, o.frames, o.warmup);
  }
  const BenchStats s = summarize(ms);
  char line[256];
  std::snprintf(line, sizeof(line),
                "network %s, %s precision, %zu frames, single-threaded\n"
                "mean %.3f ms  median %.3f ms  stddev %.3f ms  cv %.3f  min %.3f ms  max %.3f ms\n",
                net.spec().name.c_str(), o.precision.c_str(), o.frames, s.mean, s.median, s.stddev, s.cv(), s.min,
                s.max);
  out << line;
  return kOk;
}

inline int cmd_export(const Options& o, std::ostream& out) {
  Trajectory traj;
  std::optional<Trajectory> gt;
  if (!o.traj.empty()) {
    traj = load_trajectory_csv(o.traj);
  } else {
    if (o.ckpt.empty() || o.data.empty()) throw CLI::RequiredError("export needs --traj, or --ckpt with --data");
    const Dataset ds = select_subset(load_dataset(o.data), o.subset, o.split);
    traj = predict_trajectory(load_network(o.ckpt, o.net, ds), ds);
    gt = Trajectory::from_dataset(ds);
  }
  if (!o.gt.empty()) gt = load_trajectory_csv(o.gt);
  export_trajectory(traj, o.out, export_format_from_string(o.format), gt ? &*gt : nullptr);
  out << "wrote " << traj.size() << " poses to " << o.out << "\n";
  return kOk;
}

/// Runs one command line (without the program name).
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Camera pose regression toolkit", "cpose"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  // --config is consumed before parsing; declared here so help lists it.
  std::string config_unused;
  app.add_option("--config", config_unused, "File of `flag = value` lines; explicit flags win");

  const auto positive = CLI::PositiveNumber;

  auto* synth = app.add_subcommand("synth", "Render a synthetic pose-labelled dataset");
  synth->add_option("--seed", o.seed, "Trajectory seed")->capture_default_str();
  synth->add_option("--frames", o.frames, "Number of frames (>= 2)")->capture_default_str()->check(CLI::Range(2, 100000000));
  synth->add_option("--size", o.size, "Square image size in pixels")->capture_default_str()->check(positive);
  synth->add_option("--trajectory", o.trajectory, "Camera path")
      ->capture_default_str()
      ->check(CLI::IsMember({"smooth_loop", "fast_rotation", "large_translation"}));
  synth->add_option("--out", o.out, "Output dataset directory")->required();
  synth->add_option("--augment", o.augment_per_frame, "Distorted copies per frame (stored as augmented_<k>/)")
      ->capture_default_str();
  synth->add_option("--augment-seed", o.augment_seed, "Seed for distortion draws")->capture_default_str();
  synth->add_option("--threads", o.threads, "Rendering threads (output does not depend on it)")
      ->capture_default_str()
      ->check(positive);

  auto* train = app.add_subcommand("train", "Train the pose network on a dataset directory");
  train->add_option("--data", o.data, "Dataset directory")->required();
  train->add_option("--out", o.out, "Output directory for checkpoint, weights and log")->required();
  train->add_option("--epochs", o.epochs, "Total epochs")->capture_default_str();
  train->add_option("--batch", o.batch, "Mini-batch size")->capture_default_str()->check(positive);
  train->add_option("--lr", o.lr, "Base learning rate")->capture_default_str()->check(positive);
  train->add_option("--lr-decay", o.lr_decay, "Per-epoch learning-rate factor")->capture_default_str();
  train->add_option("--beta", o.beta, "Rotation balance, or `auto` for a pilot-run estimate")->capture_default_str();
  train->add_option("--pretrained", o.pretrained, "Weights or checkpoint to start from (enables the transfer schedule)");
  train->add_option("--resume", o.resume, "Checkpoint to continue");
  train->add_option("--net", o.net, "auto, reference or scaled:<divisor>:<size>")->capture_default_str();
  train->add_option("--split", o.split, "Leading fraction of frames used for training")->capture_default_str();
  train->add_option("--patience", o.patience, "Early-stopping patience in epochs")->capture_default_str()->check(positive);
  train->add_option("--pilot-epochs", o.pilot_epochs, "Epochs of the beta pilot run")->capture_default_str();
  train->add_option("--seed", o.seed, "Initialization and shuffling seed")->capture_default_str();
  train->add_option("--threads", o.threads, "Worker threads per step; 1 is bitwise reproducible")
      ->capture_default_str()
      ->check(positive);

  auto* eval = app.add_subcommand("eval", "Evaluate a trained network against dataset ground truth");
  eval->add_option("--ckpt", o.ckpt, "Checkpoint or weight file")->required();
  eval->add_option("--data", o.data, "Dataset directory")->required();
  eval->add_option("--report", o.report, "text, csv or svg")->capture_default_str()->check(CLI::IsMember({"text", "csv", "svg"}));
  eval->add_option("--out", o.out, "Report file (stdout for text when omitted)");
  eval->add_option("--subset", o.subset, "all, train or val")->capture_default_str()->check(CLI::IsMember({"all", "train", "val"}));
  eval->add_option("--split", o.split, "Train fraction used by --subset")->capture_default_str();
  eval->add_flag("--align", o.align, "Rigidly align prediction to ground truth before RMSE");
  eval->add_option("--net", o.net, "Network for bare weight files")->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operator");
  grad->add_option("--precision", o.precision, "double or float")->capture_default_str()->check(CLI::IsMember({"double", "float"}));
  grad->add_option("--instances", o.instances, "Random instances per operator")->capture_default_str()->check(positive);
  grad->add_option("--seed", o.seed, "Instance seed")->capture_default_str();
  grad->add_option("--eps", o.eps, "Central-difference step for double precision");

  auto* bench = app.add_subcommand("bench", "Single-image forward latency");
  bench->add_option("--ckpt", o.ckpt, "Checkpoint or weight file (random weights when omitted)");
  bench->add_option("--size", o.size, "Square input size")->capture_default_str()->check(positive);
  bench->add_option("--frames", o.frames, "Timed frames (>= 100)")->default_val(100)->capture_default_str()->check(CLI::Range(100, 100000000));
  bench->add_option("--warmup", o.warmup, "Untimed frames before measuring")->capture_default_str();
  bench->add_option("--precision", o.precision, "double or float")->capture_default_str()->check(CLI::IsMember({"double", "float"}));
  bench->add_option("--seed", o.seed, "Seed for weights and frames")->capture_default_str();
  bench->add_option("--net", o.net, "Network for bare weight files")->capture_default_str();

  auto* exp = app.add_subcommand("export", "Write a trajectory as CSV or an SVG plot");
  exp->add_option("--traj", o.traj, "Trajectory CSV to convert");
  exp->add_option("--ckpt", o.ckpt, "Predict the trajectory with this network instead");
  exp->add_option("--data", o.data, "Dataset for --ckpt predictions (also the plotted ground truth)");
  exp->add_option("--gt", o.gt, "Ground-truth CSV to overlay in SVG plots");
  exp->add_option("--format", o.format, "csv or svg")->capture_default_str()->check(CLI::IsMember({"csv", "svg"}));
  exp->add_option("--out", o.out, "Output file")->required();
  exp->add_option("--subset", o.subset, "all, train or val")->capture_default_str()->check(CLI::IsMember({"all", "train", "val"}));
  exp->add_option("--split", o.split, "Train fraction used by --subset")->capture_default_str();
  exp->add_option("--net", o.net, "Network for bare weight files")->capture_default_str();

  try {
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kOk;
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(o, out);
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*grad) return cmd_gradcheck(o, out);
    if (*bench) return cmd_bench(o, out);
    if (*exp) return cmd_export(o, out);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace cpose::cli

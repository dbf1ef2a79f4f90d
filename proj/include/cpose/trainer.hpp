#pragma once

#include <cmath>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cpose/adam.hpp"
#include "cpose/dataset.hpp"
#include "cpose/loss.hpp"
#include "cpose/network.hpp"
#include "cpose/weights_io.hpp"

namespace cpose {

/// Schedule used when starting from pretrained weights: the stem barely
/// moves, the inception blocks and the head train at the full rate.
inline std::vector<std::pair<std::string, double>> transfer_schedule() {
  return {{"@stem", 0.1}, {"@inception", 1.0}, {"@head", 1.0}};
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double base_lr = 0.001;
  double lr_decay = 0.95;
  /// Rotation balance; empty selects it from a short pilot run.
  std::optional<double> beta = 250.0;
  std::size_t pilot_epochs = 2;
  std::size_t early_stop_patience = 10;
  std::uint64_t seed = 0;
  /// Worker threads per step. Results are reproducible for a fixed count;
  /// only 1 matches the sequential reduction order exactly.
  std::size_t threads = 1;
  std::filesystem::path log_path;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("base learning rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr decay must lie in (0, 1]");
    if (beta && !(*beta > 0.0)) throw std::invalid_argument("beta must be positive");
    if (threads == 0) throw std::invalid_argument("thread count must be at least 1");
    if (early_stop_patience == 0) throw std::invalid_argument("early-stop patience must be at least 1");
  }

  double lr_at(std::size_t epoch) const { return base_lr * std::pow(lr_decay, static_cast<double>(epoch)); }
};

/// Rotation entries are beta-weighted, so train_t + train_r is the loss.
struct EpochRecord {
  double train_t = 0, train_r = 0, val_t = 0, val_r = 0, lr = 0;
  double train_total() const { return train_t + train_r; }
  double val_total() const { return val_t + val_r; }
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct LossCurve {
  std::vector<EpochRecord> epochs;
  std::size_t size() const { return epochs.size(); }
  bool empty() const { return epochs.empty(); }
  friend bool operator==(const LossCurve&, const LossCurve&) = default;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
Tensor<T> stack_images(const Dataset& ds, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  const Shape& one = ds.samples.at(idx[begin]).image.shape();
  const std::size_t stride = shape_numel(one);
  Tensor<T> out(Shape{end - begin, one[0], one[1], one[2]});
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor<double>& img = ds.samples[idx[i]].image;
    if (img.shape() != one) throw ShapeError("dataset images differ in shape");
    for (std::size_t k = 0; k < stride; ++k) out[(i - begin) * stride + k] = static_cast<T>(img[k]);
  }
  return out;
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

/// Sum of the per-sample translation and weighted rotation terms.
struct LossSums {
  double t = 0, r = 0;
};

}  // namespace detail

/// Mean translation loss and mean beta-weighted rotation loss over `ds`;
/// no parameter is touched.
template <typename T>
std::pair<double, double> evaluate_epoch(const PoseNetwork<T>& net, const Dataset& ds, double beta,
                                         std::size_t batch = 64) {
  if (ds.empty()) throw std::invalid_argument("evaluate_epoch: empty dataset");
  const auto idx = detail::iota(ds.size());
  double t = 0, r = 0;
  for (std::size_t b = 0; b < ds.size(); b += batch) {
    const std::size_t e = std::min(ds.size(), b + batch);
    const auto poses = forward_pose(net, detail::stack_images<T>(ds, idx, b, e));
    for (std::size_t i = b; i < e; ++i) {
      const Pose target{ds.samples[i].pose.translation, canonicalize(ds.samples[i].pose.rotation)};
      t += translation_error(poses[i - b], target);
      r += beta * rotation_error(poses[i - b], target);
    }
  }
  const double n = static_cast<double>(ds.size());
  return {t / n, r / n};
}

/// Batch order of one epoch; a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order = detail::iota(n);
  Rng rng(keyed_seed(seed, {4, epoch}));
  rng.shuffle(order);
  return order;
}

template <typename T>
struct TrainState {
  AdamState<T> adam;
  std::uint64_t seed = 0;
  std::size_t next_epoch = 0;
  double beta = 250.0;
  LossCurve curve;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_best = 0;
  bool stopped = false;
  std::optional<ParameterStore<T>> best;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

inline constexpr char kCheckpointMagic[4] = {'C', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Drives epochs over a network it owns. Interrupting between epochs and
/// continuing from a checkpoint reproduces an uninterrupted run bitwise.
template <typename T>
class Trainer {
 public:
  Trainer(PoseNetwork<T> net, TrainConfig config) : net_(std::move(net)), config_(std::move(config)) {
    config_.validate();
    state_.seed = config_.seed;
    state_.adam.alpha = config_.base_lr;
    if (config_.beta) state_.beta = *config_.beta;
  }

  const PoseNetwork<T>& network() const { return net_; }
  PoseNetwork<T>& network() { return net_; }
  const TrainState<T>& state() const { return state_; }
  const LossCurve& curve() const { return state_.curve; }
  const TrainConfig& config() const { return config_; }
  void set_config(TrainConfig c) {
    c.validate();
    config_ = std::move(c);
  }

  /// Picks beta from a pilot run when the config asks for it. The pilot
  /// trains a throwaway copy and leaves this trainer untouched.
  void resolve_beta(const Dataset& train, const Dataset& val) {
    if (config_.beta || state_.next_epoch > 0 || config_.epochs == 0) return;
    TrainConfig pilot = config_;
    pilot.beta = 250.0;
    pilot.epochs = std::max<std::size_t>(1, config_.pilot_epochs);
    pilot.log_path.clear();
    Trainer probe(net_, pilot);
    probe.run(train, val);
    const auto [t, r] = evaluate_epoch(probe.net_, val, 1.0);
    state_.beta = select_beta(t, r);
  }

  /// Trains until `config.epochs` have been completed in total or early
  /// stopping triggers.
  void run(const Dataset& train, const Dataset& val) {
    if (train.empty()) throw std::invalid_argument("training set is empty");
    if (val.empty()) throw std::invalid_argument("validation set is empty");
    resolve_beta(train, val);
    std::ofstream log;
    if (!config_.log_path.empty()) {
      log.open(config_.log_path, state_.next_epoch == 0 ? std::ios::trunc : std::ios::app);
      if (!log) throw std::runtime_error("cannot open training log " + config_.log_path.string());
    }
    while (!state_.stopped && state_.next_epoch < config_.epochs) {
      EpochRecord rec = train_epoch(train, state_.next_epoch);
      const auto [vt, vr] = evaluate_epoch(net_, val, state_.beta, config_.batch_size);
      rec.val_t = vt;
      rec.val_r = vr;
      state_.curve.epochs.push_back(rec);
      if (log) {
        log << state_.next_epoch + 1 << '\t' << rec.train_t << '\t' << rec.train_r << '\t' << rec.val_t << '\t'
            << rec.val_r << '\t' << rec.lr << '\n';
        log.flush();
      }
      ++state_.next_epoch;
      if (rec.val_total() < state_.best_val) {
        state_.best_val = rec.val_total();
        state_.best = net_.parameters();
        state_.epochs_since_best = 0;
      } else if (++state_.epochs_since_best >= config_.early_stop_patience) {
        state_.stopped = true;
      }
    }
  }

  /// The network carrying the weights with the lowest validation loss seen
  /// so far (the current weights if no epoch has run).
  PoseNetwork<T> best_network() const {
    PoseNetwork<T> out = net_;
    if (state_.best) {
      for (auto& p : out.parameters().entries()) p.value = state_.best->at(p.name).value;
    }
    return out;
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_checkpoint(os);
    if (!os) throw std::runtime_error("write failed: " + path.string());
  }

  /// Restores network, optimizer and progress; `config` supplies the
  /// remaining run settings (epochs, log path, threads).
  static Trainer resume(const std::filesystem::path& path, TrainConfig config) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
    return read_checkpoint(is, std::move(config));
  }

 private:
  EpochRecord train_epoch(const Dataset& train, std::size_t epoch) {
    EpochRecord rec;
    rec.lr = config_.lr_at(epoch);
    state_.adam.alpha = rec.lr;
    const auto order = epoch_order(state_.seed, epoch, train.size());
    const double loss_weight = pose_loss_weight();
    std::size_t step = 0;
    for (std::size_t b = 0; b < order.size(); b += config_.batch_size, ++step) {
      const std::size_t e = std::min(order.size(), b + config_.batch_size);
      detail::LossSums sums;
      GradientMap<T> grads = batch_gradients(train, order, b, e, loss_weight, sums);
      if (!std::isfinite(sums.t) || !std::isfinite(sums.r)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(step + 1));
      }
      try {
        adam_step(state_.adam, net_.parameters(), grads);
      } catch (const NonFiniteGradient& err) {
        throw TrainingDiverged(std::string(err.what()) + " at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(step + 1));
      }
      rec.train_t += sums.t;
      rec.train_r += sums.r;
    }
    rec.train_t /= static_cast<double>(train.size());
    rec.train_r /= static_cast<double>(train.size());
    return rec;
  }

  double pose_loss_weight() const {
    for (const auto& [name, w] : net_.spec().loss_weights)
      if (name == "pose_loss") return w;
    return 1.0;
  }

  /// Gradient of the weighted batch loss (sum of per-sample losses). With
  /// several threads the batch is cut into contiguous chunks whose
  /// gradients are added in chunk order.
  GradientMap<T> batch_gradients(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t b,
                                 std::size_t e, double loss_weight, detail::LossSums& sums) {
    const std::size_t workers = std::min(config_.threads, e - b);
    std::vector<GradientMap<T>> parts(workers);
    std::vector<detail::LossSums> part_sums(workers);
    std::vector<std::exception_ptr> errors(workers);
    const auto work = [&](std::size_t w) {
      try {
        const std::size_t lo = b + (e - b) * w / workers, hi = b + (e - b) * (w + 1) / workers;
        Graph<T> g(&net_.parameters());
        const NodeId x = g.input(detail::stack_images<T>(ds, order, lo, hi), "images");
        std::vector<Pose> targets;
        for (std::size_t i = lo; i < hi; ++i) targets.push_back(ds.samples[order[i]].pose);
        const NodeId y = g.input(pose_targets<T>(targets), "targets");
        const PoseLossNodes loss = pose_loss(g, net_.forward(g, x), y, PoseLossSpec{state_.beta});
        const NodeId top = aggregate_weighted_loss(g, {{loss.total, loss_weight}});
        for (T v : g.value(loss.translation).data()) part_sums[w].t += static_cast<double>(v);
        for (T v : g.value(loss.rotation).data()) part_sums[w].r += state_.beta * static_cast<double>(v);
        parts[w] = g.backward(top);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
      for (auto& t : pool) t.join();
    }
    for (const auto& err : errors)
      if (err) std::rethrow_exception(err);
    GradientMap<T> total = std::move(parts[0]);
    for (std::size_t w = 1; w < workers; ++w) {
      for (auto& [name, g] : total) {
        const Tensor<T>& add = parts[w].at(name);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += add[i];
      }
    }
    for (const auto& s : part_sums) {
      sums.t += s.t;
      sums.r += s.r;
    }
    return total;
  }

  static void put_store(std::ostream& os, const std::map<std::string, Tensor<T>>& m) {
    binio::put_u32(os, static_cast<std::uint32_t>(m.size()));
    for (const auto& [name, t] : m) {
      binio::put_string(os, name);
      binio::put_tensor(os, t);
    }
  }

  static std::map<std::string, Tensor<T>> get_store(std::istream& is) {
    std::map<std::string, Tensor<T>> m;
    const std::uint32_t n = binio::get_u32(is);
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = binio::get_string(is);
      m.emplace(std::move(name), binio::get_tensor<T>(is));
    }
    return m;
  }

  void write_checkpoint(std::ostream& os) const {
    os.write(kCheckpointMagic, 4);
    binio::put_u32(os, kCheckpointVersion);
    binio::put_u32(os, sizeof(T));
    const NetworkSpec& spec = net_.spec();
    binio::put_string(os, spec.name);
    binio::put_u32(os, static_cast<std::uint32_t>(spec.lr_schedule.size()));
    for (const auto& [pattern, mult] : spec.lr_schedule) {
      binio::put_string(os, pattern);
      binio::put_f64(os, mult);
    }
    write_weights(os, net_.parameters());
    const AdamState<T>& a = state_.adam;
    binio::put_u64(os, a.t);
    for (double v : {a.alpha, a.beta1, a.beta2, a.epsilon}) binio::put_f64(os, v);
    put_store(os, a.m);
    put_store(os, a.v);
    binio::put_u64(os, state_.seed);
    binio::put_u64(os, state_.next_epoch);
    binio::put_f64(os, state_.beta);
    binio::put_u32(os, static_cast<std::uint32_t>(state_.curve.size()));
    for (const auto& r : state_.curve.epochs)
      for (double v : {r.train_t, r.train_r, r.val_t, r.val_r, r.lr}) binio::put_f64(os, v);
    binio::put_f64(os, state_.best_val);
    binio::put_u64(os, state_.epochs_since_best);
    binio::put_u32(os, state_.stopped ? 1 : 0);
    binio::put_u32(os, state_.best ? 1 : 0);
    if (state_.best) write_weights(os, *state_.best);
  }

  static Trainer read_checkpoint(std::istream& is, TrainConfig config) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
      throw CheckpointError("not a training checkpoint (bad magic)");
    }
    const std::uint32_t version = binio::get_u32(is);
    if (version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    if (binio::get_u32(is) != sizeof(T)) throw CheckpointError("checkpoint was written at a different precision");
    NetworkSpec spec = spec_from_name(binio::get_string(is));
    const std::uint32_t n_schedule = binio::get_u32(is);
    if (n_schedule > (1u << 16)) throw CheckpointError("corrupt checkpoint: implausible schedule length");
    std::vector<std::pair<std::string, double>> schedule(n_schedule);
    for (auto& [pattern, mult] : schedule) {
      pattern = binio::get_string(is);
      mult = binio::get_f64(is);
    }
    PoseNetwork<T> net = PoseNetwork<T>::build(std::move(spec));
    net.set_lr_schedule(schedule);
    assign_store(net.parameters(), read_weights<T>(is));
    TrainState<T> st;
    st.adam.t = binio::get_u64(is);
    st.adam.alpha = binio::get_f64(is);
    st.adam.beta1 = binio::get_f64(is);
    st.adam.beta2 = binio::get_f64(is);
    st.adam.epsilon = binio::get_f64(is);
    st.adam.m = get_store(is);
    st.adam.v = get_store(is);
    st.seed = binio::get_u64(is);
    st.next_epoch = binio::get_u64(is);
    st.beta = binio::get_f64(is);
    const std::uint32_t n_records = binio::get_u32(is);
    if (n_records > (1u << 24)) throw CheckpointError("corrupt checkpoint: implausible curve length");
    st.curve.epochs.resize(n_records);
    for (auto& r : st.curve.epochs)
      for (double* v : {&r.train_t, &r.train_r, &r.val_t, &r.val_r, &r.lr}) *v = binio::get_f64(is);
    st.best_val = binio::get_f64(is);
    st.epochs_since_best = binio::get_u64(is);
    st.stopped = binio::get_u32(is) != 0;
    if (binio::get_u32(is) != 0) {
      st.best = net.parameters();
      assign_store(*st.best, read_weights<T>(is));
    }
    config.seed = st.seed;
    config.beta = st.beta;
    Trainer tr(std::move(net), std::move(config));
    tr.state_ = std::move(st);
    return tr;
  }

  /// Every stored parameter must be present with the right shape.
  static void assign_store(ParameterStore<T>& store, std::vector<std::pair<std::string, Tensor<T>>> entries) {
    if (entries.size() != store.size()) throw CheckpointError("checkpoint parameter count does not match network");
    std::vector<std::string> mismatched;
    for (const auto& [name, t] : entries) {
      if (!store.contains(name)) throw CheckpointError("checkpoint holds unknown parameter " + name);
      if (store.at(name).value.shape() != t.shape()) mismatched.push_back(name);
    }
    if (!mismatched.empty()) throw ParameterShapeMismatch(mismatched);
    for (auto& [name, t] : entries) store.at(name).value = std::move(t);
  }

  PoseNetwork<T> net_;
  TrainConfig config_;
  TrainState<T> state_;
};

/// Result of a complete training run.
template <typename T>
struct TrainResult {
  PoseNetwork<T> network;  // best-validation weights
  LossCurve curve;
  double beta = 0.0;
};

template <typename T>
TrainResult<T> train(PoseNetwork<T> net, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& config) {
  if (train_ds.empty()) throw std::invalid_argument("training set is empty");
  if (val_ds.empty()) throw std::invalid_argument("validation set is empty");
  Trainer<T> trainer(std::move(net), config);
  trainer.run(train_ds, val_ds);
  return {trainer.best_network(), trainer.curve(), trainer.state().beta};
}

}  // namespace cpose

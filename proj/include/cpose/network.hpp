#pragma once

#include <fnmatch.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cpose/graph.hpp"
#include "cpose/ops.hpp"
#include "cpose/pose.hpp"
#include "cpose/rng.hpp"

namespace cpose {

/// Channel counts of one inception module.
struct InceptionSpec {
  std::size_t c1x1 = 0, c3x3_reduce = 0, c3x3 = 0, c5x5_reduce = 0, c5x5 = 0, pool_proj = 0;

  std::size_t out_channels() const { return c1x1 + c3x3 + c5x5 + pool_proj; }

  void validate() const {
    if (!c1x1 || !c3x3_reduce || !c3x3 || !c5x5_reduce || !c5x5 || !pool_proj) {
      throw std::invalid_argument("inception spec has a zero channel count");
    }
  }

  friend bool operator==(const InceptionSpec&, const InceptionSpec&) = default;
};

enum class StemKind { conv, maxpool, lrn };

struct StemLayer {
  std::string name;
  StemKind kind;
  std::size_t channels = 0;  // conv only
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

struct InceptionBlock {
  std::string name;
  InceptionSpec spec;
  bool maxpool_after = false;
};

struct ImageShape {
  std::size_t channels = 3, height = 224, width = 224;
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Declarative layer graph of the pose regressor.
///
/// Topology: stem (conv/pool/lrn) -> inception blocks with interleaved 3x3/2
/// max pools -> global average pool -> fc + relu -> affine regressor (7).
struct NetworkSpec {
  /// "reference" or "scaled:<divisor>:<size>"; enough to rebuild the topology.
  std::string name;
  ImageShape input;
  std::vector<StemLayer> stem;
  std::vector<InceptionBlock> inception;
  std::size_t fc_width = 2048;
  std::size_t regressor_outputs = 7;
  kernels::LrnParams lrn;
  /// Layer-name glob -> learning-rate multiplier; later entries win.
  std::vector<std::pair<std::string, double>> lr_schedule;
  /// Loss layer name -> loss weight.
  std::vector<std::pair<std::string, double>> loss_weights{{"pose_loss", 1.0}};
};

inline std::vector<InceptionBlock> googlenet_inception_blocks() {
  return {
      {"inception_3a", {64, 96, 128, 16, 32, 32}, false},
      {"inception_3b", {128, 128, 192, 32, 96, 64}, true},
      {"inception_4a", {192, 96, 208, 16, 48, 64}, false},
      {"inception_4b", {160, 112, 224, 24, 64, 64}, false},
      {"inception_4c", {128, 128, 256, 24, 64, 64}, false},
      {"inception_4d", {112, 144, 288, 32, 64, 64}, false},
      {"inception_4e", {256, 160, 320, 32, 128, 128}, true},
      {"inception_5a", {256, 160, 320, 32, 128, 128}, false},
      {"inception_5b", {384, 192, 384, 48, 128, 128}, false},
  };
}

/// 224x224 RGB, GoogLeNet channel widths, 2048-wide FC.
inline NetworkSpec reference_spec() {
  NetworkSpec s;
  s.name = "reference";
  s.input = {3, 224, 224};
  s.stem = {
      {"conv1", StemKind::conv, 64, 7, 2, 3},
      {"pool1", StemKind::maxpool, 0, 3, 2, 1},
      {"norm1", StemKind::lrn},
      {"conv2_reduce", StemKind::conv, 64, 1, 1, 0},
      {"conv2", StemKind::conv, 192, 3, 1, 1},
      {"norm2", StemKind::lrn},
      {"pool2", StemKind::maxpool, 0, 3, 2, 1},
  };
  s.inception = googlenet_inception_blocks();
  s.fc_width = 2048;
  return s;
}

/// Reference topology with every channel width divided by `divisor` and a
/// square input of the given size.
inline NetworkSpec scaled_spec(std::size_t divisor, std::size_t image_size) {
  NetworkSpec s = reference_spec();
  const auto div = [&](std::size_t c) {
    if (c % divisor) throw std::invalid_argument("channel count not divisible by scale divisor");
    return c / divisor;
  };
  s.name = "scaled:" + std::to_string(divisor) + ":" + std::to_string(image_size);
  s.input = {3, image_size, image_size};
  for (auto& l : s.stem)
    if (l.kind == StemKind::conv) l.channels = div(l.channels);
  for (auto& b : s.inception) {
    auto& c = b.spec;
    c = {div(c.c1x1), div(c.c3x3_reduce), div(c.c3x3), div(c.c5x5_reduce), div(c.c5x5),
         div(c.pool_proj)};
  }
  s.fc_width = div(s.fc_width);
  return s;
}

/// 64x64 input, channels / 4.
inline NetworkSpec desk_spec() { return scaled_spec(4, 64); }

/// Inverse of NetworkSpec::name, without any learning-rate schedule.
inline NetworkSpec spec_from_name(const std::string& name) {
  if (name == "reference") return reference_spec();
  std::size_t div = 0, size = 0;
  char tail = 0;
  if (std::sscanf(name.c_str(), "scaled:%zu:%zu%c", &div, &size, &tail) == 2 && div && size) {
    return scaled_spec(div, size);
  }
  throw std::invalid_argument("unknown network spec name '" + name + "'");
}

/// Layer kinds in execution order; the counted-layer sequence of the network
/// definition, bracketed by the data and loss layers.
inline std::vector<std::string> layer_kinds(const NetworkSpec& s) {
  std::vector<std::string> kinds{"data"};
  for (const auto& l : s.stem) {
    kinds.push_back(l.kind == StemKind::conv ? "conv" : l.kind == StemKind::maxpool ? "maxpool" : "lrn");
  }
  for (const auto& b : s.inception) {
    kinds.push_back("inception");
    if (b.maxpool_after) kinds.push_back("maxpool");
  }
  kinds.insert(kinds.end(), {"avgpool", "fc", "regressor", "loss"});
  return kinds;
}

inline std::size_t counted_layers(const NetworkSpec& s) { return layer_kinds(s).size(); }

/// Name of the layer owning a parameter ("inception_3a/1x1/weight" -> "inception_3a").
inline std::string layer_of(const std::string& param_name) {
  return param_name.substr(0, param_name.find('/'));
}

inline bool is_stem_layer(const NetworkSpec& s, const std::string& layer) {
  for (const auto& l : s.stem)
    if (l.name == layer) return true;
  return false;
}

/// Patterns are fnmatch globs over layer names; "@stem", "@inception" and
/// "@head" select layer groups.
inline bool layer_matches(const NetworkSpec& s, const std::string& pattern,
                          const std::string& layer) {
  if (pattern == "@stem") return is_stem_layer(s, layer);
  if (pattern == "@head") return layer == "fc" || layer == "regressor";
  if (pattern == "@inception") return layer.rfind("inception_", 0) == 0;
  return fnmatch(pattern.c_str(), layer.c_str(), 0) == 0;
}

inline double lr_multiplier_for(const NetworkSpec& s, const std::string& param_name) {
  const std::string layer = layer_of(param_name);
  double m = 1.0;
  for (const auto& [pattern, mult] : s.lr_schedule)
    if (layer_matches(s, pattern, layer)) m = mult;
  return m;
}

/// Appends a schedule to the spec. Multiplier 0 freezes matching layers.
inline NetworkSpec apply_lr_multipliers(NetworkSpec spec,
                                        const std::vector<std::pair<std::string, double>>& schedule) {
  for (const auto& [pattern, mult] : schedule) {
    if (!(mult >= 0.0)) {
      throw std::invalid_argument("negative learning-rate multiplier for pattern '" + pattern + "'");
    }
    spec.lr_schedule.emplace_back(pattern, mult);
  }
  return spec;
}

/// Closed-form learnable scalar count.
inline std::size_t parameter_count(const NetworkSpec& s) {
  const auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) {
    return cout * cin * k * k + cout;
  };
  std::size_t n = 0, c = s.input.channels;
  for (const auto& l : s.stem) {
    if (l.kind != StemKind::conv) continue;
    n += conv(c, l.channels, l.kernel);
    c = l.channels;
  }
  for (const auto& b : s.inception) {
    const auto& i = b.spec;
    n += conv(c, i.c1x1, 1) + conv(c, i.c3x3_reduce, 1) + conv(i.c3x3_reduce, i.c3x3, 3) +
         conv(c, i.c5x5_reduce, 1) + conv(i.c5x5_reduce, i.c5x5, 5) + conv(c, i.pool_proj, 1);
    c = i.out_channels();
  }
  n += s.fc_width * c + s.fc_width;
  n += s.regressor_outputs * s.fc_width + s.regressor_outputs;
  return n;
}

struct FeatureShape {
  std::size_t channels, height, width;
};

/// Walks the spec's shape algebra; throws if any spatial extent collapses or
/// a window no longer fits.
inline FeatureShape trace_feature_shape(const NetworkSpec& s) {
  if (s.regressor_outputs != 7) throw std::invalid_argument("regressor output dimension must be 7");
  if (s.input.channels == 0 || s.input.height == 0 || s.input.width == 0) {
    throw ShapeError("input shape has a zero dimension");
  }
  // The global average pool before the head uses a square window.
  if (s.input.height != s.input.width) {
    throw ShapeError("input must be square, got " + std::to_string(s.input.height) + "x" +
                     std::to_string(s.input.width));
  }
  FeatureShape f{s.input.channels, s.input.height, s.input.width};
  const auto shrink = [&](const std::string& layer, std::size_t k, std::size_t stride,
                          std::size_t pad) {
    try {
      f.height = kernels::window_output_extent(f.height, k, stride, pad, layer.c_str(), "height");
      f.width = kernels::window_output_extent(f.width, k, stride, pad, layer.c_str(), "width");
    } catch (const ShapeError& e) {
      throw ShapeError("spatial dimension collapses at layer " + layer + ": " + e.what());
    }
  };
  for (const auto& l : s.stem) {
    if (l.kind == StemKind::lrn) continue;
    shrink(l.name, l.kernel, l.stride, l.pad);
    if (l.kind == StemKind::conv) {
      if (!l.channels) throw std::invalid_argument("conv layer " + l.name + " has zero channels");
      f.channels = l.channels;
    }
  }
  for (const auto& b : s.inception) {
    b.spec.validate();
    f.channels = b.spec.out_channels();
    if (b.maxpool_after) shrink(b.name + "/pool", 3, 2, 1);
  }
  if (!s.fc_width) throw std::invalid_argument("fc width must be positive");
  return f;
}

/// Pose regression network: a spec plus its named parameters.
template <typename T>
class PoseNetwork {
 public:
  PoseNetwork() = default;

  /// He-style fan-in initialization for conv/fc weights, zero biases.
  static PoseNetwork build(NetworkSpec spec, std::uint64_t seed = 0) {
    trace_feature_shape(spec);
    PoseNetwork net;
    net.spec_ = std::move(spec);
    Rng rng(keyed_seed(seed, {0x1417}));
    std::size_t c = net.spec_.input.channels;
    for (const auto& l : net.spec_.stem) {
      if (l.kind != StemKind::conv) continue;
      net.add_conv(rng, l.name, c, l.channels, l.kernel);
      c = l.channels;
    }
    for (const auto& b : net.spec_.inception) {
      const auto& i = b.spec;
      net.add_conv(rng, b.name + "/1x1", c, i.c1x1, 1);
      net.add_conv(rng, b.name + "/3x3_reduce", c, i.c3x3_reduce, 1);
      net.add_conv(rng, b.name + "/3x3", i.c3x3_reduce, i.c3x3, 3);
      net.add_conv(rng, b.name + "/5x5_reduce", c, i.c5x5_reduce, 1);
      net.add_conv(rng, b.name + "/5x5", i.c5x5_reduce, i.c5x5, 5);
      net.add_conv(rng, b.name + "/pool_proj", c, i.pool_proj, 1);
      c = i.out_channels();
    }
    net.add_dense(rng, "fc", c, net.spec_.fc_width);
    net.add_dense(rng, "regressor", net.spec_.fc_width, net.spec_.regressor_outputs);
    return net;
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  ParameterStore<T>& parameters() noexcept { return params_; }
  const ParameterStore<T>& parameters() const noexcept { return params_; }

  /// Re-resolves every parameter's multiplier from a new schedule.
  void set_lr_schedule(std::vector<std::pair<std::string, double>> schedule) {
    spec_ = apply_lr_multipliers(spec_, schedule);
    for (auto& p : params_.entries()) p.lr_multiplier = lr_multiplier_for(spec_, p.name);
  }

  /// Records the network on `g` (which must use this network's parameter
  /// store) for an (N,C,H,W) image batch; returns the raw (N,7) output node.
  NodeId forward(Graph<T>& g, NodeId images) const {
    const Tensor<T>& x = g.value(images);
    const ImageShape& in = spec_.input;
    if (x.rank() != 4 || x.dim(1) != in.channels || x.dim(2) != in.height || x.dim(3) != in.width) {
      throw ShapeError("pose network expects (N," + std::to_string(in.channels) + "," +
                       std::to_string(in.height) + "," + std::to_string(in.width) +
                       ") images, got " + shape_str(x.shape()));
    }
    NodeId h = images;
    for (const auto& l : spec_.stem) {
      switch (l.kind) {
        case StemKind::conv:
          h = ops::relu(g, conv(g, h, l.name, l.stride, l.pad));
          break;
        case StemKind::maxpool:
          h = ops::maxpool2d(g, h, l.kernel, l.stride, l.pad);
          break;
        case StemKind::lrn:
          h = ops::lrn(g, h, spec_.lrn);
          break;
      }
    }
    for (const auto& b : spec_.inception) {
      h = inception(g, h, b.name);
      if (b.maxpool_after) h = ops::maxpool2d(g, h, 3, 2, 1);
    }
    const Tensor<T>& feat = g.value(h);
    h = ops::avgpool2d(g, h, feat.dim(2), 1);
    h = ops::flatten(g, h);
    h = ops::relu(g, ops::linear(g, h, g.parameter("fc/weight"), g.parameter("fc/bias")));
    return ops::linear(g, h, g.parameter("regressor/weight"), g.parameter("regressor/bias"));
  }

 private:
  /// Kernel size comes from the stored weight.
  NodeId conv(Graph<T>& g, NodeId x, const std::string& name, std::size_t stride, std::size_t pad) const {
    return ops::conv2d(g, x, g.parameter(name + "/weight"), g.parameter(name + "/bias"), stride,
                       pad);
  }

  /// Four relu'd branches concatenated: 1x1 | 1x1->3x3 | 1x1->5x5 | pool->1x1.
  NodeId inception(Graph<T>& g, NodeId x, const std::string& name) const {
    const NodeId b1 = ops::relu(g, conv(g, x, name + "/1x1", 1, 0));
    NodeId b2 = ops::relu(g, conv(g, x, name + "/3x3_reduce", 1, 0));
    b2 = ops::relu(g, conv(g, b2, name + "/3x3", 1, 1));
    NodeId b3 = ops::relu(g, conv(g, x, name + "/5x5_reduce", 1, 0));
    b3 = ops::relu(g, conv(g, b3, name + "/5x5", 1, 2));
    NodeId b4 = ops::maxpool2d(g, x, 3, 1, 1);
    b4 = ops::relu(g, conv(g, b4, name + "/pool_proj", 1, 0));
    return ops::concat_channels(g, {b1, b2, b3, b4});
  }

  void add_conv(Rng& rng, const std::string& name, std::size_t cin, std::size_t cout,
                std::size_t k) {
    Tensor<T> w(Shape{cout, cin, k, k});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    for (T& v : w.data()) v = static_cast<T>(std_dev * rng.normal());
    params_.add(name + "/weight", std::move(w), lr_multiplier_for(spec_, name + "/weight"));
    params_.add(name + "/bias", Tensor<T>(Shape{cout}), lr_multiplier_for(spec_, name + "/bias"));
  }

  void add_dense(Rng& rng, const std::string& name, std::size_t din, std::size_t dout) {
    Tensor<T> w(Shape{dout, din});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(din));
    for (T& v : w.data()) v = static_cast<T>(std_dev * rng.normal());
    params_.add(name + "/weight", std::move(w), lr_multiplier_for(spec_, name + "/weight"));
    params_.add(name + "/bias", Tensor<T>(Shape{dout}), lr_multiplier_for(spec_, name + "/bias"));
  }

  NetworkSpec spec_;
  ParameterStore<T> params_;
};

/// Raw (N,7) rows to canonical poses.
template <typename T>
std::vector<Pose> poses_from_output(const Tensor<T>& raw) {
  if (raw.rank() != 2 || raw.dim(1) != 7) {
    throw ShapeError("pose output must be (N,7), got " + shape_str(raw.shape()));
  }
  std::vector<Pose> out;
  out.reserve(raw.dim(0));
  for (std::size_t r = 0; r < raw.dim(0); ++r) out.push_back(pose_from_raw(raw.raw() + 7 * r));
  return out;
}

/// Inference on an (N,C,H,W) batch. The network is not modified, so
/// concurrent calls on a frozen network are safe.
template <typename T>
std::vector<Pose> forward_pose(const PoseNetwork<T>& net, const Tensor<T>& images) {
  Graph<T> g(const_cast<ParameterStore<T>*>(&net.parameters()));
  const NodeId x = g.input(images, "images");
  return poses_from_output(g.value(net.forward(g, x)));
}

}  // namespace cpose

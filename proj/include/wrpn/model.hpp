#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wrpn/quant.hpp"
#include "wrpn/tensor.hpp"
#include "wrpn/tensor_ops.hpp"
#include "wrpn/util.hpp"

// Network descriptors: an ordered layer list plus input geometry, class
// count and a widening multiplier. Descriptors are immutable values; all
// shape work happens in resolve().

namespace wrpn {

enum class LayerKind { Conv, FullyConnected, Pool, Activation, Flatten, Output };

// Which widening/quantization class a layer belongs to. Input-adjacent
// layers touch the raw input, output-adjacent ones produce the logits;
// experiments routinely treat those two classes differently.
enum class LayerRole { InputAdjacent, Internal, OutputAdjacent };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Pool: return "pool";
    case LayerKind::Activation: return "activation";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Output: return "output";
  }
  return "?";
}

inline const char* to_string(LayerRole r) {
  switch (r) {
    case LayerRole::InputAdjacent: return "input_adjacent";
    case LayerRole::Internal: return "internal";
    case LayerRole::OutputAdjacent: return "output_adjacent";
  }
  return "?";
}

struct LayerDescriptor {
  LayerKind kind = LayerKind::Conv;
  std::int64_t kernel = 0;   // conv kernel edge / pool window
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t base_channels_out = 0;  // conv channels / fc features, before widening
  QuantSpec weight_spec{32, QuantKind::Weight};
  QuantSpec activation_spec{32, QuantKind::Activation};
  LayerRole role = LayerRole::Internal;
  // Index of an earlier layer whose output is added to this layer's output
  // (identity residual skip); -1 when absent.
  std::int32_t residual_from = -1;

  bool has_weights() const {
    return kind == LayerKind::Conv || kind == LayerKind::FullyConnected ||
           kind == LayerKind::Output;
  }

  bool operator==(const LayerDescriptor&) const = default;
};

struct InputSpec {
  std::int64_t channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  // Precision of the network input treated as an activation map. 32 leaves
  // the input untouched; 8 matches natively 8-bit image data exactly.
  int bits = 32;

  bool operator==(const InputSpec&) const = default;
};

struct NetworkDescriptor {
  std::string name;
  std::string comment;
  InputSpec input;
  std::int64_t class_count = 0;
  double widening = 1.0;  // multiplier applied to internal channel counts at resolve time
  std::vector<LayerDescriptor> layers;

  bool operator==(const NetworkDescriptor&) const = default;
};

// Channel count after widening: nearest integer, never below 1. The output
// layer is pinned to class_count and the network input stays as declared.
inline std::int64_t widened_channels(std::int64_t base, double multiplier) {
  const auto scaled = std::llround(multiplier * static_cast<double>(base));
  return scaled < 1 ? 1 : scaled;
}

// Scales every non-output layer's channel count by m. Composes exactly:
// multipliers accumulate and rounding happens once, at resolve time.
inline NetworkDescriptor widen(const NetworkDescriptor& net, double m) {
  if (!(m > 0.0))
    throw config_error("widening multiplier must be positive, got " + std::to_string(m));
  NetworkDescriptor out = net;
  out.widening = net.widening * m;
  return out;
}

// Per-layer shape bookkeeping produced by resolve(). Shapes are per sample
// (no batch dimension): {C, H, W} while spatial, {D} once flattened.
struct ResolvedLayer {
  Shape in_shape;
  Shape out_shape;
  Shape weight_shape;  // empty for weightless layers

  std::int64_t out_elems() const { return shape_numel(out_shape); }
  std::int64_t in_elems() const { return shape_numel(in_shape); }
  std::int64_t weight_count() const {
    return weight_shape.empty() ? 0 : shape_numel(weight_shape);
  }
};

struct ResolvedNet {
  std::vector<ResolvedLayer> layers;
  Shape input_shape;  // {C, H, W}

  std::int64_t parameter_count() const {
    std::int64_t total = 0;
    for (const auto& l : layers) total += l.weight_count();
    return total;
  }
};

// Validates the descriptor and computes every layer's shapes with widening
// applied. Throws config_error on anything the forward pass could not run.
inline ResolvedNet resolve(const NetworkDescriptor& net) {
  if (net.class_count < 1)
    throw config_error("descriptor needs a positive class count");
  if (net.input.channels < 1 || net.input.height < 1 || net.input.width < 1)
    throw config_error("descriptor input extents must be >= 1");
  check_bit_width(net.input.bits);
  if (!(net.widening > 0.0))
    throw config_error("descriptor widening multiplier must be positive");
  if (net.layers.empty()) throw config_error("descriptor has no layers");
  if (net.layers.back().kind != LayerKind::Output)
    throw config_error("descriptor must end with an output layer");

  ResolvedNet r;
  r.input_shape = {net.input.channels, net.input.height, net.input.width};
  r.layers.reserve(net.layers.size());

  Shape cur = r.input_shape;
  bool spatial = true;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDescriptor& l = net.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    if (l.kind == LayerKind::Output && i + 1 != net.layers.size())
      throw config_error(where + ": output layer must be last");

    ResolvedLayer rl;
    rl.in_shape = cur;
    switch (l.kind) {
      case LayerKind::Conv: {
        if (!spatial) throw config_error(where + ": conv needs a spatial input");
        if (l.kernel < 1) throw config_error(where + ": kernel must be >= 1");
        if (l.base_channels_out < 1)
          throw config_error(where + ": out channels must be >= 1");
        const std::int64_t cout = widened_channels(l.base_channels_out, net.widening);
        const std::int64_t hout =
            conv_out_extent(cur[1], l.kernel, l.stride, l.padding, where.c_str());
        const std::int64_t wout =
            conv_out_extent(cur[2], l.kernel, l.stride, l.padding, where.c_str());
        rl.weight_shape = {cout, cur[0], l.kernel, l.kernel};
        cur = {cout, hout, wout};
        break;
      }
      case LayerKind::FullyConnected: {
        if (spatial)
          throw config_error(where + ": fully-connected needs a flattened input");
        if (l.base_channels_out < 1)
          throw config_error(where + ": out features must be >= 1");
        const std::int64_t dout = widened_channels(l.base_channels_out, net.widening);
        rl.weight_shape = {dout, cur[0]};
        cur = {dout};
        break;
      }
      case LayerKind::Output: {
        if (spatial) throw config_error(where + ": output layer needs a flattened input");
        rl.weight_shape = {net.class_count, cur[0]};
        cur = {net.class_count};
        break;
      }
      case LayerKind::Pool: {
        if (!spatial) throw config_error(where + ": pool needs a spatial input");
        if (l.kernel < 1) throw config_error(where + ": pool window must be >= 1");
        const std::int64_t hout =
            conv_out_extent(cur[1], l.kernel, l.stride, 0, where.c_str());
        const std::int64_t wout =
            conv_out_extent(cur[2], l.kernel, l.stride, 0, where.c_str());
        cur = {cur[0], hout, wout};
        break;
      }
      case LayerKind::Activation: {
        check_bit_width(l.activation_spec.k);
        break;  // shape preserved
      }
      case LayerKind::Flatten: {
        if (!spatial) throw config_error(where + ": input is already flat");
        cur = {cur[0] * cur[1] * cur[2]};
        spatial = false;
        break;
      }
    }
    if (l.has_weights()) check_bit_width(l.weight_spec.k);
    rl.out_shape = cur;

    if (l.residual_from >= 0) {
      if (static_cast<std::size_t>(l.residual_from) >= i)
        throw config_error(where + ": residual source must be an earlier layer");
      const Shape& src = r.layers[static_cast<std::size_t>(l.residual_from)].out_shape;
      if (src != rl.out_shape)
        throw config_error(where + ": residual source shape " + shape_str(src) +
                           " does not match layer output " + shape_str(rl.out_shape));
    }
    r.layers.push_back(std::move(rl));
  }
  return r;
}

// Trainable parameters, one entry per layer; weightless layers hold an empty
// tensor. These are the full-precision master values; quantization happens
// on read.
using Parameters = std::vector<Tensor>;

// Fan-in scaled initialization with variance exactly 2 / fan_in, clamped
// once to [-1, 1] and fully determined by the seed.
//
// The distribution is a sparse spike mixture rather than a plain normal: a
// small Gaussian carries sigma^2 = (1 - rho) * 2 / fan_in and a fraction p of
// the weights additionally receive a +-0.75 spike carrying the rest. A plain
// normal puts every weight below the coarsest quantizer steps once fan_in
// passes a few dozen (a 2-bit weight rounds to zero below |w| = 0.5), which
// leaves low-bit networks without a single live weight and therefore without
// gradients. The spikes guarantee live weights at every width while the
// variance contract stays exact.
inline Parameters init_parameters(const NetworkDescriptor& net, std::uint64_t seed) {
  constexpr double kSpike = 0.75;
  constexpr double kSpikeVarianceShare = 0.9375;

  const ResolvedNet r = resolve(net);
  Rng rng(seed);
  Parameters params(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Shape& ws = r.layers[i].weight_shape;
    if (ws.empty()) continue;
    std::int64_t fan_in = 1;
    for (std::size_t a = 1; a < ws.size(); ++a) fan_in *= ws[a];
    const double target_var = 2.0 / static_cast<double>(fan_in);
    const double noise_sigma = std::sqrt((1.0 - kSpikeVarianceShare) * target_var);
    double p = kSpikeVarianceShare * target_var / (kSpike * kSpike);
    double spike = kSpike;
    if (p > 1.0) {  // tiny fan-in: every weight is a spike of reduced height
      spike = std::sqrt(kSpikeVarianceShare * target_var);
      p = 1.0;
    }
    Tensor w(ws);
    for (std::int64_t j = 0; j < w.numel(); ++j) {
      double v = noise_sigma * rng.normal();
      const double u = rng.uniform();
      if (u < p) v += rng.below(2) ? spike : -spike;
      w[j] = std::min(1.0, std::max(-1.0, v));
    }
    params[i] = std::move(w);
  }
  return params;
}

// ---------------------------------------------------------------------------
// Precision overrides. 0 leaves the original bit-width in place.

struct BitsOverride {
  int weight_bits = 0;
  int activation_bits = 0;

  bool empty() const { return weight_bits == 0 && activation_bits == 0; }
};

// Applies an override to every layer of the matching role; pass the same
// override for all three roles for a uniform re-spec.
inline NetworkDescriptor override_bits(const NetworkDescriptor& net,
                                       const BitsOverride& input_adjacent,
                                       const BitsOverride& internal,
                                       const BitsOverride& output_adjacent) {
  NetworkDescriptor out = net;
  for (auto& l : out.layers) {
    const BitsOverride& o = l.role == LayerRole::InputAdjacent ? input_adjacent
                            : l.role == LayerRole::Internal    ? internal
                                                               : output_adjacent;
    if (l.has_weights() && o.weight_bits != 0) {
      check_bit_width(o.weight_bits);
      l.weight_spec.k = o.weight_bits;
    }
    if (l.kind == LayerKind::Activation && o.activation_bits != 0) {
      check_bit_width(o.activation_bits);
      l.activation_spec.k = o.activation_bits;
    }
  }
  return out;
}

inline NetworkDescriptor override_bits(const NetworkDescriptor& net, const BitsOverride& all) {
  return override_bits(net, all, all, all);
}

// ---------------------------------------------------------------------------
// Built-in descriptor library.

namespace presets {

namespace detail {

inline LayerDescriptor conv(std::int64_t cout, std::int64_t kernel, std::int64_t stride,
                            std::int64_t padding, LayerRole role = LayerRole::Internal,
                            std::int32_t residual_from = -1) {
  LayerDescriptor l;
  l.kind = LayerKind::Conv;
  l.base_channels_out = cout;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.role = role;
  l.residual_from = residual_from;
  return l;
}

inline LayerDescriptor act(LayerRole role = LayerRole::Internal) {
  LayerDescriptor l;
  l.kind = LayerKind::Activation;
  l.role = role;
  return l;
}

inline LayerDescriptor pool(std::int64_t window, std::int64_t stride) {
  LayerDescriptor l;
  l.kind = LayerKind::Pool;
  l.kernel = window;
  l.stride = stride;
  return l;
}

inline LayerDescriptor flatten() {
  LayerDescriptor l;
  l.kind = LayerKind::Flatten;
  return l;
}

inline LayerDescriptor fc(std::int64_t dout, LayerRole role = LayerRole::Internal) {
  LayerDescriptor l;
  l.kind = LayerKind::FullyConnected;
  l.base_channels_out = dout;
  l.role = role;
  return l;
}

inline LayerDescriptor output() {
  LayerDescriptor l;
  l.kind = LayerKind::Output;
  l.role = LayerRole::OutputAdjacent;
  return l;
}

}  // namespace detail

// Single-tower AlexNet-style stack (no filter groups; grouped variants shift
// FMA totals by several percent). 227x227 input, full-precision specs.
inline NetworkDescriptor alexnet_like() {
  using namespace detail;
  NetworkDescriptor net;
  net.name = "alexnet-like";
  net.comment = "single-tower AlexNet-style stack, 227x227 input, no filter groups";
  net.input = {3, 227, 227, 32};
  net.class_count = 1000;
  net.layers = {
      conv(96, 11, 4, 0, LayerRole::InputAdjacent),
      act(LayerRole::InputAdjacent),
      pool(3, 2),
      conv(256, 5, 1, 2),
      act(),
      pool(3, 2),
      conv(384, 3, 1, 1),
      act(),
      conv(384, 3, 1, 1),
      act(),
      conv(256, 3, 1, 1),
      act(),
      pool(3, 2),
      flatten(),
      fc(4096),
      act(),
      fc(4096),
      act(),
      output(),
  };
  return net;
}

// 34-layer residual stack in the ResNet-34 spirit: a strided stem, four
// stages of 3x3 blocks with identity skips, and k4/s2 transition convs where
// the original uses strided blocks (keeps every extent integral).
inline NetworkDescriptor resnet34_like() {
  using namespace detail;
  NetworkDescriptor net;
  net.name = "resnet34-like";
  net.comment =
      "34 weight layers, identity skips inside stages, k4/s2 transition convs, "
      "global max pool head";
  net.input = {3, 224, 224, 32};
  net.class_count = 1000;

  auto& L = net.layers;
  L.push_back(conv(64, 6, 2, 2, LayerRole::InputAdjacent));  // 224 -> 112
  L.push_back(act(LayerRole::InputAdjacent));
  L.push_back(pool(2, 2));  // 112 -> 56

  // stage_convs pairs of (channels, conv count at that width); the first conv
  // of every stage after the first is the strided transition.
  struct Stage { std::int64_t channels; int convs; };
  const Stage stages[] = {{64, 6}, {128, 8}, {256, 12}, {512, 6}};
  for (std::size_t s = 0; s < 4; ++s) {
    int remaining = stages[s].convs;
    if (s > 0) {
      L.push_back(conv(stages[s].channels, 4, 2, 1));  // halves H and W exactly
      L.push_back(act());
      --remaining;
    }
    // Identity blocks: conv-act-conv(+skip)-act. With an odd budget the last
    // conv runs without a skip partner.
    while (remaining >= 2) {
      const auto block_in = static_cast<std::int32_t>(L.size() - 1);  // previous act/pool
      L.push_back(conv(stages[s].channels, 3, 1, 1));
      L.push_back(act());
      L.push_back(conv(stages[s].channels, 3, 1, 1, LayerRole::Internal, block_in));
      L.push_back(act());
      remaining -= 2;
    }
    if (remaining == 1) {
      L.push_back(conv(stages[s].channels, 3, 1, 1));
      L.push_back(act());
    }
  }
  L.push_back(pool(7, 7));  // global: 7x7 -> 1x1
  L.push_back(flatten());
  L.push_back(output());
  return net;
}

// Residual classifier for desk-scale 28x28 training runs: a stem conv and
// two identity-skip blocks at a constant channel count. The skips keep a
// live signal path at very low weight precision, where a plain stack dies as
// soon as one layer quantizes to all zeros.
inline NetworkDescriptor desk_cnn() {
  using namespace detail;
  NetworkDescriptor net;
  net.name = "desk-cnn";
  net.comment = "residual 3x3 stack, two identity-skip blocks, for 10-class 28x28 sets";
  net.input = {1, 28, 28, 8};
  net.class_count = 10;
  net.layers = {
      conv(8, 3, 1, 1, LayerRole::InputAdjacent),   // 0: 28x28
      act(LayerRole::InputAdjacent),                // 1
      pool(2, 2),                                   // 2: 14x14
      conv(8, 3, 1, 1),                             // 3
      act(),                                        // 4
      conv(8, 3, 1, 1, LayerRole::Internal, 2),     // 5: block out += pool out
      act(),                                        // 6
      pool(2, 2),                                   // 7: 7x7
      conv(8, 3, 1, 1),                             // 8
      act(),                                        // 9
      conv(8, 3, 1, 1, LayerRole::Internal, 7),     // 10: block out += pool out
      act(),                                        // 11
      flatten(),                                    // 12: 392
      output(),                                     // 13
  };
  return net;
}

// Smaller LeNet-style fallback, two 5x5 convs.
inline NetworkDescriptor desk_cnn_lite() {
  using namespace detail;
  NetworkDescriptor net;
  net.name = "desk-cnn-lite";
  net.comment = "two 5x5 conv stages for 10-class 28x28 image sets";
  net.input = {1, 28, 28, 8};
  net.class_count = 10;
  net.layers = {
      conv(6, 5, 1, 0, LayerRole::InputAdjacent),  // 24
      act(LayerRole::InputAdjacent),
      pool(2, 2),                                  // 12
      conv(12, 5, 1, 0),                           // 8
      act(),
      pool(2, 2),                                  // 4
      flatten(),
      fc(48),
      act(),
      output(),
  };
  return net;
}

inline std::vector<std::string> names() {
  return {"alexnet-like", "resnet34-like", "desk-cnn", "desk-cnn-lite"};
}

inline NetworkDescriptor by_name(const std::string& name) {
  if (name == "alexnet-like") return alexnet_like();
  if (name == "resnet34-like") return resnet34_like();
  if (name == "desk-cnn") return desk_cnn();
  if (name == "desk-cnn-lite") return desk_cnn_lite();
  throw config_error("unknown preset descriptor '" + name + "'");
}

}  // namespace presets

}  // namespace wrpn

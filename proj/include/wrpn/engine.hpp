#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wrpn/model.hpp"
#include "wrpn/quant.hpp"
#include "wrpn/tensor.hpp"
#include "wrpn/tensor_ops.hpp"
#include "wrpn/util.hpp"

// Network execution in three modes:
//   Float       full-precision reference, no quantizers anywhere
//   FakeQuant   weights quantized on read, activations quantized after each
//               activation function; the training path
//   IntegerPath convolution/matmul on integer codes with a 64-bit
//               accumulator and one float rescale per output; the inference
//               path
//
// FakeQuant and IntegerPath evaluate the same rationals by different routes,
// so their logits agree to ~1e-12 relative; FakeQuant with 32-bit specs
// everywhere is bitwise identical to Float.

namespace wrpn {

enum class ExecMode { Float, FakeQuant, IntegerPath };

inline const char* to_string(ExecMode m) {
  switch (m) {
    case ExecMode::Float: return "float";
    case ExecMode::FakeQuant: return "fake_quant";
    case ExecMode::IntegerPath: return "integer";
  }
  return "?";
}

struct ForwardPass {
  Tensor logits;
  ExecMode mode = ExecMode::FakeQuant;
  bool recorded = false;
  // Caches for backward, populated only when recording.
  Tensor input_post;                 // network input after input quantization
  std::vector<Tensor> outputs;       // per-layer outputs
  std::vector<std::vector<std::int64_t>> pool_argmax;
  std::vector<Tensor> applied_weights;  // weights as used (quantized in FakeQuant)
};

namespace detail {

inline void check_params(const ResolvedNet& resolved, const Parameters& params) {
  if (params.size() != resolved.layers.size())
    throw usage_error("parameter set has " + std::to_string(params.size()) +
                      " entries for " + std::to_string(resolved.layers.size()) + " layers");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& expect = resolved.layers[i].weight_shape;
    if (expect.empty()) {
      if (!params[i].empty())
        throw usage_error("layer " + std::to_string(i) + " carries no weights");
    } else if (params[i].shape() != expect) {
      throw shape_error("layer " + std::to_string(i) + " weights " +
                        shape_str(params[i].shape()) + " do not match descriptor shape " +
                        shape_str(expect));
    }
  }
}

inline void check_input(const NetworkDescriptor& net, const Tensor& input) {
  if (input.order() != 4)
    throw shape_error("network input must be N x C x H x W, got " +
                      shape_str(input.shape()));
  if (input.extent(1) != net.input.channels || input.extent(2) != net.input.height ||
      input.extent(3) != net.input.width)
    throw shape_error("network input " + shape_str(input.shape()) +
                      " does not match descriptor input " +
                      shape_str({net.input.channels, net.input.height, net.input.width}));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Float / FakeQuant forward.

inline ForwardPass forward(const NetworkDescriptor& net, const Parameters& params,
                           const Tensor& input, ExecMode mode, bool record = false);

namespace detail {

inline ForwardPass forward_real(const NetworkDescriptor& net, const ResolvedNet& resolved,
                                const Parameters& params, const Tensor& input,
                                ExecMode mode, bool record) {
  const bool fake = mode == ExecMode::FakeQuant;
  const std::size_t n_layers = net.layers.size();

  ForwardPass pass;
  pass.mode = mode;
  pass.recorded = record;
  pass.outputs.resize(record ? n_layers : 0);
  pass.pool_argmax.resize(record ? n_layers : 0);
  pass.applied_weights.resize(record ? n_layers : 0);

  Tensor x = (fake && net.input.bits < 32) ? quantize_activations(input, net.input.bits)
                                           : input;
  if (record) pass.input_post = x;

  // Outputs of layers that later feed residual joins must stay alive even
  // when not recording.
  std::vector<bool> keep(n_layers, record);
  for (const auto& l : net.layers)
    if (l.residual_from >= 0) keep[static_cast<std::size_t>(l.residual_from)] = true;
  std::vector<Tensor> stash(record ? 0 : n_layers);

  for (std::size_t i = 0; i < n_layers; ++i) {
    const LayerDescriptor& l = net.layers[i];
    Tensor out;
    switch (l.kind) {
      case LayerKind::Conv: {
        const Tensor& w = params[i];
        Tensor wq = (fake && l.weight_spec.k < 32) ? quantize_weights(w, l.weight_spec.k) : w;
        out = conv2d(x, wq, l.stride, l.padding);
        if (record) pass.applied_weights[i] = std::move(wq);
        break;
      }
      case LayerKind::FullyConnected:
      case LayerKind::Output: {
        const Tensor& w = params[i];
        Tensor wq = (fake && l.weight_spec.k < 32) ? quantize_weights(w, l.weight_spec.k) : w;
        out = fully_connected(x, wq);
        if (record) pass.applied_weights[i] = std::move(wq);
        break;
      }
      case LayerKind::Pool: {
        MaxPoolResult r = max_pool2d(x, l.kernel, l.stride);
        out = std::move(r.output);
        if (record) pass.pool_argmax[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::Activation: {
        out = (fake && l.activation_spec.k < 32)
                  ? quantize_activations(x, l.activation_spec.k)
                  : clipped_relu(x);
        break;
      }
      case LayerKind::Flatten: {
        out = reshaped(x, {x.extent(0), resolved.layers[i].out_elems()});
        break;
      }
    }
    if (l.residual_from >= 0) {
      const std::size_t src = static_cast<std::size_t>(l.residual_from);
      add_inplace(out, record ? pass.outputs[src] : stash[src]);
    }
    x = out;
    if (record)
      pass.outputs[i] = x;
    else if (keep[i])
      stash[i] = x;
  }
  pass.logits = std::move(x);
  return pass;
}

// ---------------------------------------------------------------------------
// Integer path.

// Integer activation map: value = code * scale elementwise.
struct CodeMap {
  std::vector<std::int32_t> codes;
  double scale = 1.0;
  Shape shape;  // batched
};

inline CodeMap codes_from_values(const Tensor& t, int k) {
  CodeMap m;
  m.shape = t.shape();
  const double d = static_cast<double>(activation_denominator(k));
  m.scale = 1.0 / d;
  m.codes.resize(static_cast<std::size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double clipped = std::min(1.0, std::max(0.0, t[i]));
    m.codes[static_cast<std::size_t>(i)] =
        static_cast<std::int32_t>(std::llround(d * clipped));
  }
  return m;
}

inline void int_im2col(const std::int32_t* in, std::int64_t cin, std::int64_t h,
                       std::int64_t w, std::int64_t kh, std::int64_t kw,
                       std::int64_t stride, std::int64_t padding, std::int64_t hout,
                       std::int64_t wout, std::int32_t* col) {
  const std::int64_t cols = hout * wout;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < cin; ++c) {
    const std::int32_t* plane = in + c * h * w;
    for (std::int64_t fy = 0; fy < kh; ++fy)
      for (std::int64_t fx = 0; fx < kw; ++fx, ++row) {
        std::int32_t* dst = col + row * cols;
        for (std::int64_t oy = 0; oy < hout; ++oy) {
          const std::int64_t iy = oy * stride - padding + fy;
          for (std::int64_t ox = 0; ox < wout; ++ox) {
            const std::int64_t ix = ox * stride - padding + fx;
            dst[oy * wout + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                      ? plane[iy * w + ix]
                                      : 0;
          }
        }
      }
  }
}

// out[M,N] (int64) = A[M,K] (i32) * B[K,N] (i32); each output element is a
// pure integer sum, exact by construction.
inline void int_matmul(const std::int32_t* a, const std::int32_t* b, std::int64_t* c,
                       std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    std::int64_t* crow = c + i * n;
    const std::int32_t* arow = a + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const std::int64_t av = arow[kk];
      if (av == 0) continue;
      const std::int32_t* brow = b + kk * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// Worst-case accumulated magnitude, in bits, over all compute layers when the
// network runs on the integer path: per layer
// (2^(k_W - 1) - 1) * (2^(k_A) - 1) * taps. This is the pre-execution sizing
// check for the 64-bit accumulator; it never runs per-accumulation.
inline double integer_accumulator_bits(const NetworkDescriptor& net) {
  const ResolvedNet resolved = resolve(net);
  int act_bits = net.input.bits <= 16 ? net.input.bits : 8;
  double worst = 0.0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDescriptor& l = net.layers[i];
    if (l.kind == LayerKind::Activation) {
      act_bits = l.activation_spec.k;
      continue;
    }
    if (!l.has_weights()) continue;
    const int kw = l.weight_spec.k;
    const double wmax =
        kw == 1 ? 1.0 : static_cast<double>((std::int64_t{1} << (std::min(kw, 32) - 1)) - 1);
    const double amax = std::pow(2.0, std::min(act_bits, 32)) - 1.0;
    const Shape& ws = resolved.layers[i].weight_shape;
    double taps = 1.0;
    for (std::size_t a = 1; a < ws.size(); ++a) taps *= static_cast<double>(ws[a]);
    worst = std::max(worst, std::log2(wmax * amax * taps));
    act_bits = 32;  // pre-activation output is real-valued until requantized
  }
  return worst;
}

inline constexpr int kIntegerAccumulatorBits = 63;  // usable magnitude of int64

inline void check_integer_accumulator(const NetworkDescriptor& net,
                                      int accumulator_bits = kIntegerAccumulatorBits) {
  const double required = integer_accumulator_bits(net);
  if (required >= static_cast<double>(accumulator_bits))
    throw config_error("integer accumulator needs " + std::to_string(required) +
                       " bits, accumulator provides " + std::to_string(accumulator_bits));
}

namespace detail {

inline Tensor forward_integer(const NetworkDescriptor& net, const ResolvedNet& resolved,
                              const Parameters& params, const Tensor& input) {
  // Static validation: every compute layer must consume quantized codes.
  int act_bits = net.input.bits <= 16 ? net.input.bits : 8;
  bool codes_live = true;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDescriptor& l = net.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    if (l.has_weights()) {
      if (l.weight_spec.k > 16)
        throw config_error("integer path: " + where + " has full-precision weights (k=" +
                           std::to_string(l.weight_spec.k) + ", need k <= 16)");
      if (!codes_live)
        throw config_error("integer path: " + where +
                           " consumes an unquantized map; insert an activation layer");
      codes_live = false;
    } else if (l.kind == LayerKind::Activation) {
      if (l.activation_spec.k > 16)
        throw config_error("integer path: " + where + " is full precision (k=" +
                           std::to_string(l.activation_spec.k) + ", need k <= 16)");
      codes_live = true;
      act_bits = l.activation_spec.k;
    }
    // A residual join is evaluated in the real domain, so its output is
    // unquantized no matter what the layer itself produced.
    if (l.residual_from >= 0) codes_live = false;
  }
  check_integer_accumulator(net);

  // Value flowing between layers: either an integer code map or a real
  // tensor (pre-activation). Residual joins are evaluated in the real domain.
  CodeMap cm = codes_from_values(input, net.input.bits <= 16 ? net.input.bits : 8);
  Tensor fv;
  bool is_codes = true;

  std::vector<Tensor> stash(net.layers.size());
  std::vector<bool> keep(net.layers.size(), false);
  for (const auto& l : net.layers)
    if (l.residual_from >= 0) keep[static_cast<std::size_t>(l.residual_from)] = true;

  auto as_values = [&]() -> Tensor {
    if (!is_codes) return fv;
    std::vector<double> v(cm.codes.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = static_cast<double>(cm.codes[i]) * cm.scale;
    return Tensor(cm.shape, std::move(v));
  };

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDescriptor& l = net.layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        const QuantizedTensor wq = to_codes(params[i], l.weight_spec);
        const std::int64_t n = cm.shape[0], cin = cm.shape[1];
        const std::int64_t h = cm.shape[2], w = cm.shape[3];
        const std::int64_t cout = wq.shape[0], kh = wq.shape[2], kw = wq.shape[3];
        const std::int64_t hout = conv_out_extent(h, kh, l.stride, l.padding, "conv2d");
        const std::int64_t wout = conv_out_extent(w, kw, l.stride, l.padding, "conv2d");
        const std::int64_t k2 = cin * kh * kw, cols = hout * wout;
        Tensor out({n, cout, hout, wout});
        const double rescale = wq.scale * cm.scale;
        parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
          std::vector<std::int32_t> col(static_cast<std::size_t>(k2 * cols));
          std::vector<std::int64_t> acc(static_cast<std::size_t>(cout * cols));
          for (std::int64_t s = lo; s < hi; ++s) {
            int_im2col(cm.codes.data() + s * cin * h * w, cin, h, w, kh, kw, l.stride,
                       l.padding, hout, wout, col.data());
            std::fill(acc.begin(), acc.end(), 0);
            int_matmul(wq.codes.data(), col.data(), acc.data(), cout, k2, cols);
            double* dst = out.data() + s * cout * cols;
            for (std::int64_t j = 0; j < cout * cols; ++j)
              dst[j] = static_cast<double>(acc[j]) * rescale;
          }
        });
        fv = std::move(out);
        is_codes = false;
        break;
      }
      case LayerKind::FullyConnected:
      case LayerKind::Output: {
        const QuantizedTensor wq = to_codes(params[i], l.weight_spec);
        const std::int64_t n = cm.shape[0], din = cm.shape[1], dout = wq.shape[0];
        Tensor out({n, dout});
        const double rescale = wq.scale * cm.scale;
        for (std::int64_t s = 0; s < n; ++s) {
          const std::int32_t* row = cm.codes.data() + s * din;
          for (std::int64_t o = 0; o < dout; ++o) {
            const std::int32_t* wrow = wq.codes.data() + o * din;
            std::int64_t acc = 0;
            for (std::int64_t d = 0; d < din; ++d)
              acc += static_cast<std::int64_t>(row[d]) * wrow[d];
            out.at2(s, o) = static_cast<double>(acc) * rescale;
          }
        }
        fv = std::move(out);
        is_codes = false;
        break;
      }
      case LayerKind::Pool: {
        // Max pooling commutes with the positive scale, so pool the codes.
        const std::int64_t n = cm.shape[0], c = cm.shape[1];
        const std::int64_t h = cm.shape[2], w = cm.shape[3];
        const std::int64_t hout = conv_out_extent(h, l.kernel, l.stride, 0, "max_pool2d");
        const std::int64_t wout = conv_out_extent(w, l.kernel, l.stride, 0, "max_pool2d");
        CodeMap out;
        out.scale = cm.scale;
        out.shape = {n, c, hout, wout};
        out.codes.resize(static_cast<std::size_t>(n * c * hout * wout));
        for (std::int64_t plane = 0; plane < n * c; ++plane) {
          const std::int32_t* src = cm.codes.data() + plane * h * w;
          std::int32_t* dst = out.codes.data() + plane * hout * wout;
          for (std::int64_t oy = 0; oy < hout; ++oy)
            for (std::int64_t ox = 0; ox < wout; ++ox) {
              std::int32_t best = src[(oy * l.stride) * w + ox * l.stride];
              for (std::int64_t fy = 0; fy < l.kernel; ++fy)
                for (std::int64_t fx = 0; fx < l.kernel; ++fx)
                  best = std::max(best,
                                  src[(oy * l.stride + fy) * w + (ox * l.stride + fx)]);
              dst[oy * wout + ox] = best;
            }
        }
        cm = std::move(out);
        is_codes = true;
        break;
      }
      case LayerKind::Activation: {
        Tensor vals = as_values();
        cm = codes_from_values(vals, l.activation_spec.k);
        is_codes = true;
        break;
      }
      case LayerKind::Flatten: {
        if (is_codes)
          cm.shape = {cm.shape[0], resolved.layers[i].out_elems()};
        else
          fv = reshaped(fv, {fv.extent(0), resolved.layers[i].out_elems()});
        break;
      }
    }
    if (l.residual_from >= 0) {
      Tensor base = as_values();
      add_inplace(base, stash[static_cast<std::size_t>(l.residual_from)]);
      fv = std::move(base);
      is_codes = false;
    }
    if (keep[i]) stash[i] = as_values();
  }
  if (is_codes)
    throw internal_error("integer path finished on an integer map; descriptor "
                         "validation should have rejected this network");
  return fv;
}

}  // namespace detail

inline ForwardPass forward(const NetworkDescriptor& net, const Parameters& params,
                           const Tensor& input, ExecMode mode, bool record) {
  const ResolvedNet resolved = resolve(net);
  detail::check_params(resolved, params);
  detail::check_input(net, input);
  if (mode == ExecMode::IntegerPath) {
    if (record)
      throw usage_error("integer path does not support activation recording; "
                        "train with fake quantization");
    ForwardPass pass;
    pass.mode = mode;
    pass.logits = detail::forward_integer(net, resolved, params, input);
    return pass;
  }
  return detail::forward_real(net, resolved, params, input, mode, record);
}

// Gradients of a recorded Float/FakeQuant forward with respect to the master
// weights. Quantizers backpropagate with the straight-through estimator:
// round() acts as identity and the clip interval gates the gradient, so a
// master weight outside [-1, 1] receives zero.
inline Parameters backward(const NetworkDescriptor& net, const Parameters& params,
                           const ForwardPass& pass, const Gradient& logits_grad) {
  if (!pass.recorded)
    throw usage_error("backward needs a forward pass recorded with record=true");
  const ResolvedNet resolved = resolve(net);
  detail::check_params(resolved, params);
  require_same_shape(logits_grad, pass.logits, "backward");
  const bool fake = pass.mode == ExecMode::FakeQuant;
  const std::size_t n_layers = net.layers.size();

  Parameters grads(n_layers);
  std::vector<Gradient> out_grad(n_layers);
  out_grad[n_layers - 1] = logits_grad;

  for (std::size_t idx = n_layers; idx-- > 0;) {
    const LayerDescriptor& l = net.layers[idx];
    if (out_grad[idx].empty()) {
      // Dead branch (possible only for layers no path consumes); skip.
      continue;
    }
    Gradient g = std::move(out_grad[idx]);
    if (l.residual_from >= 0) {
      auto& slot = out_grad[static_cast<std::size_t>(l.residual_from)];
      if (slot.empty())
        slot = g;
      else
        add_inplace(slot, g);
    }
    const Tensor& in = idx == 0 ? pass.input_post : pass.outputs[idx - 1];

    Gradient gin;
    switch (l.kind) {
      case LayerKind::Conv: {
        auto [gi, gw] = conv2d_backward(g, in, pass.applied_weights[idx], l.stride, l.padding);
        grads[idx] = (fake && l.weight_spec.k < 32)
                         ? quantizer_backward(gw, params[idx], -1.0, 1.0)
                         : std::move(gw);
        gin = std::move(gi);
        break;
      }
      case LayerKind::FullyConnected:
      case LayerKind::Output: {
        auto [gi, gw] = fully_connected_backward(g, in, pass.applied_weights[idx]);
        grads[idx] = (fake && l.weight_spec.k < 32)
                         ? quantizer_backward(gw, params[idx], -1.0, 1.0)
                         : std::move(gw);
        gin = std::move(gi);
        break;
      }
      case LayerKind::Pool: {
        gin = max_pool2d_backward(g, pass.pool_argmax[idx], in.shape());
        break;
      }
      case LayerKind::Activation: {
        // Same STE mask whether or not the activation is quantized.
        gin = clip_backward(g, in, 0.0, 1.0);
        break;
      }
      case LayerKind::Flatten: {
        gin = reshaped(g, in.shape());
        break;
      }
    }
    if (idx > 0) {
      auto& slot = out_grad[idx - 1];
      if (slot.empty())
        slot = std::move(gin);
      else
        add_inplace(slot, gin);
    }
  }

  // Weighted layers with no incoming gradient still get explicit zeros.
  for (std::size_t i = 0; i < n_layers; ++i)
    if (!resolved.layers[i].weight_shape.empty() && grads[i].empty())
      grads[i] = Tensor(resolved.layers[i].weight_shape);
  return grads;
}

}  // namespace wrpn

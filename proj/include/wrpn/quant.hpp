#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wrpn/tensor.hpp"
#include "wrpn/tensor_ops.hpp"
#include "wrpn/util.hpp"

// k-bit quantizers for weights and activations.
//
// Weights are clamped to [-1, 1] and mapped to round(d * w) / d with
// d = 2^(k-1) - 1; one bit carries the sign, so k bits give 2^k - 1 levels.
// Activations are clamped to [0, 1] and mapped with d = 2^k - 1, giving 2^k
// levels. Rounding is half-away-from-zero throughout, which keeps the weight
// quantizer an odd function.
//
// k = 32 means full precision: the quantizer is the identity and no integer
// codes exist for the tensor.

namespace wrpn {

enum class QuantKind { Weight, Activation };

inline const char* to_string(QuantKind k) {
  return k == QuantKind::Weight ? "weight" : "activation";
}

struct QuantSpec {
  int k = 32;
  QuantKind kind = QuantKind::Weight;

  bool full_precision() const { return k == 32; }

  bool operator==(const QuantSpec&) const = default;
};

inline void check_bit_width(int k) {
  if (k < 1 || k > 32)
    throw config_error("bit-width must be in [1, 32], got " + std::to_string(k));
}

// Number of levels on each side of zero for a k-bit weight; also the
// denominator of the weight quantizer.
inline std::int64_t weight_denominator(int k) {
  return (std::int64_t{1} << (k - 1)) - 1;
}

// Denominator of the activation quantizer.
inline std::int64_t activation_denominator(int k) {
  return (std::int64_t{1} << k) - 1;
}

// Dequantization step between adjacent codes.
inline double quant_scale(const QuantSpec& spec) {
  check_bit_width(spec.k);
  if (spec.full_precision()) return 1.0;
  if (spec.kind == QuantKind::Weight) {
    if (spec.k == 1) return 1.0;  // binary weights use codes {-1, +1} directly
    return 1.0 / static_cast<double>(weight_denominator(spec.k));
  }
  return 1.0 / static_cast<double>(activation_denominator(spec.k));
}

inline double quantize_weight_value(double w, int k) {
  if (k == 32) return w;
  const double clipped = std::min(1.0, std::max(-1.0, w));
  if (k == 1) {
    // The k = 1 formula degenerates (zero denominator); binary weights follow
    // the usual binary-network convention sign(w) with sign(0) = +1.
    return clipped < 0.0 ? -1.0 : 1.0;
  }
  const double d = static_cast<double>(weight_denominator(k));
  return std::round(d * clipped) / d;
}

inline double quantize_activation_value(double a, int k) {
  if (k == 32) return a;
  const double clipped = std::min(1.0, std::max(0.0, a));
  const double d = static_cast<double>(activation_denominator(k));
  return std::round(d * clipped) / d;
}

inline Tensor quantize_weights(const Tensor& w, int k) {
  check_bit_width(k);
  Tensor out(w.shape());
  for (std::int64_t i = 0; i < w.numel(); ++i) out[i] = quantize_weight_value(w[i], k);
  return out;
}

enum class ActivationFormula {
  Standard,      // round((2^k - 1) * a) / (2^k - 1), values stay in [0, 1]
  Denominator2k1 // round((2^k - 1) * a) / 2^(k-1); compatibility mode, maps
                 // a = 1 above 1 for k >= 2. Study use only.
};

inline Tensor quantize_activations(const Tensor& a, int k,
                                   ActivationFormula formula = ActivationFormula::Standard) {
  check_bit_width(k);
  Tensor out(a.shape());
  if (formula == ActivationFormula::Denominator2k1 && k != 32) {
    const double num = static_cast<double>(activation_denominator(k));
    const double den = static_cast<double>(std::int64_t{1} << (k - 1));
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const double clipped = std::min(1.0, std::max(0.0, a[i]));
      out[i] = std::round(num * clipped) / den;
    }
    return out;
  }
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = quantize_activation_value(a[i], k);
  return out;
}

// Straight-through estimator: round() is treated as identity, and the
// gradient is zeroed outside the clip interval. Interval boundaries count as
// inside.
inline Gradient quantizer_backward(const Gradient& upstream, const Tensor& pre_clip_input,
                                   double lo, double hi) {
  return clip_backward(upstream, pre_clip_input, lo, hi);
}

// Integer-code view of a quantized tensor: value = code * scale elementwise.
// Full-precision tensors (k = 32) keep their values and have no codes.
struct QuantizedTensor {
  std::vector<std::int32_t> codes;
  double scale = 1.0;
  Shape shape;
  QuantKind kind = QuantKind::Weight;
  int k = 32;
  bool full_precision = false;
  std::vector<double> fp_values;  // populated only when full_precision

  std::int64_t numel() const { return shape_numel(shape); }
};

inline QuantizedTensor to_codes(const Tensor& t, const QuantSpec& spec) {
  check_bit_width(spec.k);
  QuantizedTensor q;
  q.shape = t.shape();
  q.kind = spec.kind;
  q.k = spec.k;
  if (spec.full_precision()) {
    q.full_precision = true;
    q.fp_values = t.values();
    return q;
  }
  q.scale = quant_scale(spec);
  q.codes.resize(static_cast<std::size_t>(t.numel()));

  std::int64_t lo, hi;
  if (spec.kind == QuantKind::Weight) {
    hi = spec.k == 1 ? 1 : weight_denominator(spec.k);
    lo = -hi;
  } else {
    lo = 0;
    hi = activation_denominator(spec.k);
  }
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double code;
    if (spec.kind == QuantKind::Weight) {
      if (spec.k == 1) {
        code = std::min(1.0, std::max(-1.0, t[i])) < 0.0 ? -1.0 : 1.0;
      } else {
        const double clipped = std::min(1.0, std::max(-1.0, t[i]));
        code = std::round(static_cast<double>(weight_denominator(spec.k)) * clipped);
      }
    } else {
      const double clipped = std::min(1.0, std::max(0.0, t[i]));
      code = std::round(static_cast<double>(activation_denominator(spec.k)) * clipped);
    }
    const auto c = static_cast<std::int64_t>(code);
    if (c < lo || c > hi)
      throw internal_error("quantization code " + std::to_string(c) +
                           " outside representable range [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "] for k=" + std::to_string(spec.k));
    q.codes[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(c);
  }
  return q;
}

inline Tensor from_codes(const QuantizedTensor& q) {
  if (q.full_precision) return Tensor(q.shape, q.fp_values);
  // Dividing by the exact denominator reproduces the quantizer's own
  // rounding, so the round trip through codes is bit-exact.
  const double d = q.kind == QuantKind::Weight
                       ? (q.k == 1 ? 1.0 : static_cast<double>(weight_denominator(q.k)))
                       : static_cast<double>(activation_denominator(q.k));
  std::vector<double> values(q.codes.size());
  for (std::size_t i = 0; i < q.codes.size(); ++i)
    values[i] = static_cast<double>(q.codes[i]) / d;
  return Tensor(q.shape, std::move(values));
}

}  // namespace wrpn

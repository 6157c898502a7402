#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "wrpn/tensor.hpp"
#include "wrpn/util.hpp"

// Forward and backward primitives for the layer zoo: conv2d, fully connected,
// interval-clipped activations, max pooling and softmax cross-entropy.
//
// All functions are pure; batch items write to disjoint outputs so the batch
// dimension may be partitioned across workers. Per output element the
// accumulation order is fixed (innermost index ascending), which keeps every
// result reproducible no matter how many workers run.

namespace wrpn {

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel,
                                    std::int64_t stride, std::int64_t padding,
                                    const char* what) {
  if (stride < 1) throw config_error(std::string(what) + ": stride must be >= 1");
  if (padding < 0) throw config_error(std::string(what) + ": padding must be >= 0");
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0 || span % stride != 0)
    throw config_error(std::string(what) + ": extent " + std::to_string(in) +
                       " with kernel " + std::to_string(kernel) + ", stride " +
                       std::to_string(stride) + ", padding " + std::to_string(padding) +
                       " gives a non-integral output extent");
  return span / stride + 1;
}

namespace detail {

// C[M,N] += A[M,K] * B[K,N], row major. The k loop sits above the contiguous
// j loop, so each C element is accumulated in ascending k order.
inline void matmul_acc(const double* a, const double* b, double* c,
                       std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Patch matrix for one sample: rows indexed by (cin, kh, kw), columns by
// output position. Out-of-image taps are zero (zero padding).
inline void im2col(const double* in, std::int64_t cin, std::int64_t h, std::int64_t w,
                   std::int64_t kh, std::int64_t kw, std::int64_t stride,
                   std::int64_t padding, std::int64_t hout, std::int64_t wout,
                   double* col) {
  const std::int64_t cols = hout * wout;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < cin; ++c) {
    const double* plane = in + c * h * w;
    for (std::int64_t fy = 0; fy < kh; ++fy) {
      for (std::int64_t fx = 0; fx < kw; ++fx, ++row) {
        double* dst = col + row * cols;
        for (std::int64_t oy = 0; oy < hout; ++oy) {
          const std::int64_t iy = oy * stride - padding + fy;
          if (iy < 0 || iy >= h) {
            std::fill(dst + oy * wout, dst + (oy + 1) * wout, 0.0);
            continue;
          }
          const double* src = plane + iy * w;
          for (std::int64_t ox = 0; ox < wout; ++ox) {
            const std::int64_t ix = ox * stride - padding + fx;
            dst[oy * wout + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of a patch-matrix gradient back onto the input image.
inline void col2im_acc(const double* col, std::int64_t cin, std::int64_t h,
                       std::int64_t w, std::int64_t kh, std::int64_t kw,
                       std::int64_t stride, std::int64_t padding, std::int64_t hout,
                       std::int64_t wout, double* in_grad) {
  const std::int64_t cols = hout * wout;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < cin; ++c) {
    double* plane = in_grad + c * h * w;
    for (std::int64_t fy = 0; fy < kh; ++fy) {
      for (std::int64_t fx = 0; fx < kw; ++fx, ++row) {
        const double* src = col + row * cols;
        for (std::int64_t oy = 0; oy < hout; ++oy) {
          const std::int64_t iy = oy * stride - padding + fy;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < wout; ++ox) {
            const std::int64_t ix = ox * stride - padding + fx;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += src[oy * wout + ox];
          }
        }
      }
    }
  }
}

inline void check_conv_args(const Tensor& input, const Tensor& filters) {
  if (input.order() != 4)
    throw shape_error("conv2d: input must be N x Cin x H x W, got " +
                      shape_str(input.shape()));
  if (filters.order() != 4)
    throw shape_error("conv2d: filters must be Cout x Cin x Kh x Kw, got " +
                      shape_str(filters.shape()));
  if (input.extent(1) != filters.extent(1))
    throw shape_error("conv2d: input channels " + std::to_string(input.extent(1)) +
                      " do not match filter channels " + std::to_string(filters.extent(1)));
}

}  // namespace detail

// im2col + matmul path; the production convolution.
inline Tensor conv2d(const Tensor& input, const Tensor& filters, std::int64_t stride,
                     std::int64_t padding) {
  detail::check_conv_args(input, filters);
  const std::int64_t n = input.extent(0), cin = input.extent(1);
  const std::int64_t h = input.extent(2), w = input.extent(3);
  const std::int64_t cout = filters.extent(0), kh = filters.extent(2), kw = filters.extent(3);
  const std::int64_t hout = conv_out_extent(h, kh, stride, padding, "conv2d");
  const std::int64_t wout = conv_out_extent(w, kw, stride, padding, "conv2d");

  Tensor out({n, cout, hout, wout});
  const std::int64_t k2 = cin * kh * kw;
  const std::int64_t cols = hout * wout;
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    std::vector<double> col(static_cast<std::size_t>(k2 * cols));
    for (std::int64_t i = lo; i < hi; ++i) {
      detail::im2col(input.data() + i * cin * h * w, cin, h, w, kh, kw, stride, padding,
                     hout, wout, col.data());
      detail::matmul_acc(filters.data(), col.data(), out.data() + i * cout * cols, cout,
                         k2, cols);
    }
  });
  return out;
}

// Reference convolution: plain six-nested loops over the same accumulation
// order. Kept callable so the two routes can be compared directly.
inline Tensor conv2d_direct(const Tensor& input, const Tensor& filters,
                            std::int64_t stride, std::int64_t padding) {
  detail::check_conv_args(input, filters);
  const std::int64_t n = input.extent(0), cin = input.extent(1);
  const std::int64_t h = input.extent(2), w = input.extent(3);
  const std::int64_t cout = filters.extent(0), kh = filters.extent(2), kw = filters.extent(3);
  const std::int64_t hout = conv_out_extent(h, kh, stride, padding, "conv2d");
  const std::int64_t wout = conv_out_extent(w, kw, stride, padding, "conv2d");

  Tensor out({n, cout, hout, wout});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t oy = 0; oy < hout; ++oy)
        for (std::int64_t ox = 0; ox < wout; ++ox) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t fy = 0; fy < kh; ++fy)
              for (std::int64_t fx = 0; fx < kw; ++fx) {
                const std::int64_t iy = oy * stride - padding + fy;
                const std::int64_t ix = ox * stride - padding + fx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += input.at4(i, ci, iy, ix) * filters.at4(co, ci, fy, fx);
              }
          out.at4(i, co, oy, ox) = acc;
        }
  return out;
}

// Analytic gradients of conv2d with respect to its input and filters.
inline std::pair<Gradient, Gradient> conv2d_backward(const Gradient& out_grad,
                                                     const Tensor& input,
                                                     const Tensor& filters,
                                                     std::int64_t stride,
                                                     std::int64_t padding) {
  detail::check_conv_args(input, filters);
  const std::int64_t n = input.extent(0), cin = input.extent(1);
  const std::int64_t h = input.extent(2), w = input.extent(3);
  const std::int64_t cout = filters.extent(0), kh = filters.extent(2), kw = filters.extent(3);
  const std::int64_t hout = conv_out_extent(h, kh, stride, padding, "conv2d_backward");
  const std::int64_t wout = conv_out_extent(w, kw, stride, padding, "conv2d_backward");
  const Shape expect{n, cout, hout, wout};
  if (out_grad.shape() != expect)
    throw shape_error("conv2d_backward: upstream gradient shape " +
                      shape_str(out_grad.shape()) + " does not match forward output " +
                      shape_str(expect));

  Gradient input_grad(input.shape());
  Gradient filter_grad(filters.shape());
  const std::int64_t k2 = cin * kh * kw;
  const std::int64_t cols = hout * wout;

  // Input gradient: per-sample W^T * out_grad scattered back through col2im.
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    std::vector<double> colg(static_cast<std::size_t>(k2 * cols));
    for (std::int64_t i = lo; i < hi; ++i) {
      std::fill(colg.begin(), colg.end(), 0.0);
      const double* og = out_grad.data() + i * cout * cols;
      for (std::int64_t kk = 0; kk < k2; ++kk) {
        double* crow = colg.data() + kk * cols;
        for (std::int64_t co = 0; co < cout; ++co) {
          const double wv = filters.data()[co * k2 + kk];
          if (wv == 0.0) continue;
          const double* grow = og + co * cols;
          for (std::int64_t p = 0; p < cols; ++p) crow[p] += wv * grow[p];
        }
      }
      detail::col2im_acc(colg.data(), cin, h, w, kh, kw, stride, padding, hout, wout,
                         input_grad.data() + i * cin * h * w);
    }
  });

  // Filter gradient: accumulate sample contributions in ascending sample
  // order; workers split the Cout rows, which are disjoint.
  parallel_for(cout, [&](std::int64_t lo, std::int64_t hi) {
    std::vector<double> col(static_cast<std::size_t>(k2 * cols));
    for (std::int64_t i = 0; i < n; ++i) {
      detail::im2col(input.data() + i * cin * h * w, cin, h, w, kh, kw, stride, padding,
                     hout, wout, col.data());
      const double* og = out_grad.data() + i * cout * cols;
      for (std::int64_t co = lo; co < hi; ++co) {
        const double* grow = og + co * cols;
        double* frow = filter_grad.data() + co * k2;
        for (std::int64_t kk = 0; kk < k2; ++kk) {
          const double* crow = col.data() + kk * cols;
          double acc = 0.0;
          for (std::int64_t p = 0; p < cols; ++p) acc += grow[p] * crow[p];
          frow[kk] += acc;
        }
      }
    }
  });
  return {std::move(input_grad), std::move(filter_grad)};
}

inline Tensor fully_connected(const Tensor& input, const Tensor& weights) {
  if (input.order() != 2 || weights.order() != 2)
    throw shape_error("fully_connected: expected input N x Din and weights Dout x Din, got " +
                      shape_str(input.shape()) + " and " + shape_str(weights.shape()));
  if (input.extent(1) != weights.extent(1))
    throw shape_error("fully_connected: inner dimensions do not match, " +
                      shape_str(input.shape()) + " vs " + shape_str(weights.shape()));
  const std::int64_t n = input.extent(0), din = input.extent(1), dout = weights.extent(0);
  Tensor out({n, dout});
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const double* row = input.data() + i * din;
      for (std::int64_t o = 0; o < dout; ++o) {
        const double* wrow = weights.data() + o * din;
        double acc = 0.0;
        for (std::int64_t d = 0; d < din; ++d) acc += row[d] * wrow[d];
        out.at2(i, o) = acc;
      }
    }
  });
  return out;
}

inline std::pair<Gradient, Gradient> fully_connected_backward(const Gradient& out_grad,
                                                              const Tensor& input,
                                                              const Tensor& weights) {
  const std::int64_t n = input.extent(0), din = input.extent(1), dout = weights.extent(0);
  const Shape expect{n, dout};
  if (out_grad.shape() != expect)
    throw shape_error("fully_connected_backward: upstream gradient shape " +
                      shape_str(out_grad.shape()) + " does not match " + shape_str(expect));

  Gradient input_grad(input.shape());
  Gradient weight_grad(weights.shape());
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      double* irow = input_grad.data() + i * din;
      const double* grow = out_grad.data() + i * dout;
      for (std::int64_t o = 0; o < dout; ++o) {
        const double g = grow[o];
        if (g == 0.0) continue;
        const double* wrow = weights.data() + o * din;
        for (std::int64_t d = 0; d < din; ++d) irow[d] += g * wrow[d];
      }
    }
  });
  parallel_for(dout, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = 0; i < n; ++i) {
      const double* irow = input.data() + i * din;
      const double* grow = out_grad.data() + i * dout;
      for (std::int64_t o = lo; o < hi; ++o) {
        const double g = grow[o];
        if (g == 0.0) continue;
        double* wrow = weight_grad.data() + o * din;
        for (std::int64_t d = 0; d < din; ++d) wrow[d] += g * irow[d];
      }
    }
  });
  return {std::move(input_grad), std::move(weight_grad)};
}

inline void add_inplace(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "add");
  for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// Elementwise clamp to [0, 1].
inline Tensor clipped_relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::int64_t i = 0; i < input.numel(); ++i)
    out[i] = std::min(1.0, std::max(0.0, input[i]));
  return out;
}

// Elementwise clamp to [-1, 1].
inline Tensor clip_pm1(const Tensor& input) {
  Tensor out(input.shape());
  for (std::int64_t i = 0; i < input.numel(); ++i)
    out[i] = std::min(1.0, std::max(-1.0, input[i]));
  return out;
}

// Gradient of an interval clamp. The boundary counts as inside, so gradients
// stay alive right at saturation onset.
inline Gradient clip_backward(const Gradient& upstream, const Tensor& pre_clip_input,
                              double lo, double hi) {
  require_same_shape(upstream, pre_clip_input, "clip_backward");
  Gradient out(upstream.shape());
  for (std::int64_t i = 0; i < upstream.numel(); ++i) {
    const double x = pre_clip_input[i];
    out[i] = (x >= lo && x <= hi) ? upstream[i] : 0.0;
  }
  return out;
}

inline Gradient clipped_relu_backward(const Gradient& upstream, const Tensor& input) {
  return clip_backward(upstream, input, 0.0, 1.0);
}

inline Gradient clip_pm1_backward(const Gradient& upstream, const Tensor& input) {
  return clip_backward(upstream, input, -1.0, 1.0);
}

struct MaxPoolResult {
  Tensor output;
  // Flat index into the input sample block for each output element; ties go
  // to the first maximum in (kh, kw) scan order.
  std::vector<std::int64_t> argmax;
};

inline MaxPoolResult max_pool2d(const Tensor& input, std::int64_t window,
                                std::int64_t stride) {
  if (input.order() != 4)
    throw shape_error("max_pool2d: input must be N x C x H x W, got " +
                      shape_str(input.shape()));
  const std::int64_t n = input.extent(0), c = input.extent(1);
  const std::int64_t h = input.extent(2), w = input.extent(3);
  const std::int64_t hout = conv_out_extent(h, window, stride, 0, "max_pool2d");
  const std::int64_t wout = conv_out_extent(w, window, stride, 0, "max_pool2d");

  MaxPoolResult r{Tensor({n, c, hout, wout}), {}};
  r.argmax.assign(static_cast<std::size_t>(r.output.numel()), 0);
  parallel_for(n * c, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t plane = lo; plane < hi; ++plane) {
      const double* src = input.data() + plane * h * w;
      double* dst = r.output.data() + plane * hout * wout;
      std::int64_t* arg = r.argmax.data() + plane * hout * wout;
      for (std::int64_t oy = 0; oy < hout; ++oy)
        for (std::int64_t ox = 0; ox < wout; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = 0;
          for (std::int64_t fy = 0; fy < window; ++fy)
            for (std::int64_t fx = 0; fx < window; ++fx) {
              const std::int64_t idx = (oy * stride + fy) * w + (ox * stride + fx);
              if (src[idx] > best) {
                best = src[idx];
                best_idx = idx;
              }
            }
          dst[oy * wout + ox] = best;
          arg[oy * wout + ox] = plane * h * w + best_idx;
        }
    }
  });
  return r;
}

inline Gradient max_pool2d_backward(const Gradient& out_grad,
                                    const std::vector<std::int64_t>& argmax,
                                    const Shape& input_shape) {
  if (static_cast<std::int64_t>(argmax.size()) != out_grad.numel())
    throw usage_error("max_pool2d_backward: argmax record does not match gradient size");
  Gradient input_grad(input_shape);
  for (std::int64_t i = 0; i < out_grad.numel(); ++i)
    input_grad[argmax[static_cast<std::size_t>(i)]] += out_grad[i];
  return input_grad;
}

inline void check_labels(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  if (logits.order() != 2)
    throw shape_error("softmax_cross_entropy: logits must be N x C, got " +
                      shape_str(logits.shape()));
  if (static_cast<std::int64_t>(labels.size()) != logits.extent(0))
    throw shape_error("softmax_cross_entropy: expected " + std::to_string(logits.extent(0)) +
                      " labels, got " + std::to_string(labels.size()));
  for (auto l : labels)
    if (l < 0 || l >= logits.extent(1))
      throw value_error("softmax_cross_entropy: label " + std::to_string(l) +
                        " out of range [0, " + std::to_string(logits.extent(1)) + ")");
}

// Mean over the batch of -log softmax(logits)[label], max-subtracted for
// stability.
inline double softmax_cross_entropy(const Tensor& logits,
                                    const std::vector<std::int64_t>& labels) {
  check_labels(logits, labels);
  const std::int64_t n = logits.extent(0), c = logits.extent(1);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - m);
    total += std::log(sum) - (row[labels[static_cast<std::size_t>(i)]] - m);
  }
  return total / static_cast<double>(n);
}

// Gradient of the mean loss with respect to the logits.
inline Gradient softmax_cross_entropy_backward(const Tensor& logits,
                                               const std::vector<std::int64_t>& labels) {
  check_labels(logits, labels);
  const std::int64_t n = logits.extent(0), c = logits.extent(1);
  Gradient grad(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * c;
    double* grow = grad.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - m);
    for (std::int64_t j = 0; j < c; ++j) grow[j] = std::exp(row[j] - m) / sum * inv_n;
    grow[labels[static_cast<std::size_t>(i)]] -= inv_n;
  }
  return grad;
}

}  // namespace wrpn

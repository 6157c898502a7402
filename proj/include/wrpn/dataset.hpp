#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "wrpn/serialize.hpp"
#include "wrpn/tensor.hpp"
#include "wrpn/util.hpp"

// IDX image/label ingestion plus a deterministic synthetic 10-class 28x28
// set for desk-scale experiments.

namespace wrpn {

struct Dataset {
  std::int64_t channels = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;  // count * channels * height * width
  std::vector<std::int64_t> labels;

  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t image_elems() const { return channels * height * width; }

  // Batched input tensor, pixel values normalized to [0, 1]. Exact multiples
  // of 1/255, so an 8-bit input quantizer reproduces them losslessly.
  Tensor batch(const std::size_t* indices, std::size_t n) const {
    const std::int64_t elems = image_elems();
    Tensor t({static_cast<std::int64_t>(n), channels, height, width});
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* src = pixels.data() + static_cast<std::int64_t>(indices[i]) * elems;
      double* dst = t.data() + static_cast<std::int64_t>(i) * elems;
      for (std::int64_t j = 0; j < elems; ++j)
        dst[j] = static_cast<double>(src[j]) / 255.0;
    }
    return t;
  }

  std::vector<std::int64_t> batch_labels(const std::size_t* indices, std::size_t n) const {
    std::vector<std::int64_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = labels[indices[i]];
    return out;
  }
};

namespace detail {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// IDX files are big-endian.
class BigEndianReader {
public:
  BigEndianReader(const std::string& buf, std::string origin)
      : buf_(buf), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    if (pos_ + 4 > buf_.size())
      throw parse_error(origin_ + ": truncated at offset " + std::to_string(pos_));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v = (v << 8) | static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 4;
    return v;
  }

  const std::uint8_t* block(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw parse_error(origin_ + ": truncated at offset " + std::to_string(pos_) +
                        " (needed " + std::to_string(n) + " more bytes)");
    const auto* p = reinterpret_cast<const std::uint8_t*>(buf_.data()) + pos_;
    pos_ += n;
    return p;
  }

  std::size_t offset() const { return pos_; }

  void expect_end() {
    if (pos_ != buf_.size())
      throw parse_error(origin_ + ": trailing bytes at offset " + std::to_string(pos_));
  }

private:
  const std::string& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline void put_u32_be(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

// Parses the classic IDX pair: images (magic 0x00000803, dims count x rows x
// cols, u8 pixels) and labels (magic 0x00000801, u8 labels).
inline Dataset ingest_idx(const std::string& images_path, const std::string& labels_path) {
  const std::string ibuf = read_file(images_path);
  detail::BigEndianReader ir(ibuf, images_path);
  const std::uint32_t imagic = ir.u32();
  if (imagic != detail::kIdxImagesMagic) {
    char hex[16];
    std::snprintf(hex, sizeof hex, "0x%08x", imagic);
    throw parse_error(images_path + ": bad magic " + hex + " at offset 0 (expected 0x00000803)");
  }
  const std::uint32_t count = ir.u32();
  const std::uint32_t rows = ir.u32();
  const std::uint32_t cols = ir.u32();
  if (count == 0) throw parse_error(images_path + ": empty image set");
  if (rows == 0 || cols == 0)
    throw parse_error(images_path + ": zero image extent at offset 8");
  const std::size_t n_pixels = static_cast<std::size_t>(count) * rows * cols;
  const std::uint8_t* px = ir.block(n_pixels);
  ir.expect_end();

  const std::string lbuf = read_file(labels_path);
  detail::BigEndianReader lr(lbuf, labels_path);
  const std::uint32_t lmagic = lr.u32();
  if (lmagic != detail::kIdxLabelsMagic) {
    char hex[16];
    std::snprintf(hex, sizeof hex, "0x%08x", lmagic);
    throw parse_error(labels_path + ": bad magic " + hex + " at offset 0 (expected 0x00000801)");
  }
  const std::uint32_t lcount = lr.u32();
  if (lcount != count)
    throw parse_error(labels_path + ": " + std::to_string(lcount) + " labels for " +
                      std::to_string(count) + " images");
  const std::uint8_t* lb = lr.block(lcount);
  lr.expect_end();

  Dataset d;
  d.channels = 1;
  d.height = rows;
  d.width = cols;
  d.pixels.assign(px, px + n_pixels);
  d.labels.assign(lb, lb + lcount);
  return d;
}

inline void save_idx(const Dataset& d, const std::string& images_path,
                     const std::string& labels_path) {
  if (d.channels != 1)
    throw config_error("IDX export supports single-channel images only");
  std::string images;
  detail::put_u32_be(images, detail::kIdxImagesMagic);
  detail::put_u32_be(images, static_cast<std::uint32_t>(d.count()));
  detail::put_u32_be(images, static_cast<std::uint32_t>(d.height));
  detail::put_u32_be(images, static_cast<std::uint32_t>(d.width));
  images.append(reinterpret_cast<const char*>(d.pixels.data()), d.pixels.size());
  write_file(images_path, images);

  std::string labels;
  detail::put_u32_be(labels, detail::kIdxLabelsMagic);
  detail::put_u32_be(labels, static_cast<std::uint32_t>(d.count()));
  for (auto l : d.labels) labels.push_back(static_cast<char>(l));
  write_file(labels_path, labels);
}

// ---------------------------------------------------------------------------
// Synthetic glyph set: ten seven-segment digits rendered with per-sample
// translation, intensity jitter, distractor marks and Gaussian pixel noise.
// Hard enough that a small CNN does not saturate, easy enough to learn from
// a few thousand samples.

struct SynthOptions {
  std::int64_t count = 2000;
  std::uint64_t seed = 1;
  double noise = 0.18;          // sigma of the additive pixel noise
  double min_intensity = 0.55;  // per-sample stroke brightness range
  double max_intensity = 1.0;
  int max_shift = 3;            // uniform translation in both axes
  int distractors = 6;          // random 2x2 clutter marks per image
};

namespace detail {

// Segment order: A top, B top-right, C bottom-right, D bottom, E bottom-left,
// F top-left, G middle.
inline const bool (&digit_segments())[10][7] {
  static const bool table[10][7] = {
      {1, 1, 1, 1, 1, 1, 0},  // 0
      {0, 1, 1, 0, 0, 0, 0},  // 1
      {1, 1, 0, 1, 1, 0, 1},  // 2
      {1, 1, 1, 1, 0, 0, 1},  // 3
      {0, 1, 1, 0, 0, 1, 1},  // 4
      {1, 0, 1, 1, 0, 1, 1},  // 5
      {1, 0, 1, 1, 1, 1, 1},  // 6
      {1, 1, 1, 0, 0, 0, 0},  // 7
      {1, 1, 1, 1, 1, 1, 1},  // 8
      {1, 1, 1, 1, 0, 1, 1},  // 9
  };
  return table;
}

inline void fill_rect(std::vector<double>& canvas, std::int64_t side, std::int64_t x0,
                      std::int64_t y0, std::int64_t x1, std::int64_t y1, double value) {
  x0 = std::max<std::int64_t>(x0, 0);
  y0 = std::max<std::int64_t>(y0, 0);
  x1 = std::min(x1, side - 1);
  y1 = std::min(y1, side - 1);
  for (std::int64_t y = y0; y <= y1; ++y)
    for (std::int64_t x = x0; x <= x1; ++x)
      canvas[static_cast<std::size_t>(y * side + x)] =
          std::max(canvas[static_cast<std::size_t>(y * side + x)], value);
}

}  // namespace detail

inline Dataset synthesize_dataset(const SynthOptions& opt) {
  constexpr std::int64_t side = 28;
  // Glyph frame inside the canvas; leaves room for +/- max_shift translation.
  constexpr std::int64_t left = 9, right = 18, top = 5, mid = 13, bottom = 22;
  constexpr std::int64_t thick = 2;

  Dataset d;
  d.channels = 1;
  d.height = side;
  d.width = side;
  d.pixels.resize(static_cast<std::size_t>(opt.count) * side * side);
  d.labels.resize(static_cast<std::size_t>(opt.count));

  Rng rng(opt.seed);
  std::vector<double> canvas(side * side);
  for (std::int64_t img = 0; img < opt.count; ++img) {
    const int digit = static_cast<int>(rng.below(10));
    const std::int64_t dx = static_cast<std::int64_t>(rng.below(2 * opt.max_shift + 1)) -
                            opt.max_shift;
    const std::int64_t dy = static_cast<std::int64_t>(rng.below(2 * opt.max_shift + 1)) -
                            opt.max_shift;
    const double ink = rng.uniform(opt.min_intensity, opt.max_intensity);
    std::fill(canvas.begin(), canvas.end(), 0.0);

    const bool* segs = detail::digit_segments()[digit];
    const auto rect = [&](std::int64_t x0, std::int64_t y0, std::int64_t x1, std::int64_t y1) {
      detail::fill_rect(canvas, side, x0 + dx, y0 + dy, x1 + dx, y1 + dy,
                        ink * rng.uniform(0.85, 1.0));
    };
    if (segs[0]) rect(left, top, right, top + thick - 1);                    // A
    if (segs[1]) rect(right - thick + 1, top, right, mid);                   // B
    if (segs[2]) rect(right - thick + 1, mid, right, bottom);                // C
    if (segs[3]) rect(left, bottom - thick + 1, right, bottom);              // D
    if (segs[4]) rect(left, mid, left + thick - 1, bottom);                  // E
    if (segs[5]) rect(left, top, left + thick - 1, mid);                     // F
    if (segs[6]) rect(left, mid - thick / 2, right, mid - thick / 2 + thick - 1);  // G

    for (int k = 0; k < opt.distractors; ++k) {
      const std::int64_t x = static_cast<std::int64_t>(rng.below(side - 1));
      const std::int64_t y = static_cast<std::int64_t>(rng.below(side - 1));
      detail::fill_rect(canvas, side, x, y, x + 1, y + 1,
                        rng.uniform(0.3, opt.max_intensity));
    }

    std::uint8_t* out = d.pixels.data() + img * side * side;
    for (std::int64_t p = 0; p < side * side; ++p) {
      const double v =
          std::min(1.0, std::max(0.0, canvas[static_cast<std::size_t>(p)] +
                                          opt.noise * rng.normal()));
      out[p] = static_cast<std::uint8_t>(std::llround(v * 255.0));
    }
    d.labels[static_cast<std::size_t>(img)] = digit;
  }
  return d;
}

}  // namespace wrpn

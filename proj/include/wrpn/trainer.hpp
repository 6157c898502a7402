#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrpn/dataset.hpp"
#include "wrpn/engine.hpp"
#include "wrpn/model.hpp"
#include "wrpn/serialize.hpp"
#include "wrpn/tensor_ops.hpp"
#include "wrpn/util.hpp"

// Desk-scale from-scratch training: SGD with momentum on full-precision
// master weights through the fake-quantized forward/backward. Every run is
// fully determined by (config, seed): the shuffle, augmentation draws and
// reduction orders are all fixed.

namespace wrpn {

struct QuantConfig {
  BitsOverride all;
  BitsOverride input_adjacent;
  BitsOverride internal;
  BitsOverride output_adjacent;

  NetworkDescriptor apply(const NetworkDescriptor& net) const {
    NetworkDescriptor out = override_bits(net, all);
    return override_bits(out, input_adjacent, internal, output_adjacent);
  }
};

struct TrainConfig {
  std::string descriptor;  // path or preset name
  std::string train_images, train_labels;
  std::string test_images, test_labels;
  std::int64_t epochs = 1;
  std::int64_t batch_size = 32;
  double learning_rate = 0.05;
  std::vector<std::int64_t> lr_decay_epochs;  // 0-based epochs where the rate decays
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool seed_set = false;  // the seed is mandatory; there is no silent default
  double widening = 1.0;
  QuantConfig quant;
  bool augment_hflip = false;
  bool augment_crop = false;
  ExecMode mode = ExecMode::FakeQuant;
  std::string checkpoint_out;
  std::string metrics_out;
};

namespace detail {

inline std::string resolve_path(const std::string& path, const std::string& base_dir) {
  if (path.empty() || base_dir.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

inline BitsOverride bits_override_from_json(const json& j, const std::string& where) {
  check_keys(j, {"weight_bits", "activation_bits"}, where);
  BitsOverride o;
  o.weight_bits = static_cast<int>(get_int_or(j, "weight_bits", 0, where));
  o.activation_bits = static_cast<int>(get_int_or(j, "activation_bits", 0, where));
  return o;
}

}  // namespace detail

inline TrainConfig train_config_from_json(const json& j, const std::string& base_dir) {
  using namespace detail;
  const std::string where = "train config";
  if (!j.is_object()) throw parse_error(where + ": expected a JSON object");
  check_keys(j,
             {"descriptor", "dataset", "epochs", "batch_size", "learning_rate",
              "lr_decay_epochs", "lr_decay_factor", "momentum", "weight_decay", "seed",
              "widening", "quant", "augment_hflip", "augment_crop", "mode",
              "checkpoint_out", "metrics_out"},
             where);

  TrainConfig c;
  const json& desc = require(j, "descriptor", where);
  if (!desc.is_string()) throw parse_error(where + ": 'descriptor' must be a string");
  c.descriptor = desc.get<std::string>();
  // Preset names resolve in the descriptor loader; paths resolve here.
  if (c.descriptor.find('.') != std::string::npos || c.descriptor.find('/') != std::string::npos)
    c.descriptor = resolve_path(c.descriptor, base_dir);

  const json& ds = require(j, "dataset", where);
  if (!ds.is_object()) throw parse_error(where + ": 'dataset' must be an object");
  check_keys(ds, {"train_images", "train_labels", "test_images", "test_labels"},
             where + ".dataset");
  const auto path_field = [&](const char* key) {
    const json& v = require(ds, key, where + ".dataset");
    if (!v.is_string())
      throw parse_error(where + ".dataset: '" + key + "' must be a string");
    return resolve_path(v.get<std::string>(), base_dir);
  };
  c.train_images = path_field("train_images");
  c.train_labels = path_field("train_labels");
  c.test_images = path_field("test_images");
  c.test_labels = path_field("test_labels");

  c.epochs = get_int(j, "epochs", where);
  c.batch_size = get_int_or(j, "batch_size", 32, where);
  if (c.epochs < 1 || c.batch_size < 1)
    throw parse_error(where + ": epochs and batch_size must be positive");

  const auto number_field = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number())
      throw parse_error(where + ": '" + std::string(key) + "' must be a number");
    return j[key].get<double>();
  };
  c.learning_rate = number_field("learning_rate", 0.05);
  c.lr_decay_factor = number_field("lr_decay_factor", 0.1);
  c.momentum = number_field("momentum", 0.9);
  c.weight_decay = number_field("weight_decay", 5e-4);
  c.widening = number_field("widening", 1.0);
  if (!(c.learning_rate > 0.0)) throw parse_error(where + ": learning_rate must be positive");
  if (!(c.widening > 0.0)) throw parse_error(where + ": widening must be positive");

  if (j.contains("lr_decay_epochs")) {
    const json& arr = j["lr_decay_epochs"];
    if (!arr.is_array()) throw parse_error(where + ": 'lr_decay_epochs' must be an array");
    for (const auto& v : arr) {
      if (!v.is_number_integer())
        throw parse_error(where + ": 'lr_decay_epochs' entries must be integers");
      c.lr_decay_epochs.push_back(v.get<std::int64_t>());
    }
  }

  if (!j.contains("seed")) throw parse_error(where + ": 'seed' is required");
  if (!j["seed"].is_number_integer()) throw parse_error(where + ": 'seed' must be an integer");
  c.seed = j["seed"].get<std::uint64_t>();
  c.seed_set = true;

  if (j.contains("quant")) {
    const json& q = j["quant"];
    if (!q.is_object()) throw parse_error(where + ": 'quant' must be an object");
    check_keys(q, {"all", "input_adjacent", "internal", "output_adjacent"}, where + ".quant");
    if (q.contains("all"))
      c.quant.all = detail::bits_override_from_json(q["all"], where + ".quant.all");
    if (q.contains("input_adjacent"))
      c.quant.input_adjacent =
          detail::bits_override_from_json(q["input_adjacent"], where + ".quant.input_adjacent");
    if (q.contains("internal"))
      c.quant.internal =
          detail::bits_override_from_json(q["internal"], where + ".quant.internal");
    if (q.contains("output_adjacent"))
      c.quant.output_adjacent = detail::bits_override_from_json(
          q["output_adjacent"], where + ".quant.output_adjacent");
  }

  const auto bool_field = [&](const char* key, bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_boolean())
      throw parse_error(where + ": '" + std::string(key) + "' must be a boolean");
    return j[key].get<bool>();
  };
  c.augment_hflip = bool_field("augment_hflip", false);
  c.augment_crop = bool_field("augment_crop", false);

  if (j.contains("mode")) {
    const json& m = j["mode"];
    if (!m.is_string()) throw parse_error(where + ": 'mode' must be a string");
    const std::string s = m.get<std::string>();
    if (s == "fake_quant")
      c.mode = ExecMode::FakeQuant;
    else if (s == "float")
      c.mode = ExecMode::Float;
    else
      throw parse_error(where + ": mode must be 'fake_quant' or 'float'");
  }

  const auto out_field = [&](const char* key) -> std::string {
    if (!j.contains(key)) return {};
    if (!j[key].is_string())
      throw parse_error(where + ": '" + std::string(key) + "' must be a string");
    return detail::resolve_path(j[key].get<std::string>(), base_dir);
  };
  c.checkpoint_out = out_field("checkpoint_out");
  c.metrics_out = out_field("metrics_out");
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw parse_error(path + ": " + e.what());
  }
  try {
    return train_config_from_json(j, std::filesystem::path(path).parent_path().string());
  } catch (const parse_error& e) {
    throw parse_error(path + ": " + e.what());
  }
}

// Descriptor string -> descriptor: file path if it exists, preset otherwise.
inline NetworkDescriptor load_descriptor_or_preset(const std::string& name) {
  if (std::filesystem::exists(name)) return load_descriptor(name);
  for (const auto& preset : presets::names())
    if (preset == name) return presets::by_name(name);
  throw parse_error("descriptor '" + name + "' is neither a file nor a preset (presets: " +
                    [] {
                      std::string s;
                      for (const auto& n : presets::names()) {
                        if (!s.empty()) s += ", ";
                        s += n;
                      }
                      return s;
                    }() + ")");
}

struct EpochMetrics {
  std::int64_t epoch = 0;  // 1-based in logs
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
  std::string metrics_csv;
};

inline double evaluate(const NetworkDescriptor& net, const Parameters& params,
                       const Dataset& data, ExecMode mode = ExecMode::FakeQuant) {
  constexpr std::size_t kEvalBatch = 128;
  std::vector<std::size_t> indices(static_cast<std::size_t>(data.count()));
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  std::int64_t correct = 0;
  for (std::size_t off = 0; off < indices.size(); off += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, indices.size() - off);
    const Tensor batch = data.batch(indices.data() + off, n);
    const ForwardPass pass = forward(net, params, batch, mode);
    const std::int64_t classes = pass.logits.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = pass.logits.data() + static_cast<std::int64_t>(i) * classes;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
      if (best == data.labels[off + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.count());
}

inline double evaluate(const Checkpoint& ckpt, const Dataset& data,
                       ExecMode mode = ExecMode::FakeQuant) {
  return evaluate(ckpt.descriptor, ckpt.weights, data, mode);
}

namespace detail {

// Shift one sample by (dx, dy), zero filling the exposed border.
inline void shift_sample(double* img, std::int64_t c, std::int64_t h, std::int64_t w,
                         std::int64_t dx, std::int64_t dy) {
  if (dx == 0 && dy == 0) return;
  std::vector<double> tmp(static_cast<std::size_t>(h * w));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double* plane = img + ch * h * w;
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t sy = y - dy;
      if (sy < 0 || sy >= h) continue;
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sx = x - dx;
        if (sx >= 0 && sx < w) tmp[static_cast<std::size_t>(y * w + x)] = plane[sy * w + sx];
      }
    }
    std::copy(tmp.begin(), tmp.end(), plane);
  }
}

inline std::string format_metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out = "epoch,loss,train_acc,test_acc\n";
  char buf[128];
  for (const auto& m : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(m.epoch), m.loss, m.train_acc, m.test_acc);
    out += buf;
  }
  return out;
}

}  // namespace detail

inline TrainResult train(const TrainConfig& config, const Dataset& train_set,
                         const Dataset& test_set) {
  if (!config.seed_set) throw config_error("training requires an explicit seed");

  NetworkDescriptor net = load_descriptor_or_preset(config.descriptor);
  net = widen(net, config.widening);
  net = config.quant.apply(net);
  const ResolvedNet resolved = resolve(net);

  if (train_set.channels != net.input.channels || train_set.height != net.input.height ||
      train_set.width != net.input.width)
    throw config_error("dataset images " +
                       shape_str({train_set.channels, train_set.height, train_set.width}) +
                       " do not match descriptor input " +
                       shape_str({net.input.channels, net.input.height, net.input.width}));
  for (auto l : train_set.labels)
    if (l < 0 || l >= net.class_count)
      throw value_error("training label " + std::to_string(l) + " out of range [0, " +
                        std::to_string(net.class_count) + ")");
  for (auto l : test_set.labels)
    if (l < 0 || l >= net.class_count)
      throw value_error("test label " + std::to_string(l) + " out of range");

  Parameters params = init_parameters(net, config.seed);
  Parameters velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i].empty()) velocity[i] = Tensor(params[i].shape());

  Rng rng(config.seed ^ 0x747261696e5f5fULL);  // decoupled from the init stream
  const std::size_t n_train = static_cast<std::size_t>(train_set.count());

  TrainResult result;
  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.learning_rate;
    for (auto d : config.lr_decay_epochs)
      if (epoch >= d) lr *= config.lr_decay_factor;

    const std::vector<std::size_t> perm = rng.permutation(n_train);
    double loss_sum = 0.0;
    std::int64_t seen = 0, correct = 0;

    for (std::size_t off = 0; off < n_train; off += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t n = std::min(static_cast<std::size_t>(config.batch_size), n_train - off);
      Tensor batch = train_set.batch(perm.data() + off, n);
      const std::vector<std::int64_t> labels = train_set.batch_labels(perm.data() + off, n);

      if (config.augment_hflip || config.augment_crop) {
        const std::int64_t c = batch.extent(1), h = batch.extent(2), w = batch.extent(3);
        for (std::size_t i = 0; i < n; ++i) {
          double* img = batch.data() + static_cast<std::int64_t>(i) * c * h * w;
          if (config.augment_crop) {
            const std::int64_t dx = static_cast<std::int64_t>(rng.below(5)) - 2;
            const std::int64_t dy = static_cast<std::int64_t>(rng.below(5)) - 2;
            detail::shift_sample(img, c, h, w, dx, dy);
          }
          if (config.augment_hflip && rng.below(2) == 1) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
              double* plane = img + ch * h * w;
              for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w / 2; ++x)
                  std::swap(plane[y * w + x], plane[y * w + (w - 1 - x)]);
            }
          }
        }
      }

      const ForwardPass pass = forward(net, params, batch, config.mode, /*record=*/true);
      const double loss = softmax_cross_entropy(pass.logits, labels);
      if (!std::isfinite(loss))
        throw value_error("training diverged: non-finite loss at epoch " +
                          std::to_string(epoch + 1) + ", batch offset " + std::to_string(off) +
                          " (reduce the learning rate)");
      const Gradient logits_grad = softmax_cross_entropy_backward(pass.logits, labels);
      const Parameters grads = backward(net, params, pass, logits_grad);

      for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].empty()) continue;
        Tensor& w = params[i];
        Tensor& v = velocity[i];
        const Tensor& g = grads[i];
        for (std::int64_t j = 0; j < w.numel(); ++j) {
          v[j] = config.momentum * v[j] - lr * (g[j] + config.weight_decay * w[j]);
          w[j] += v[j];
        }
      }

      loss_sum += loss * static_cast<double>(n);
      seen += static_cast<std::int64_t>(n);
      const std::int64_t classes = pass.logits.extent(1);
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = pass.logits.data() + static_cast<std::int64_t>(i) * classes;
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < classes; ++c)
          if (row[c] > row[best]) best = c;
        if (best == labels[i]) ++correct;
      }
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    m.test_acc = evaluate(net, params, test_set, config.mode);
    result.metrics.push_back(m);
  }

  result.checkpoint.descriptor = net;
  result.checkpoint.weights = std::move(params);
  result.checkpoint.momentum = std::move(velocity);
  result.checkpoint.epoch = static_cast<std::uint64_t>(config.epochs);
  result.checkpoint.seed = config.seed;
  result.checkpoint.rng_state = rng.state();
  result.metrics_csv = detail::format_metrics_csv(result.metrics);

  if (!config.metrics_out.empty()) write_file(config.metrics_out, result.metrics_csv);
  if (!config.checkpoint_out.empty()) save_checkpoint(result.checkpoint, config.checkpoint_out);
  return result;
}

inline TrainResult train(const TrainConfig& config) {
  const Dataset train_set = ingest_idx(config.train_images, config.train_labels);
  const Dataset test_set = ingest_idx(config.test_images, config.test_labels);
  return train(config, train_set, test_set);
}

// ---------------------------------------------------------------------------
// Experiment grid: trains every (k_W, k_A, widening) cell with identical
// seeds and hyperparameters and emits one CSV row per cell and seed.
// Per-cell failures are recorded and the grid keeps going.

struct GridConfig {
  TrainConfig base;
  std::vector<int> weight_bits;
  std::vector<int> activation_bits;
  std::vector<double> widenings;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

inline GridConfig grid_config_from_json(const json& j, const std::string& base_dir) {
  using namespace detail;
  const std::string where = "grid config";
  if (!j.is_object()) throw parse_error(where + ": expected a JSON object");
  check_keys(j, {"base", "weight_bits", "activation_bits", "widenings", "seeds", "out"},
             where);
  GridConfig g;
  json base = require(j, "base", where);
  if (!base.is_object()) throw parse_error(where + ": 'base' must be an object");
  if (!base.contains("seed")) base["seed"] = 0;  // grid seeds replace it per run
  g.base = train_config_from_json(base, base_dir);

  const auto int_list = [&](const char* key, auto& dst) {
    const json& arr = require(j, key, where);
    if (!arr.is_array() || arr.empty())
      throw parse_error(where + ": '" + std::string(key) + "' must be a non-empty array");
    for (const auto& v : arr) {
      if (!v.is_number())
        throw parse_error(where + ": '" + std::string(key) + "' entries must be numbers");
      dst.push_back(v.get<typename std::decay_t<decltype(dst)>::value_type>());
    }
  };
  int_list("weight_bits", g.weight_bits);
  int_list("activation_bits", g.activation_bits);
  if (j.contains("widenings"))
    int_list("widenings", g.widenings);
  else
    g.widenings = {1.0};
  int_list("seeds", g.seeds);
  if (j.contains("out")) {
    if (!j["out"].is_string()) throw parse_error(where + ": 'out' must be a string");
    g.out = resolve_path(j["out"].get<std::string>(), base_dir);
  }
  return g;
}

inline GridConfig load_grid_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw parse_error(path + ": " + e.what());
  }
  try {
    return grid_config_from_json(j, std::filesystem::path(path).parent_path().string());
  } catch (const parse_error& e) {
    throw parse_error(path + ": " + e.what());
  }
}

struct GridCell {
  int weight_bits = 32;
  int activation_bits = 32;
  double widening = 1.0;
  std::uint64_t seed = 0;
  double test_acc = 0.0;
  bool ok = false;
  std::string error;
};

inline std::string grid_to_csv(const std::vector<GridCell>& cells) {
  std::string out = "k_w,k_a,widen,seed,test_acc,status\n";
  char buf[192];
  for (const auto& c : cells) {
    if (c.ok) {
      std::snprintf(buf, sizeof buf, "%d,%d,%g,%llu,%.6f,ok\n", c.weight_bits,
                    c.activation_bits, c.widening, static_cast<unsigned long long>(c.seed),
                    c.test_acc);
      out += buf;
    } else {
      std::string msg = c.error;
      for (auto& ch : msg)
        if (ch == ',' || ch == '\n') ch = ' ';
      std::snprintf(buf, sizeof buf, "%d,%d,%g,%llu,,error: ", c.weight_bits,
                    c.activation_bits, c.widening, static_cast<unsigned long long>(c.seed));
      out += buf;
      out += msg + "\n";
    }
  }
  return out;
}

inline std::vector<GridCell> run_grid(const GridConfig& grid) {
  const Dataset train_set = ingest_idx(grid.base.train_images, grid.base.train_labels);
  const Dataset test_set = ingest_idx(grid.base.test_images, grid.base.test_labels);

  std::vector<GridCell> cells;
  for (const int kw : grid.weight_bits)
    for (const int ka : grid.activation_bits)
      for (const double m : grid.widenings)
        for (const std::uint64_t seed : grid.seeds) {
          GridCell cell;
          cell.weight_bits = kw;
          cell.activation_bits = ka;
          cell.widening = m;
          cell.seed = seed;
          try {
            TrainConfig c = grid.base;
            c.seed = seed;
            c.seed_set = true;
            c.widening = m;
            c.quant.all = {kw, ka};
            c.checkpoint_out.clear();
            c.metrics_out.clear();
            const TrainResult r = train(c, train_set, test_set);
            cell.test_acc = r.metrics.back().test_acc;
            cell.ok = true;
          } catch (const std::exception& e) {
            cell.error = e.what();
          }
          cells.push_back(std::move(cell));
        }
  if (!grid.out.empty()) write_file(grid.out, grid_to_csv(cells));
  return cells;
}

}  // namespace wrpn

#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrpn/model.hpp"
#include "wrpn/quant.hpp"
#include "wrpn/util.hpp"

// File formats:
//   - descriptor: JSON, strict (unknown keys are rejected)
//   - checkpoint: little-endian binary, magic "WRPN"
//   - quantized model: little-endian binary, magic "WRPQ"

namespace wrpn {

using json = nlohmann::json;

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw error("short write to " + path);
}

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key()))
      throw parse_error(where + ": unknown field '" + it.key() + "'");
}

inline const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw parse_error(where + ": missing field '" + key + "'");
  return *it;
}

inline std::int64_t get_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer())
    throw parse_error(where + ": field '" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

inline std::int64_t get_int_or(const json& obj, const char* key, std::int64_t fallback,
                               const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return get_int(obj, key, where);
}

inline LayerRole role_from_string(const std::string& s, const std::string& where) {
  if (s == "input_adjacent") return LayerRole::InputAdjacent;
  if (s == "internal") return LayerRole::Internal;
  if (s == "output_adjacent") return LayerRole::OutputAdjacent;
  throw parse_error(where + ": unknown role '" + s + "'");
}

}  // namespace detail

inline json to_json(const NetworkDescriptor& net) {
  json j;
  j["name"] = net.name;
  if (!net.comment.empty()) j["comment"] = net.comment;
  j["input"] = {{"channels", net.input.channels},
                {"height", net.input.height},
                {"width", net.input.width},
                {"bits", net.input.bits}};
  j["classes"] = net.class_count;
  j["widening"] = net.widening;
  json layers = json::array();
  for (const auto& l : net.layers) {
    json lj;
    lj["kind"] = to_string(l.kind);
    switch (l.kind) {
      case LayerKind::Conv:
        lj["out_channels"] = l.base_channels_out;
        lj["kernel"] = l.kernel;
        lj["stride"] = l.stride;
        lj["padding"] = l.padding;
        lj["weight_bits"] = l.weight_spec.k;
        lj["role"] = to_string(l.role);
        if (l.residual_from >= 0) lj["residual_from"] = l.residual_from;
        break;
      case LayerKind::FullyConnected:
        lj["out_features"] = l.base_channels_out;
        lj["weight_bits"] = l.weight_spec.k;
        lj["role"] = to_string(l.role);
        break;
      case LayerKind::Output:
        lj["weight_bits"] = l.weight_spec.k;
        break;
      case LayerKind::Activation:
        lj["bits"] = l.activation_spec.k;
        lj["role"] = to_string(l.role);
        if (l.residual_from >= 0) lj["residual_from"] = l.residual_from;
        break;
      case LayerKind::Pool:
        lj["window"] = l.kernel;
        lj["stride"] = l.stride;
        break;
      case LayerKind::Flatten:
        break;
    }
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

inline NetworkDescriptor descriptor_from_json(const json& j) {
  using namespace detail;
  const std::string where = "descriptor";
  if (!j.is_object()) throw parse_error(where + ": expected a JSON object");
  check_keys(j, {"name", "comment", "input", "classes", "widening", "layers"}, where);

  NetworkDescriptor net;
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw parse_error(where + ": 'name' must be a string");
    net.name = j["name"].get<std::string>();
  }
  if (j.contains("comment")) {
    if (!j["comment"].is_string()) throw parse_error(where + ": 'comment' must be a string");
    net.comment = j["comment"].get<std::string>();
  }

  const json& in = require(j, "input", where);
  if (!in.is_object()) throw parse_error(where + ": 'input' must be an object");
  check_keys(in, {"channels", "height", "width", "bits"}, where + ".input");
  net.input.channels = get_int(in, "channels", where + ".input");
  net.input.height = get_int(in, "height", where + ".input");
  net.input.width = get_int(in, "width", where + ".input");
  net.input.bits = static_cast<int>(get_int_or(in, "bits", 32, where + ".input"));

  net.class_count = get_int(j, "classes", where);
  if (j.contains("widening")) {
    if (!j["widening"].is_number())
      throw parse_error(where + ": 'widening' must be a number");
    net.widening = j["widening"].get<double>();
  }

  const json& layers = require(j, "layers", where);
  if (!layers.is_array()) throw parse_error(where + ": 'layers' must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const json& lj = layers[i];
    const std::string lw = where + ".layers[" + std::to_string(i) + "]";
    if (!lj.is_object()) throw parse_error(lw + ": expected an object");
    const json& kindj = require(lj, "kind", lw);
    if (!kindj.is_string()) throw parse_error(lw + ": 'kind' must be a string");
    const std::string kind = kindj.get<std::string>();

    LayerDescriptor l;
    if (kind == "conv") {
      check_keys(lj,
                 {"kind", "out_channels", "kernel", "stride", "padding", "weight_bits",
                  "role", "residual_from"},
                 lw);
      l.kind = LayerKind::Conv;
      l.base_channels_out = get_int(lj, "out_channels", lw);
      l.kernel = get_int(lj, "kernel", lw);
      l.stride = get_int_or(lj, "stride", 1, lw);
      l.padding = get_int_or(lj, "padding", 0, lw);
      l.weight_spec = {static_cast<int>(get_int_or(lj, "weight_bits", 32, lw)),
                       QuantKind::Weight};
      l.residual_from = static_cast<std::int32_t>(get_int_or(lj, "residual_from", -1, lw));
    } else if (kind == "fc") {
      check_keys(lj, {"kind", "out_features", "weight_bits", "role"}, lw);
      l.kind = LayerKind::FullyConnected;
      l.base_channels_out = get_int(lj, "out_features", lw);
      l.weight_spec = {static_cast<int>(get_int_or(lj, "weight_bits", 32, lw)),
                       QuantKind::Weight};
    } else if (kind == "output") {
      check_keys(lj, {"kind", "weight_bits"}, lw);
      l.kind = LayerKind::Output;
      l.role = LayerRole::OutputAdjacent;
      l.weight_spec = {static_cast<int>(get_int_or(lj, "weight_bits", 32, lw)),
                       QuantKind::Weight};
    } else if (kind == "activation") {
      check_keys(lj, {"kind", "bits", "role", "residual_from"}, lw);
      l.kind = LayerKind::Activation;
      l.activation_spec = {static_cast<int>(get_int_or(lj, "bits", 32, lw)),
                           QuantKind::Activation};
      l.residual_from = static_cast<std::int32_t>(get_int_or(lj, "residual_from", -1, lw));
    } else if (kind == "pool") {
      check_keys(lj, {"kind", "window", "stride"}, lw);
      l.kind = LayerKind::Pool;
      l.kernel = get_int(lj, "window", lw);
      l.stride = get_int(lj, "stride", lw);
    } else if (kind == "flatten") {
      check_keys(lj, {"kind"}, lw);
      l.kind = LayerKind::Flatten;
    } else {
      throw parse_error(lw + ": unknown layer kind '" + kind + "'");
    }
    if (lj.contains("role") && kind != "output" && kind != "pool" && kind != "flatten") {
      const json& rj = lj["role"];
      if (!rj.is_string()) throw parse_error(lw + ": 'role' must be a string");
      l.role = detail::role_from_string(rj.get<std::string>(), lw);
    }
    net.layers.push_back(std::move(l));
  }
  return net;
}

// Canonical serialization (sorted keys, compact) used both for files and for
// the checkpoint compatibility hash.
inline std::string descriptor_to_string(const NetworkDescriptor& net) {
  return to_json(net).dump(2) + "\n";
}

inline std::uint64_t descriptor_hash(const NetworkDescriptor& net) {
  return fnv1a64(to_json(net).dump());
}

inline NetworkDescriptor parse_descriptor(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw parse_error(origin + ": " + e.what());
  }
  try {
    return descriptor_from_json(j);
  } catch (const parse_error& e) {
    throw parse_error(origin + ": " + e.what());
  }
}

inline NetworkDescriptor load_descriptor(const std::string& path) {
  return parse_descriptor(read_file(path), path);
}

inline void save_descriptor(const NetworkDescriptor& net, const std::string& path) {
  write_file(path, descriptor_to_string(net));
}

// ---------------------------------------------------------------------------
// Checkpoint: master weights, optimizer state, epoch counter and RNG state,
// bound to the descriptor via an FNV-1a hash. Master weights are the
// unquantized trainable values; quantization is applied on read.

struct Checkpoint {
  NetworkDescriptor descriptor;
  Parameters weights;
  Parameters momentum;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  std::array<std::uint64_t, 4> rng_state{};
};

namespace detail {

constexpr char kCheckpointMagic[5] = "WRPN";
constexpr char kQuantModelMagic[5] = "WRPQ";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kQuantModelVersion = 1;

inline void put_tensor(std::string& out, const Tensor& t) {
  io::put_u32(out, t.empty() ? 0u : 1u);
  if (t.empty()) return;
  io::put_u32(out, static_cast<std::uint32_t>(t.order()));
  for (auto e : t.shape()) io::put_u64(out, static_cast<std::uint64_t>(e));
  io::put_u64(out, static_cast<std::uint64_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) io::put_f64(out, t[i]);
}

inline Tensor get_tensor(io::Reader& r, const std::string& origin) {
  if (r.u32() == 0) return Tensor();
  const std::uint32_t order = r.u32();
  if (order < 1 || order > 4)
    throw parse_error(origin + ": bad tensor order at offset " + std::to_string(r.offset()));
  Shape shape(order);
  for (auto& e : shape) e = static_cast<std::int64_t>(r.u64());
  const std::uint64_t count = r.u64();
  if (count != static_cast<std::uint64_t>(shape_numel(shape)))
    throw parse_error(origin + ": tensor length does not match its shape at offset " +
                      std::to_string(r.offset()));
  std::vector<double> data(count);
  for (auto& v : data) v = r.f64();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

inline std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
  if (ckpt.weights.size() != ckpt.descriptor.layers.size())
    throw internal_error("checkpoint weights not aligned with descriptor layers");
  std::string out;
  out.append(detail::kCheckpointMagic, 4);
  io::put_u32(out, detail::kCheckpointVersion);
  io::put_u64(out, descriptor_hash(ckpt.descriptor));
  const std::string desc = to_json(ckpt.descriptor).dump();
  io::put_u64(out, desc.size());
  out += desc;
  io::put_u64(out, ckpt.epoch);
  io::put_u64(out, ckpt.seed);
  for (auto s : ckpt.rng_state) io::put_u64(out, s);
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.weights.size()));
  for (const auto& w : ckpt.weights) detail::put_tensor(out, w);
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.momentum.size()));
  for (const auto& m : ckpt.momentum) detail::put_tensor(out, m);
  return out;
}

inline Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& origin) {
  io::Reader r(bytes, origin);
  if (r.bytes(4) != std::string(detail::kCheckpointMagic, 4))
    throw parse_error(origin + ": bad magic, not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion)
    throw parse_error(origin + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  const std::uint64_t stored_hash = r.u64();
  const std::uint64_t desc_len = r.u64();
  const std::string desc_json = r.bytes(desc_len);
  ckpt.descriptor = parse_descriptor(desc_json, origin);
  if (descriptor_hash(ckpt.descriptor) != stored_hash)
    throw parse_error(origin + ": descriptor hash does not match embedded descriptor");
  ckpt.epoch = r.u64();
  ckpt.seed = r.u64();
  for (auto& s : ckpt.rng_state) s = r.u64();

  const std::uint32_t n_weights = r.u32();
  if (n_weights != ckpt.descriptor.layers.size())
    throw parse_error(origin + ": weight count does not match descriptor layers");
  ckpt.weights.resize(n_weights);
  for (auto& w : ckpt.weights) w = detail::get_tensor(r, origin);
  const std::uint32_t n_momentum = r.u32();
  if (n_momentum != ckpt.descriptor.layers.size())
    throw parse_error(origin + ": momentum count does not match descriptor layers");
  ckpt.momentum.resize(n_momentum);
  for (auto& m : ckpt.momentum) m = detail::get_tensor(r, origin);
  r.expect_end();

  // Shape check against the embedded descriptor so a corrupt file cannot
  // produce a checkpoint that later fails deep inside the engine.
  const ResolvedNet res = resolve(ckpt.descriptor);
  for (std::size_t i = 0; i < res.layers.size(); ++i) {
    const Shape& expect = res.layers[i].weight_shape;
    if (ckpt.weights[i].shape() != expect && !(expect.empty() && ckpt.weights[i].empty()))
      throw parse_error(origin + ": layer " + std::to_string(i) + " weight shape " +
                        shape_str(ckpt.weights[i].shape()) + " does not match descriptor");
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, checkpoint_to_bytes(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes(read_file(path), path);
}

// Loads and additionally requires compatibility with `expected`; loading a
// checkpoint against an edited descriptor is an error.
inline Checkpoint load_checkpoint(const std::string& path, const NetworkDescriptor& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (descriptor_hash(ckpt.descriptor) != descriptor_hash(expected))
    throw incompat_error(path + ": checkpoint was written for descriptor '" +
                         ckpt.descriptor.name + "' (hash mismatch with the given descriptor)");
  return ckpt;
}

// ---------------------------------------------------------------------------
// Quantized model: integer weight codes plus per-layer scales, with the
// (already re-specced) descriptor embedded.

struct QuantizedModel {
  NetworkDescriptor descriptor;
  int weight_bits = 8;
  int activation_bits = 8;
  std::vector<QuantizedTensor> weights;  // aligned with descriptor layers
};

inline std::string quantized_model_to_bytes(const QuantizedModel& m) {
  std::string out;
  out.append(detail::kQuantModelMagic, 4);
  io::put_u32(out, detail::kQuantModelVersion);
  const std::string desc = to_json(m.descriptor).dump();
  io::put_u64(out, desc.size());
  out += desc;
  io::put_u32(out, static_cast<std::uint32_t>(m.weight_bits));
  io::put_u32(out, static_cast<std::uint32_t>(m.activation_bits));
  io::put_u32(out, static_cast<std::uint32_t>(m.weights.size()));
  for (const auto& q : m.weights) {
    const bool present = !q.codes.empty();
    io::put_u32(out, present ? 1u : 0u);
    if (!present) continue;
    io::put_u32(out, static_cast<std::uint32_t>(q.k));
    io::put_f64(out, q.scale);
    io::put_u32(out, static_cast<std::uint32_t>(q.shape.size()));
    for (auto e : q.shape) io::put_u64(out, static_cast<std::uint64_t>(e));
    io::put_u64(out, q.codes.size());
    for (auto c : q.codes) io::put_u32(out, static_cast<std::uint32_t>(c));
  }
  return out;
}

inline QuantizedModel quantized_model_from_bytes(const std::string& bytes,
                                                 const std::string& origin) {
  io::Reader r(bytes, origin);
  if (r.bytes(4) != std::string(detail::kQuantModelMagic, 4))
    throw parse_error(origin + ": bad magic, not a quantized model file");
  const std::uint32_t version = r.u32();
  if (version != detail::kQuantModelVersion)
    throw parse_error(origin + ": unsupported model version " + std::to_string(version));
  QuantizedModel m;
  const std::uint64_t desc_len = r.u64();
  m.descriptor = parse_descriptor(r.bytes(desc_len), origin);
  m.weight_bits = static_cast<int>(r.u32());
  m.activation_bits = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  if (n != m.descriptor.layers.size())
    throw parse_error(origin + ": weight count does not match descriptor layers");
  m.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (r.u32() == 0) continue;
    QuantizedTensor q;
    q.kind = QuantKind::Weight;
    q.k = static_cast<int>(r.u32());
    q.scale = r.f64();
    const std::uint32_t order = r.u32();
    q.shape.resize(order);
    for (auto& e : q.shape) e = static_cast<std::int64_t>(r.u64());
    const std::uint64_t count = r.u64();
    if (count != static_cast<std::uint64_t>(shape_numel(q.shape)))
      throw parse_error(origin + ": code count does not match shape at offset " +
                        std::to_string(r.offset()));
    q.codes.resize(count);
    for (auto& c : q.codes) c = static_cast<std::int32_t>(r.u32());
    m.weights[i] = std::move(q);
  }
  r.expect_end();
  return m;
}

inline void save_quantized_model(const QuantizedModel& m, const std::string& path) {
  write_file(path, quantized_model_to_bytes(m));
}

inline QuantizedModel load_quantized_model(const std::string& path) {
  return quantized_model_from_bytes(read_file(path), path);
}

}  // namespace wrpn

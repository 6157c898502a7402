#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wrpn/model.hpp"
#include "wrpn/util.hpp"

// Static descriptor analysis: per-layer FMA counts, the bit-width compute
// cost model (cost = FMAs x k_W x k_A), and activation/weight memory
// footprints by phase and batch size. Everything here is exact integer
// arithmetic on resolved shapes; nothing executes.

namespace wrpn {

// Exact ratio of two exact totals.
struct Ratio {
  std::uint64_t num = 1;
  std::uint64_t den = 1;

  Ratio() = default;
  Ratio(std::uint64_t n, std::uint64_t d) : num(n), den(d) {
    if (den == 0) throw value_error("ratio with zero denominator");
    const std::uint64_t g = std::gcd(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Ratio&) const = default;
};

// Per-sample multiply-accumulate count of one layer. Convolution:
// Hout*Wout*Cout*(Kh*Kw*Cin); fully connected: Dout*Din; pooling,
// activations and flatten contribute none.
inline std::vector<std::uint64_t> count_fmas(const NetworkDescriptor& net) {
  const ResolvedNet resolved = resolve(net);
  std::vector<std::uint64_t> fmas(net.layers.size(), 0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const ResolvedLayer& rl = resolved.layers[i];
    switch (net.layers[i].kind) {
      case LayerKind::Conv: {
        const std::uint64_t taps = static_cast<std::uint64_t>(
            rl.weight_shape[1] * rl.weight_shape[2] * rl.weight_shape[3]);
        fmas[i] = static_cast<std::uint64_t>(rl.out_elems()) * taps;
        break;
      }
      case LayerKind::FullyConnected:
      case LayerKind::Output:
        fmas[i] = static_cast<std::uint64_t>(rl.weight_shape[0] * rl.weight_shape[1]);
        break;
      default:
        break;
    }
  }
  return fmas;
}

struct LayerCost {
  std::size_t index = 0;
  LayerKind kind = LayerKind::Conv;
  std::uint64_t fmas = 0;  // per sample
  int weight_bits = 0;     // operand widths; 0 for non-compute layers
  int activation_bits = 0;
  std::uint64_t bit_cost = 0;  // fmas * k_W * k_A
};

struct CostReport {
  std::string network;
  std::vector<LayerCost> layers;
  std::uint64_t total_fmas = 0;
  std::uint64_t total_bit_cost = 0;
};

// Optional uniform operand-width override for compute layers; index by layer
// to express per-layer conventions.
struct CostOptions {
  int weight_bits = 0;      // 0 = use descriptor specs
  int activation_bits = 0;  // 0 = use propagated activation precision
  // Layers whose operands stay full precision regardless of the override.
  std::vector<std::size_t> full_precision_layers;
};

inline CostReport compute_cost(const NetworkDescriptor& net, const CostOptions& opt = {}) {
  const std::vector<std::uint64_t> fmas = count_fmas(net);
  CostReport report;
  report.network = net.name;
  report.layers.reserve(net.layers.size());

  // Activation operand width seen by each compute layer: precision of the
  // map it consumes. Activation layers set it, pooling and flatten preserve
  // it, compute layers leave a real-valued (32-bit) map behind.
  int act_bits = net.input.bits;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDescriptor& l = net.layers[i];
    LayerCost lc;
    lc.index = i;
    lc.kind = l.kind;
    lc.fmas = fmas[i];
    if (l.has_weights()) {
      const bool pinned = std::find(opt.full_precision_layers.begin(),
                                    opt.full_precision_layers.end(),
                                    i) != opt.full_precision_layers.end();
      lc.weight_bits = pinned ? 32
                       : opt.weight_bits != 0 ? opt.weight_bits
                                              : l.weight_spec.k;
      lc.activation_bits = pinned ? 32
                           : opt.activation_bits != 0 ? opt.activation_bits
                                                      : act_bits;
      lc.bit_cost = lc.fmas * static_cast<std::uint64_t>(lc.weight_bits) *
                    static_cast<std::uint64_t>(lc.activation_bits);
      act_bits = 32;
    } else if (l.kind == LayerKind::Activation) {
      act_bits = l.activation_spec.k;
    }
    report.total_fmas += lc.fmas;
    report.total_bit_cost += lc.bit_cost;
    report.layers.push_back(lc);
  }
  return report;
}

inline Ratio cost_ratio(const CostReport& candidate, const CostReport& baseline) {
  return Ratio(candidate.total_bit_cost, baseline.total_bit_cost);
}

inline Ratio fma_ratio(const CostReport& candidate, const CostReport& baseline) {
  return Ratio(candidate.total_fmas, baseline.total_fmas);
}

// ---------------------------------------------------------------------------
// Memory footprint.

enum class Phase { Training, Inference };

inline const char* to_string(Phase p) {
  return p == Phase::Training ? "training" : "inference";
}

struct LayerFootprint {
  std::size_t index = 0;
  LayerKind kind = LayerKind::Conv;
  std::uint64_t weight_count = 0;
  int weight_bits = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_elems = 0;  // per sample
  int activation_bits = 0;
  std::uint64_t activation_bytes = 0;  // whole batch
};

struct FootprintReport {
  std::string network;
  Phase phase = Phase::Inference;
  std::uint64_t batch = 1;
  std::vector<LayerFootprint> layers;
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes = 0;
};

struct FootprintOptions {
  int weight_bits = 0;      // 0 = descriptor specs
  int activation_bits = 0;  // 0 = per-layer effective precision
};

// Bytes for one map of `elems` values at `bits`, rounded up per tensor; the
// batch multiplies whole per-sample tensors so byte totals stay exactly
// linear in the batch size.
inline std::uint64_t map_bytes(std::uint64_t elems, int bits) {
  return (elems * static_cast<std::uint64_t>(bits) + 7) / 8;
}

// Training keeps every layer output for the backward pass; inference only
// ever holds one layer's input and output at a time (ping-pong working set),
// so it reports the largest consecutive pair, network input included.
inline FootprintReport memory_footprint(const NetworkDescriptor& net, std::uint64_t batch,
                                        Phase phase, const FootprintOptions& opt = {}) {
  if (batch < 1) throw config_error("batch size must be >= 1");
  const ResolvedNet resolved = resolve(net);
  FootprintReport report;
  report.network = net.name;
  report.phase = phase;
  report.batch = batch;

  int act_bits = opt.activation_bits != 0 ? opt.activation_bits : net.input.bits;
  std::uint64_t prev_bytes =
      map_bytes(static_cast<std::uint64_t>(shape_numel(resolved.input_shape)), act_bits);
  std::uint64_t inference_peak = 0;

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDescriptor& l = net.layers[i];
    const ResolvedLayer& rl = resolved.layers[i];
    LayerFootprint lf;
    lf.index = i;
    lf.kind = l.kind;

    if (l.has_weights()) {
      lf.weight_count = static_cast<std::uint64_t>(rl.weight_count());
      lf.weight_bits = opt.weight_bits != 0 ? opt.weight_bits : l.weight_spec.k;
      lf.weight_bytes = map_bytes(lf.weight_count, lf.weight_bits);
    }

    // Effective precision of this layer's output map.
    if (opt.activation_bits != 0) {
      act_bits = opt.activation_bits;
    } else if (l.kind == LayerKind::Activation) {
      act_bits = l.activation_spec.k;
    } else if (l.has_weights()) {
      act_bits = 32;  // real-valued pre-activation
    }  // pool/flatten preserve the incoming precision

    lf.activation_elems = static_cast<std::uint64_t>(rl.out_elems());
    lf.activation_bits = act_bits;
    const std::uint64_t out_bytes = map_bytes(lf.activation_elems, act_bits);
    lf.activation_bytes = batch * out_bytes;

    report.weight_bytes += lf.weight_bytes;
    if (phase == Phase::Training) {
      report.activation_bytes += lf.activation_bytes;
    } else {
      inference_peak = std::max(inference_peak, prev_bytes + out_bytes);
    }
    prev_bytes = out_bytes;
    report.layers.push_back(lf);
  }
  if (phase == Phase::Inference) report.activation_bytes = batch * inference_peak;
  return report;
}

// ---------------------------------------------------------------------------
// Whole-network cost sensitivity over first/last-layer precision
// conventions. Reduced-precision results are frequently reported with the
// input and classifier layers kept full precision; the table makes each
// convention's cost ratio against the full-precision 1x baseline explicit.

struct SensitivityRow {
  std::string convention;
  std::uint64_t candidate_bit_cost = 0;
  std::uint64_t baseline_bit_cost = 0;
  Ratio ratio;
};

inline std::vector<std::size_t> compute_layer_indices(const NetworkDescriptor& net) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (net.layers[i].has_weights()) idx.push_back(i);
  return idx;
}

inline std::vector<SensitivityRow> cost_sensitivity(const NetworkDescriptor& net,
                                                    double widen_multiplier, int kw, int ka) {
  const std::vector<std::size_t> compute = compute_layer_indices(net);
  if (compute.empty()) throw config_error("descriptor has no compute layers");
  const std::size_t first = compute.front();
  const std::size_t last = compute.back();

  const CostReport baseline = compute_cost(net, {.weight_bits = 32, .activation_bits = 32});
  const NetworkDescriptor wide = widen(net, widen_multiplier);

  std::vector<SensitivityRow> rows;
  const std::vector<std::pair<std::string, std::vector<std::size_t>>> conventions = {
      {"quantize_all", {}},
      {"full_precision_first", {first}},
      {"full_precision_last", {last}},
      {"full_precision_first_last", {first, last}},
  };
  for (const auto& [name, pinned] : conventions) {
    const CostReport candidate = compute_cost(
        wide, {.weight_bits = kw, .activation_bits = ka, .full_precision_layers = pinned});
    SensitivityRow row;
    row.convention = name;
    row.candidate_bit_cost = candidate.total_bit_cost;
    row.baseline_bit_cost = baseline.total_bit_cost;
    row.ratio = cost_ratio(candidate, baseline);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report serialization. CSV uses one row per layer; JSON mirrors the structs.

inline std::string to_csv(const CostReport& r) {
  std::ostringstream os;
  os << "layer,kind,fmas,k_w,k_a,bit_cost\n";
  for (const auto& l : r.layers)
    os << l.index << ',' << to_string(l.kind) << ',' << l.fmas << ',' << l.weight_bits
       << ',' << l.activation_bits << ',' << l.bit_cost << '\n';
  os << "total,," << r.total_fmas << ",,," << r.total_bit_cost << '\n';
  return os.str();
}

inline nlohmann::json to_json(const CostReport& r) {
  nlohmann::json j;
  j["network"] = r.network;
  j["total_fmas"] = r.total_fmas;
  j["total_bit_cost"] = r.total_bit_cost;
  auto layers = nlohmann::json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"layer", l.index},
                      {"kind", to_string(l.kind)},
                      {"fmas", l.fmas},
                      {"k_w", l.weight_bits},
                      {"k_a", l.activation_bits},
                      {"bit_cost", l.bit_cost}});
  j["layers"] = std::move(layers);
  return j;
}

inline std::string to_csv(const FootprintReport& r) {
  std::ostringstream os;
  os << "layer,kind,weight_count,weight_bits,weight_bytes,activation_elems,"
        "activation_bits,activation_bytes\n";
  for (const auto& l : r.layers)
    os << l.index << ',' << to_string(l.kind) << ',' << l.weight_count << ','
       << l.weight_bits << ',' << l.weight_bytes << ',' << l.activation_elems << ','
       << l.activation_bits << ',' << l.activation_bytes << '\n';
  os << "total,,,," << r.weight_bytes << ",,," << r.activation_bytes << '\n';
  return os.str();
}

inline nlohmann::json to_json(const FootprintReport& r) {
  nlohmann::json j;
  j["network"] = r.network;
  j["phase"] = to_string(r.phase);
  j["batch"] = r.batch;
  j["weight_bytes"] = r.weight_bytes;
  j["activation_bytes"] = r.activation_bytes;
  auto layers = nlohmann::json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"layer", l.index},
                      {"kind", to_string(l.kind)},
                      {"weight_count", l.weight_count},
                      {"weight_bits", l.weight_bits},
                      {"weight_bytes", l.weight_bytes},
                      {"activation_elems", l.activation_elems},
                      {"activation_bits", l.activation_bits},
                      {"activation_bytes", l.activation_bytes}});
  j["layers"] = std::move(layers);
  return j;
}

inline std::string to_csv(const std::vector<SensitivityRow>& rows) {
  std::ostringstream os;
  os << "convention,candidate_bit_cost,baseline_bit_cost,ratio\n";
  for (const auto& row : rows) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", row.ratio.value());
    os << row.convention << ',' << row.candidate_bit_cost << ',' << row.baseline_bit_cost
       << ',' << buf << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const std::vector<SensitivityRow>& rows) {
  auto j = nlohmann::json::array();
  for (const auto& row : rows)
    j.push_back({{"convention", row.convention},
                 {"candidate_bit_cost", row.candidate_bit_cost},
                 {"baseline_bit_cost", row.baseline_bit_cost},
                 {"ratio_num", row.ratio.num},
                 {"ratio_den", row.ratio.den},
                 {"ratio", row.ratio.value()}});
  return j;
}

}  // namespace wrpn

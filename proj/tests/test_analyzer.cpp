#include <catch2/catch_amalgamated.hpp>

#include "wrpn/analyzer.hpp"
#include "wrpn/model.hpp"

using namespace wrpn;

namespace {

using presets::detail::act;
using presets::detail::conv;
using presets::detail::fc;
using presets::detail::flatten;
using presets::detail::output;
using presets::detail::pool;

}  // namespace

TEST_CASE("FMA counting", "[analyzer]") {
  SECTION("conv: Hout*Wout*Cout*(Kh*Kw*Cin)") {
    NetworkDescriptor net;
    net.input = {2, 6, 6, 32};
    net.class_count = 2;
    net.layers = {conv(5, 3, 1, 0), act(), flatten(), output()};
    const auto fmas = count_fmas(net);
    // 4*4 output, 5 filters, 3*3*2 taps.
    CHECK(fmas[0] == 4ull * 4 * 5 * 18);
    CHECK(fmas[0] == 1440);
    CHECK(fmas[1] == 0);
    CHECK(fmas[2] == 0);
  }
  SECTION("fc 9216 -> 4096 inside the AlexNet-style stack") {
    const auto fmas = count_fmas(presets::alexnet_like());
    CHECK(fmas[14] == 37748736ull);
  }
  SECTION("degenerate 1x1 conv on a 1x1 map") {
    NetworkDescriptor net;
    net.input = {1, 1, 1, 32};
    net.class_count = 2;
    net.layers = {conv(1, 1, 1, 0), act(), flatten(), output()};
    CHECK(count_fmas(net)[0] == 1);
  }
}

TEST_CASE("widening the AlexNet-style stack grows FMAs by ~3.8x", "[analyzer][model]") {
  const NetworkDescriptor net = presets::alexnet_like();
  const CostReport base = compute_cost(net);
  const CostReport wide = compute_cost(widen(net, 2.0));
  const double ratio = fma_ratio(wide, base).value();
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.0);
}

TEST_CASE("bit cost is FMAs x k_W x k_A", "[analyzer]") {
  NetworkDescriptor net;
  net.input = {2, 6, 6, 32};
  net.class_count = 2;
  net.layers = {conv(5, 3, 1, 0), act(), flatten(), output()};

  SECTION("4b/4b against 32b/32b is exactly 1/64 per layer and in total") {
    const CostReport q = compute_cost(net, {.weight_bits = 4, .activation_bits = 4});
    const CostReport f = compute_cost(net, {.weight_bits = 32, .activation_bits = 32});
    for (std::size_t i = 0; i < q.layers.size(); ++i) {
      CHECK(q.layers[i].bit_cost * 64 == f.layers[i].bit_cost);
      if (net.layers[i].has_weights())
        CHECK(q.layers[i].bit_cost == q.layers[i].fmas * 4 * 4);
    }
    CHECK(cost_ratio(q, f) == Ratio(1, 64));
  }
  SECTION("1000 FMAs at 4b x 4b cost 16000 bit units") {
    // Direct evaluation of the per-layer formula.
    LayerCost lc;
    lc.fmas = 1000;
    CHECK(lc.fmas * 4 * 4 == 16000);
    CHECK(lc.fmas * 32 * 32 == 1024000);
  }
  SECTION("a report against itself has ratio 1") {
    const CostReport r = compute_cost(net);
    CHECK(cost_ratio(r, r) == Ratio(1, 1));
    CHECK(cost_ratio(r, r).value() == 1.0);
  }
  SECTION("cost is monotone in operand widths") {
    std::uint64_t prev = 0;
    for (const int k : {1, 2, 4, 8, 16, 32}) {
      const CostReport r = compute_cost(net, {.weight_bits = k, .activation_bits = k});
      CHECK(r.total_bit_cost > prev);
      prev = r.total_bit_cost;
    }
  }
  SECTION("cost is monotone in channel counts and scales with FMAs") {
    const CostReport r1 = compute_cost(net);
    const CostReport r2 = compute_cost(widen(net, 2.0));
    CHECK(r2.total_bit_cost > r1.total_bit_cost);
    // Doubling every channel of this single-conv stack multiplies conv FMAs
    // by exactly 2 (input channels are pinned).
    CHECK(r2.layers[0].fmas == 2 * r1.layers[0].fmas);
  }
}

TEST_CASE("per-layer operand precision propagates from activation layers", "[analyzer]") {
  NetworkDescriptor net;
  net.input = {1, 6, 6, 8};  // the first conv reads the 8-bit input
  net.class_count = 2;
  net.layers = {conv(4, 3, 1, 1), act(), conv(4, 3, 1, 1), act(), flatten(), output()};
  net.layers[0].weight_spec.k = 4;
  net.layers[1].activation_spec.k = 2;
  net.layers[2].weight_spec.k = 8;
  net.layers[3].activation_spec.k = 16;
  net.layers[5].weight_spec.k = 4;

  const CostReport r = compute_cost(net);
  CHECK(r.layers[0].weight_bits == 4);
  CHECK(r.layers[0].activation_bits == 8);   // network input precision
  CHECK(r.layers[2].weight_bits == 8);
  CHECK(r.layers[2].activation_bits == 2);   // set by the first activation
  CHECK(r.layers[5].weight_bits == 4);
  CHECK(r.layers[5].activation_bits == 16);  // set by the second activation
}

TEST_CASE("memory footprint", "[analyzer]") {
  SECTION("single 10 -> 10 classifier at 32b") {
    NetworkDescriptor net;
    net.input = {10, 1, 1, 32};
    net.class_count = 10;
    net.layers = {flatten(), output()};
    const FootprintReport inf = memory_footprint(net, 1, Phase::Inference);
    CHECK(inf.weight_bytes == 400);        // 10*10 weights * 4 bytes
    CHECK(inf.activation_bytes == 80);     // (10 in + 10 out) * 4 bytes
  }
  SECTION("activation bytes are exactly linear in batch, weights constant") {
    const NetworkDescriptor net = presets::desk_cnn();
    for (const Phase phase : {Phase::Training, Phase::Inference}) {
      // Odd element counts at 4 bits exercise the per-tensor rounding.
      const FootprintOptions opt{.weight_bits = 4, .activation_bits = 4};
      const FootprintReport b1 = memory_footprint(net, 1, phase, opt);
      const FootprintReport b2 = memory_footprint(net, 2, phase, opt);
      const FootprintReport b32 = memory_footprint(net, 32, phase, opt);
      CHECK(b2.activation_bytes == 2 * b1.activation_bytes);
      CHECK(b32.activation_bytes == 32 * b1.activation_bytes);
      CHECK(b2.weight_bytes == b1.weight_bytes);
      CHECK(b32.weight_bytes == b1.weight_bytes);
    }
  }
  SECTION("training retains all maps, inference only the live pair") {
    const NetworkDescriptor net = presets::desk_cnn();
    for (const std::uint64_t batch : {1ull, 32ull}) {
      const FootprintReport t = memory_footprint(net, batch, Phase::Training);
      const FootprintReport i = memory_footprint(net, batch, Phase::Inference);
      CHECK(t.activation_bytes >= i.activation_bytes);
      CHECK(t.weight_bytes == i.weight_bytes);
    }
  }
  SECTION("ResNet-34-style trend: training batch 32 is activation-bound, "
          "inference batch 1 is weight-bound") {
    const NetworkDescriptor net = presets::resnet34_like();
    const FootprintReport t = memory_footprint(net, 32, Phase::Training);
    CHECK(t.activation_bytes > t.weight_bytes);
    const FootprintReport i = memory_footprint(net, 1, Phase::Inference);
    CHECK(i.activation_bytes < i.weight_bytes);
  }
  SECTION("bad batch is rejected") {
    CHECK_THROWS_AS(memory_footprint(presets::desk_cnn(), 0, Phase::Training), config_error);
  }
}

TEST_CASE("widening grows FMA totals between m and m^2", "[analyzer]") {
  for (const auto& name : presets::names()) {
    const NetworkDescriptor net = presets::by_name(name);
    const double base = static_cast<double>(compute_cost(net).total_fmas);
    for (const double m : {2.0, 3.0}) {
      const double grown = static_cast<double>(compute_cost(widen(net, m)).total_fmas);
      INFO(name << " at m=" << m);
      CHECK(grown >= m * base);
      CHECK(grown <= m * m * base * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("sensitivity table entries are re-derivable by hand", "[analyzer]") {
  const NetworkDescriptor net = presets::alexnet_like();
  const int kw = 4, ka = 4;
  const auto rows = cost_sensitivity(net, 2.0, kw, ka);
  REQUIRE(rows.size() == 4);

  // Recompute every entry with an independent loop over resolved shapes.
  const NetworkDescriptor wide = widen(net, 2.0);
  const auto fmas_base = count_fmas(net);
  const auto fmas_wide = count_fmas(wide);
  const auto compute = compute_layer_indices(net);
  const std::size_t first = compute.front(), last = compute.back();

  std::uint64_t baseline = 0;
  for (const auto f : fmas_base) baseline += f * 32ull * 32ull;

  const auto hand_total = [&](bool pin_first, bool pin_last) {
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < fmas_wide.size(); ++i) {
      if (fmas_wide[i] == 0) continue;
      const bool pinned = (pin_first && i == first) || (pin_last && i == last);
      const std::uint64_t k2 = pinned ? 32ull * 32ull : static_cast<std::uint64_t>(kw) * ka;
      total += fmas_wide[i] * k2;
    }
    return total;
  };

  CHECK(rows[0].convention == "quantize_all");
  CHECK(rows[0].candidate_bit_cost == hand_total(false, false));
  CHECK(rows[1].candidate_bit_cost == hand_total(true, false));
  CHECK(rows[2].candidate_bit_cost == hand_total(false, true));
  CHECK(rows[3].candidate_bit_cost == hand_total(true, true));
  for (const auto& row : rows) {
    CHECK(row.baseline_bit_cost == baseline);
    CHECK(row.ratio == Ratio(row.candidate_bit_cost, baseline));
  }

  // The quantize-all convention at 4b/4b and 2x lands near fma_ratio/64.
  CHECK(rows[0].ratio.value() > 0.055);
  CHECK(rows[0].ratio.value() < 0.065);
}

TEST_CASE("reports serialize to CSV and JSON", "[analyzer]") {
  const NetworkDescriptor net = presets::desk_cnn();
  const CostReport cost = compute_cost(net);
  const std::string csv = to_csv(cost);
  CHECK(csv.rfind("layer,kind,fmas,k_w,k_a,bit_cost\n", 0) == 0);
  CHECK(csv.find("total,") != std::string::npos);

  const nlohmann::json cj = to_json(cost);
  CHECK(cj["total_fmas"].get<std::uint64_t>() == cost.total_fmas);
  CHECK(cj["layers"].size() == net.layers.size());

  const FootprintReport fp = memory_footprint(net, 4, Phase::Training);
  const std::string fcsv = to_csv(fp);
  CHECK(fcsv.rfind("layer,kind,weight_count,weight_bits,weight_bytes,", 0) == 0);
  const nlohmann::json fj = to_json(fp);
  CHECK(fj["phase"] == "training");
  CHECK(fj["activation_bytes"].get<std::uint64_t>() == fp.activation_bytes);

  const auto rows = cost_sensitivity(net, 2.0, 4, 4);
  const std::string scsv = to_csv(rows);
  CHECK(scsv.rfind("convention,candidate_bit_cost,baseline_bit_cost,ratio\n", 0) == 0);
}

#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "support/oracles.hpp"
#include "wrpn/engine.hpp"
#include "wrpn/model.hpp"
#include "wrpn/tensor_ops.hpp"

using namespace wrpn;

namespace {

using presets::detail::act;
using presets::detail::conv;
using presets::detail::fc;
using presets::detail::flatten;
using presets::detail::output;
using presets::detail::pool;

NetworkDescriptor tiny_cnn(int weight_bits, int act_bits, int input_bits) {
  NetworkDescriptor net;
  net.name = "tiny";
  net.input = {1, 6, 6, input_bits};
  net.class_count = 3;
  net.layers = {conv(3, 3, 1, 1), act(), pool(2, 2), flatten(), fc(8), act(), output()};
  for (auto& l : net.layers) {
    if (l.has_weights()) l.weight_spec.k = weight_bits;
    if (l.kind == LayerKind::Activation) l.activation_spec.k = act_bits;
  }
  return net;
}

Parameters random_params(const NetworkDescriptor& net, std::uint64_t seed,
                         double lo = -1.0, double hi = 1.0) {
  const ResolvedNet r = resolve(net);
  Rng rng(seed);
  Parameters p(net.layers.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (r.layers[i].weight_shape.empty()) continue;
    p[i] = Tensor(r.layers[i].weight_shape);
    oracles::fill_random(p[i], rng, lo, hi);
  }
  return p;
}

double loss_of(const NetworkDescriptor& net, const Parameters& params, const Tensor& input,
               const std::vector<std::int64_t>& labels, ExecMode mode) {
  return softmax_cross_entropy(forward(net, params, input, mode).logits, labels);
}

}  // namespace

TEST_CASE("float mode computes hand-checkable logits", "[engine]") {
  NetworkDescriptor net;
  net.input = {1, 2, 2, 32};
  net.class_count = 4;
  net.layers = {flatten(), output()};

  Parameters params(2);
  Tensor w({4, 4});
  for (int i = 0; i < 4; ++i) w.at2(i, i) = 1.0;  // identity classifier
  params[1] = w;

  const Tensor input({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
  const ForwardPass pass = forward(net, params, input, ExecMode::Float);
  REQUIRE(pass.logits.shape() == Shape{1, 4});
  CHECK(pass.logits[0] == 0.1);
  CHECK(pass.logits[1] == 0.2);
  CHECK(pass.logits[2] == 0.3);
  CHECK(pass.logits[3] == 0.4);
}

TEST_CASE("fake quantization with 32-bit specs is bitwise float", "[engine]") {
  const NetworkDescriptor net = tiny_cnn(32, 32, 32);
  const Parameters params = random_params(net, 3);
  Tensor input({2, 1, 6, 6});
  Rng rng(4);
  oracles::fill_random(input, rng, -0.5, 1.5);  // outside [0,1] on purpose

  const ForwardPass a = forward(net, params, input, ExecMode::Float);
  const ForwardPass b = forward(net, params, input, ExecMode::FakeQuant);
  REQUIRE(a.logits.shape() == b.logits.shape());
  CHECK(std::memcmp(a.logits.data(), b.logits.data(), sizeof(double) * a.logits.numel()) == 0);
}

TEST_CASE("fake-quant and integer paths agree", "[engine]") {
  for (const int k : {2, 4, 8}) {
    const NetworkDescriptor net = tiny_cnn(k, k, 8);
    const Parameters params = random_params(net, 11 + k);
    Tensor input({3, 1, 6, 6});
    Rng rng(17 + k);
    oracles::fill_random(input, rng, 0.0, 1.0);

    const ForwardPass fake = forward(net, params, input, ExecMode::FakeQuant);
    const ForwardPass integer = forward(net, params, input, ExecMode::IntegerPath);
    REQUIRE(fake.logits.shape() == integer.logits.shape());
    INFO("k = " << k);
    CHECK(oracles::max_rel_err(fake.logits, integer.logits) < 1e-9);
  }
}

TEST_CASE("integer path validation", "[engine]") {
  SECTION("full-precision weights are rejected") {
    const NetworkDescriptor net = tiny_cnn(32, 8, 8);
    CHECK_THROWS_AS(forward(net, random_params(net, 1), Tensor({1, 1, 6, 6}),
                            ExecMode::IntegerPath),
                    config_error);
  }
  SECTION("full-precision activations are rejected") {
    const NetworkDescriptor net = tiny_cnn(8, 32, 8);
    CHECK_THROWS_AS(forward(net, random_params(net, 1), Tensor({1, 1, 6, 6}),
                            ExecMode::IntegerPath),
                    config_error);
  }
  SECTION("a compute layer fed by an unquantized map is rejected") {
    NetworkDescriptor net;
    net.input = {1, 6, 6, 8};
    net.class_count = 2;
    net.layers = {conv(2, 3, 1, 1), conv(2, 3, 1, 1), act(), flatten(), output()};
    for (auto& l : net.layers) {
      if (l.has_weights()) l.weight_spec.k = 4;
      if (l.kind == LayerKind::Activation) l.activation_spec.k = 4;
    }
    CHECK_THROWS_AS(forward(net, random_params(net, 1), Tensor({1, 1, 6, 6}),
                            ExecMode::IntegerPath),
                    config_error);
  }
  SECTION("recording is a usage error") {
    const NetworkDescriptor net = tiny_cnn(4, 4, 8);
    CHECK_THROWS_AS(forward(net, random_params(net, 1), Tensor({1, 1, 6, 6}),
                            ExecMode::IntegerPath, /*record=*/true),
                    usage_error);
  }
}

TEST_CASE("integer accumulator sizing", "[engine]") {
  SECTION("shipped descriptors fit a 64-bit accumulator at k <= 8") {
    for (const auto& name : presets::names()) {
      const NetworkDescriptor net = override_bits(presets::by_name(name), {8, 8});
      INFO(name);
      const double bits = integer_accumulator_bits(net);
      CHECK(bits < kIntegerAccumulatorBits);
      CHECK_NOTHROW(check_integer_accumulator(net));
    }
  }
  SECTION("an absurd fan-in trips the check") {
    NetworkDescriptor net;
    net.input = {std::int64_t{6} * 1000 * 1000 * 1000, 1, 1, 16};
    net.class_count = 2;
    net.layers = {conv(1, 1, 1, 0), act(), flatten(), output()};
    for (auto& l : net.layers) {
      if (l.has_weights()) l.weight_spec.k = 16;
      if (l.kind == LayerKind::Activation) l.activation_spec.k = 16;
    }
    CHECK(integer_accumulator_bits(net) >= kIntegerAccumulatorBits);
    CHECK_THROWS_AS(check_integer_accumulator(net), config_error);
  }
}

TEST_CASE("gradients match finite differences on a 32-bit network", "[engine]") {
  const NetworkDescriptor net = tiny_cnn(32, 32, 32);
  Parameters params = random_params(net, 23, -0.4, 0.4);
  Tensor input({2, 1, 6, 6});
  Rng rng(29);
  oracles::fill_random(input, rng, 0.05, 0.95);
  const std::vector<std::int64_t> labels{0, 2};

  const ForwardPass pass = forward(net, params, input, ExecMode::FakeQuant, true);
  const Gradient lg = softmax_cross_entropy_backward(pass.logits, labels);
  const Parameters grads = backward(net, params, pass, lg);

  for (std::size_t li = 0; li < params.size(); ++li) {
    if (params[li].empty()) continue;
    INFO("layer " << li);
    const auto loss_fn = [&](const Tensor& w) {
      Parameters p2 = params;
      p2[li] = w;
      return loss_of(net, p2, input, labels, ExecMode::FakeQuant);
    };
    const Tensor fd = oracles::finite_difference(params[li], loss_fn);
    CHECK(oracles::max_rel_err(grads[li], fd) < 1e-4);
  }
}

TEST_CASE("gradients flow through residual joins", "[engine]") {
  NetworkDescriptor net;
  net.input = {1, 4, 4, 32};
  net.class_count = 2;
  net.layers = {conv(2, 3, 1, 1), act(), conv(2, 3, 1, 1), act(), flatten(), output()};
  net.layers[3].residual_from = 1;  // block output += block input

  Parameters params = random_params(net, 31, -0.4, 0.4);
  Tensor input({1, 1, 4, 4});
  Rng rng(37);
  oracles::fill_random(input, rng, 0.1, 0.9);
  const std::vector<std::int64_t> labels{1};

  const ForwardPass pass = forward(net, params, input, ExecMode::FakeQuant, true);
  const Gradient lg = softmax_cross_entropy_backward(pass.logits, labels);
  const Parameters grads = backward(net, params, pass, lg);

  for (std::size_t li = 0; li < params.size(); ++li) {
    if (params[li].empty()) continue;
    INFO("layer " << li);
    const auto loss_fn = [&](const Tensor& w) {
      Parameters p2 = params;
      p2[li] = w;
      return loss_of(net, p2, input, labels, ExecMode::FakeQuant);
    };
    CHECK(oracles::max_rel_err(grads[li], oracles::finite_difference(params[li], loss_fn)) <
          1e-4);
  }
}

TEST_CASE("straight-through estimator masks master weights outside the clip interval",
          "[engine]") {
  NetworkDescriptor net;
  net.input = {1, 2, 2, 8};
  net.class_count = 2;
  net.layers = {flatten(), output()};
  net.layers[1].weight_spec.k = 4;

  Parameters params(2);
  params[1] = Tensor({2, 4}, {1.5, 0.25, -0.5, 0.75,   // 1.5 is outside [-1, 1]
                              0.3, -2.0, 0.8, 0.1});   // -2.0 is outside

  const Tensor input({1, 1, 2, 2}, {32.0 / 255, 64.0 / 255, 128.0 / 255, 255.0 / 255});
  const ForwardPass pass = forward(net, params, input, ExecMode::FakeQuant, true);
  const Gradient lg = softmax_cross_entropy_backward(pass.logits, {0});
  const Parameters grads = backward(net, params, pass, lg);

  CHECK(grads[1].at2(0, 0) == 0.0);
  CHECK(grads[1].at2(1, 1) == 0.0);
  CHECK(grads[1].at2(0, 1) != 0.0);
  CHECK(grads[1].at2(1, 0) != 0.0);

  SECTION("zero upstream gradient produces all-zero parameter gradients") {
    const Parameters zero_grads = backward(net, params, pass, Tensor(pass.logits.shape()));
    for (std::int64_t i = 0; i < zero_grads[1].numel(); ++i)
      CHECK(zero_grads[1][i] == 0.0);
  }
}

TEST_CASE("engine usage errors", "[engine]") {
  const NetworkDescriptor net = tiny_cnn(32, 32, 8);
  const Parameters params = random_params(net, 1);
  const Tensor input({1, 1, 6, 6});

  SECTION("backward requires a recorded pass") {
    const ForwardPass pass = forward(net, params, input, ExecMode::FakeQuant, false);
    CHECK_THROWS_AS(backward(net, params, pass, Tensor({1, 3})), usage_error);
  }
  SECTION("input shape is validated") {
    CHECK_THROWS_AS(forward(net, params, Tensor({1, 1, 5, 6}), ExecMode::Float), shape_error);
    CHECK_THROWS_AS(forward(net, params, Tensor({6, 6}), ExecMode::Float), shape_error);
  }
  SECTION("parameter shapes are validated") {
    Parameters bad = params;
    bad[0] = Tensor({3, 1, 2, 2});
    CHECK_THROWS_AS(forward(net, bad, input, ExecMode::Float), shape_error);
  }
}

TEST_CASE("forward is deterministic", "[engine]") {
  const NetworkDescriptor net = tiny_cnn(4, 4, 8);
  const Parameters params = random_params(net, 5);
  Tensor input({2, 1, 6, 6});
  Rng rng(7);
  oracles::fill_random(input, rng, 0.0, 1.0);
  for (const ExecMode mode :
       {ExecMode::Float, ExecMode::FakeQuant, ExecMode::IntegerPath}) {
    const ForwardPass a = forward(net, params, input, mode);
    const ForwardPass b = forward(net, params, input, mode);
    CHECK(std::memcmp(a.logits.data(), b.logits.data(), sizeof(double) * a.logits.numel()) ==
          0);
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "support/tmpdir.hpp"
#include "wrpn/dataset.hpp"
#include "wrpn/serialize.hpp"
#include "wrpn/trainer.hpp"

using namespace wrpn;

namespace {

// Small deterministic splits shared by the trainer tests.
const Dataset& tiny_train() {
  static const Dataset d = synthesize_dataset({.count = 64, .seed = 501});
  return d;
}
const Dataset& tiny_test() {
  static const Dataset d = synthesize_dataset({.count = 32, .seed = 502});
  return d;
}

TrainConfig tiny_config(std::uint64_t seed, int epochs = 2) {
  TrainConfig c;
  c.descriptor = "desk-cnn-lite";
  c.epochs = epochs;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.momentum = 0.9;
  c.weight_decay = 5e-4;
  c.seed = seed;
  c.seed_set = true;
  return c;
}

}  // namespace

TEST_CASE("trainer memorizes a 16-sample fixture", "[trainer]") {
  const Dataset sixteen = synthesize_dataset({.count = 16, .seed = 700});
  TrainConfig c = tiny_config(1, 200);
  c.batch_size = 16;
  c.learning_rate = 0.08;

  const TrainResult r = train(c, sixteen, sixteen);
  double best = 0.0;
  for (const auto& m : r.metrics) best = std::max(best, m.train_acc);
  CHECK(best == 1.0);
}

TEST_CASE("training is byte-deterministic given the seed", "[trainer]") {
  const TrainResult a = train(tiny_config(9), tiny_train(), tiny_test());
  const TrainResult b = train(tiny_config(9), tiny_train(), tiny_test());
  CHECK(a.metrics_csv == b.metrics_csv);
  CHECK(checkpoint_to_bytes(a.checkpoint) == checkpoint_to_bytes(b.checkpoint));

  const TrainResult c = train(tiny_config(10), tiny_train(), tiny_test());
  CHECK(a.metrics_csv != c.metrics_csv);

  SECTION("augmentation draws are part of the deterministic stream") {
    TrainConfig cfg = tiny_config(11);
    cfg.augment_crop = true;
    cfg.augment_hflip = true;
    const TrainResult x = train(cfg, tiny_train(), tiny_test());
    const TrainResult y = train(cfg, tiny_train(), tiny_test());
    CHECK(x.metrics_csv == y.metrics_csv);
  }
}

TEST_CASE("a 32b run equals the same run with quantizers structurally removed",
          "[trainer]") {
  TrainConfig fake = tiny_config(21);
  fake.mode = ExecMode::FakeQuant;  // identity quantizers at 32b
  TrainConfig plain = tiny_config(21);
  plain.mode = ExecMode::Float;  // no quantizer calls at all

  const TrainResult a = train(fake, tiny_train(), tiny_test());
  const TrainResult b = train(plain, tiny_train(), tiny_test());
  CHECK(a.metrics_csv == b.metrics_csv);
  for (std::size_t i = 0; i < a.checkpoint.weights.size(); ++i) {
    if (a.checkpoint.weights[i].empty()) continue;
    CHECK(std::memcmp(a.checkpoint.weights[i].data(), b.checkpoint.weights[i].data(),
                      sizeof(double) * a.checkpoint.weights[i].numel()) == 0);
  }
}

TEST_CASE("metrics CSV format", "[trainer]") {
  const TrainResult r = train(tiny_config(33, 3), tiny_train(), tiny_test());
  CHECK(r.metrics_csv.rfind("epoch,loss,train_acc,test_acc\n", 0) == 0);
  REQUIRE(r.metrics.size() == 3);
  CHECK(r.metrics[0].epoch == 1);
  CHECK(r.metrics[2].epoch == 3);
  for (const auto& m : r.metrics) {
    CHECK(std::isfinite(m.loss));
    CHECK(m.train_acc >= 0.0);
    CHECK(m.train_acc <= 1.0);
    CHECK(m.test_acc >= 0.0);
    CHECK(m.test_acc <= 1.0);
  }
}

TEST_CASE("master weights stay finite and the checkpoint round-trips", "[trainer]") {
  fixtures::TmpDir tmp;
  TrainConfig c = tiny_config(41, 4);
  c.quant.all = {4, 4};
  c.checkpoint_out = tmp.file("run.ckpt");
  c.metrics_out = tmp.file("run.csv");

  const TrainResult r = train(c, tiny_train(), tiny_test());
  for (const auto& w : r.checkpoint.weights)
    for (std::int64_t i = 0; i < w.numel(); ++i) REQUIRE(std::isfinite(w[i]));

  // The quant override is baked into the checkpoint descriptor.
  for (const auto& l : r.checkpoint.descriptor.layers) {
    if (l.has_weights()) CHECK(l.weight_spec.k == 4);
    if (l.kind == LayerKind::Activation) CHECK(l.activation_spec.k == 4);
  }

  const Checkpoint back = load_checkpoint(tmp.file("run.ckpt"));
  CHECK(back.descriptor == r.checkpoint.descriptor);
  CHECK(evaluate(back, tiny_test()) == r.metrics.back().test_acc);
  CHECK(read_file(tmp.file("run.csv")) == r.metrics_csv);
}

TEST_CASE("divergence aborts with a diagnostic", "[trainer]") {
  // Clipped activations keep plain large-step runs finite (they saturate),
  // so the overflow is driven through the weight-decay term: |1 - lr*wd| >> 1
  // grows the master weights geometrically until they stop being finite.
  TrainConfig c = tiny_config(55, 6);
  c.learning_rate = 1e12;
  c.weight_decay = 1e12;
  CHECK_THROWS_WITH(train(c, tiny_train(), tiny_test()),
                    Catch::Matchers::ContainsSubstring("diverged"));
}

TEST_CASE("dataset validation", "[trainer]") {
  SECTION("image geometry must match the descriptor") {
    Dataset wrong = tiny_train();
    wrong.width = 14;
    wrong.height = 56;  // same pixel count, wrong shape
    CHECK_THROWS_AS(train(tiny_config(1), wrong, tiny_test()), config_error);
  }
  SECTION("labels must be inside the class range") {
    Dataset bad = tiny_train();
    bad.labels[3] = 11;
    CHECK_THROWS_AS(train(tiny_config(1), bad, tiny_test()), value_error);
  }
}

TEST_CASE("train config JSON is strict", "[trainer]") {
  const std::string base = R"({
    "descriptor": "desk-cnn-lite",
    "dataset": {
      "train_images": "a", "train_labels": "b",
      "test_images": "c", "test_labels": "d"
    },
    "epochs": 2,
    "seed": 7
  })";

  CHECK_NOTHROW(train_config_from_json(json::parse(base), ""));

  SECTION("unknown keys are rejected") {
    json j = json::parse(base);
    j["optimizer"] = "adam";
    CHECK_THROWS_AS(train_config_from_json(j, ""), parse_error);
    json j2 = json::parse(base);
    j2["quant"] = {{"everything", {{"weight_bits", 4}}}};
    CHECK_THROWS_AS(train_config_from_json(j2, ""), parse_error);
  }
  SECTION("the seed is mandatory") {
    json j = json::parse(base);
    j.erase("seed");
    CHECK_THROWS_AS(train_config_from_json(j, ""), parse_error);
  }
  SECTION("relative paths resolve against the config directory") {
    const TrainConfig c = train_config_from_json(json::parse(base), "/cfg/dir");
    CHECK(c.train_images == "/cfg/dir/a");
    CHECK(c.test_labels == "/cfg/dir/d");
  }
  SECTION("mode string is validated") {
    json j = json::parse(base);
    j["mode"] = "integer";  // training on the integer path is not a thing
    CHECK_THROWS_AS(train_config_from_json(j, ""), parse_error);
  }
}

TEST_CASE("experiment grid", "[trainer]") {
  fixtures::TmpDir tmp;
  save_idx(tiny_train(), tmp.file("tr.img"), tmp.file("tr.lab"));
  save_idx(tiny_test(), tmp.file("te.img"), tmp.file("te.lab"));

  GridConfig grid;
  grid.base = tiny_config(0, 1);
  grid.base.train_images = tmp.file("tr.img");
  grid.base.train_labels = tmp.file("tr.lab");
  grid.base.test_images = tmp.file("te.img");
  grid.base.test_labels = tmp.file("te.lab");

  SECTION("a 1x1 grid equals a single train run") {
    grid.weight_bits = {32};
    grid.activation_bits = {32};
    grid.widenings = {1.0};
    grid.seeds = {77};
    const auto cells = run_grid(grid);
    REQUIRE(cells.size() == 1);
    REQUIRE(cells[0].ok);

    TrainConfig single = grid.base;
    single.seed = 77;
    single.quant.all = {32, 32};
    const TrainResult r = train(single, tiny_train(), tiny_test());
    CHECK(cells[0].test_acc == r.metrics.back().test_acc);
  }
  SECTION("rows cover the requested cells exactly and failures do not stop the grid") {
    grid.weight_bits = {32, 33};  // 33 is an invalid width: that cell must fail
    grid.activation_bits = {2};
    grid.widenings = {1.0};
    grid.seeds = {1, 2};
    const auto cells = run_grid(grid);
    REQUIRE(cells.size() == 4);
    int ok = 0, failed = 0;
    for (const auto& c : cells) (c.ok ? ok : failed) += 1;
    CHECK(ok == 2);
    CHECK(failed == 2);
    const std::string csv = grid_to_csv(cells);
    CHECK(csv.rfind("k_w,k_a,widen,seed,test_acc,status\n", 0) == 0);
    CHECK(csv.find("error") != std::string::npos);
  }
}

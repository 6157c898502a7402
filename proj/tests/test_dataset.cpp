#include <catch2/catch_amalgamated.hpp>

#include "support/idx_writer.hpp"
#include "support/tmpdir.hpp"
#include "wrpn/dataset.hpp"

using namespace wrpn;

TEST_CASE("IDX ingestion against an independently written fixture", "[dataset]") {
  fixtures::TmpDir tmp;
  // Four 2x2 images with known bytes.
  const std::vector<std::uint8_t> pixels = {
      0,   51,  102, 153,   // image 0
      255, 204, 153, 102,   // image 1
      1,   2,   3,   4,     // image 2
      250, 251, 252, 253,   // image 3
  };
  const std::vector<std::uint8_t> labels = {3, 1, 4, 1};
  fixtures::spill(tmp.file("img"), fixtures::idx_images(4, 2, 2, pixels));
  fixtures::spill(tmp.file("lab"), fixtures::idx_labels(4, labels));

  const Dataset d = ingest_idx(tmp.file("img"), tmp.file("lab"));
  REQUIRE(d.count() == 4);
  CHECK(d.height == 2);
  CHECK(d.width == 2);
  CHECK(d.channels == 1);
  CHECK(d.labels == std::vector<std::int64_t>{3, 1, 4, 1});

  const std::size_t idx[] = {0, 1, 2, 3};
  const Tensor batch = d.batch(idx, 4);
  REQUIRE(batch.shape() == Shape{4, 1, 2, 2});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    CHECK(batch[static_cast<std::int64_t>(i)] == static_cast<double>(pixels[i]) / 255.0);
}

TEST_CASE("IDX ingestion error paths", "[dataset]") {
  fixtures::TmpDir tmp;
  const std::vector<std::uint8_t> pixels(16, 7);
  const std::vector<std::uint8_t> labels = {0, 1, 2, 3};

  SECTION("label count mismatch") {
    fixtures::spill(tmp.file("img"), fixtures::idx_images(4, 2, 2, pixels));
    fixtures::spill(tmp.file("lab"), fixtures::idx_labels(3, {0, 1, 2}));
    CHECK_THROWS_AS(ingest_idx(tmp.file("img"), tmp.file("lab")), parse_error);
  }
  SECTION("empty file") {
    fixtures::spill(tmp.file("img"), "");
    fixtures::spill(tmp.file("lab"), fixtures::idx_labels(4, labels));
    CHECK_THROWS_WITH(ingest_idx(tmp.file("img"), tmp.file("lab")),
                      Catch::Matchers::ContainsSubstring("offset 0"));
  }
  SECTION("bad magic") {
    fixtures::spill(tmp.file("img"), fixtures::idx_labels(4, labels));  // labels magic
    fixtures::spill(tmp.file("lab"), fixtures::idx_labels(4, labels));
    CHECK_THROWS_WITH(ingest_idx(tmp.file("img"), tmp.file("lab")),
                      Catch::Matchers::ContainsSubstring("0x00000801"));
  }
  SECTION("truncated pixel block reports the offset") {
    std::string img = fixtures::idx_images(4, 2, 2, pixels);
    img.resize(img.size() - 5);
    fixtures::spill(tmp.file("img"), img);
    fixtures::spill(tmp.file("lab"), fixtures::idx_labels(4, labels));
    CHECK_THROWS_WITH(ingest_idx(tmp.file("img"), tmp.file("lab")),
                      Catch::Matchers::ContainsSubstring("truncated at offset 16"));
  }
  SECTION("trailing bytes are rejected") {
    fixtures::spill(tmp.file("img"), fixtures::idx_images(4, 2, 2, pixels) + "zz");
    fixtures::spill(tmp.file("lab"), fixtures::idx_labels(4, labels));
    CHECK_THROWS_WITH(ingest_idx(tmp.file("img"), tmp.file("lab")),
                      Catch::Matchers::ContainsSubstring("trailing"));
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(ingest_idx(tmp.file("nope"), tmp.file("nope2")), parse_error);
  }
}

TEST_CASE("IDX writer round-trips through the reader", "[dataset]") {
  fixtures::TmpDir tmp;
  const Dataset d = synthesize_dataset({.count = 25, .seed = 9});
  save_idx(d, tmp.file("img"), tmp.file("lab"));
  const Dataset back = ingest_idx(tmp.file("img"), tmp.file("lab"));
  CHECK(back.pixels == d.pixels);
  CHECK(back.labels == d.labels);
  CHECK(back.height == 28);
  CHECK(back.width == 28);
}

TEST_CASE("synthetic set is deterministic and well-formed", "[dataset]") {
  const Dataset a = synthesize_dataset({.count = 50, .seed = 123});
  const Dataset b = synthesize_dataset({.count = 50, .seed = 123});
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);

  const Dataset c = synthesize_dataset({.count = 50, .seed = 124});
  CHECK(a.pixels != c.pixels);

  REQUIRE(a.count() == 50);
  bool all_classes_possible = true;
  for (const auto l : a.labels) all_classes_possible &= (l >= 0 && l <= 9);
  CHECK(all_classes_possible);

  // The render must actually put ink on the canvas.
  std::int64_t bright = 0;
  for (const auto p : a.pixels) bright += p > 128;
  CHECK(bright > 50 * 20);
}

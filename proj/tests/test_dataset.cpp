#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mlrn/dataset.hpp"
#include "mlrn/errors.hpp"

using namespace mlrn;
using namespace mlrn::data;

namespace fs = std::filesystem;

#ifndef MLRN_TEST_DATA_DIR
#error "MLRN_TEST_DATA_DIR must point at the checked-in fixtures"
#endif

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::current_path() / ("tmp_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fixture_path(const std::string& name) {
  return std::string(MLRN_TEST_DATA_DIR) + "/" + name;
}

}  // namespace

// ---------------------------------------------------------------------------
// categories
// ---------------------------------------------------------------------------

TEST_CASE("the builtin category table has the 80 standard entries in order") {
  const auto& t = CategoryTable::coco80();
  REQUIRE(t.size() == 80);
  CHECK(t.name(0) == "person");
  CHECK(t.entries().front().id == 1);
  CHECK(t.entries().back().id == 90);
  CHECK(t.name(79) == "toothbrush");
  CHECK(*t.column_of_name("giraffe") == 23);
  CHECK(t.entries()[23].id == 25);
  CHECK(*t.column_of_id(44) == 39);  // bottle
  CHECK(t.name(39) == "bottle");
  // ids ascend strictly
  for (std::size_t i = 1; i < t.size(); ++i) {
    CHECK(t.entries()[i - 1].id < t.entries()[i].id);
  }
  CHECK_FALSE(t.column_of_id(12).has_value());  // one of the holes
}

TEST_CASE("category tables sort by id and reject duplicates") {
  auto t = CategoryTable::create({{7, "b"}, {2, "a"}, {9, "c"}});
  CHECK(t.name(0) == "a");
  CHECK(t.name(1) == "b");
  CHECK(t.name(2) == "c");
  CHECK(*t.column_of_id(9) == 2);
  CHECK_THROWS_AS(CategoryTable::create({{1, "x"}, {1, "y"}}), ValidationError);
}

// ---------------------------------------------------------------------------
// coco parsing
// ---------------------------------------------------------------------------

TEST_CASE("the annotation fixture parses to the expected manifest") {
  auto m = parse_coco_annotations(slurp(fixture_path("coco_fixture.json")));
  REQUIRE(m.size() == 3);
  REQUIRE(m.num_classes() == 5);

  // column order follows ascending category id, not file order
  CHECK(m.categories.names() ==
        std::vector<std::string>{"person", "car", "dog", "giraffe", "bottle"});

  DatasetManifest expected;
  expected.categories = CategoryTable::create({{1, "person"},
                                               {3, "car"},
                                               {18, "dog"},
                                               {25, "giraffe"},
                                               {44, "bottle"}});
  expected.images = {
      {101, "a.jpg", 640, 480, {1, 0, 1, 0, 0}},
      {202, "b.jpg", 320, 240, {0, 0, 0, 1, 1}},
      {303, "c.jpg", 100, 100, {0, 1, 0, 0, 0}},
  };
  expected.split = "train";
  CHECK(m == expected);
}

TEST_CASE("duplicate annotations collapse to a single label") {
  // image 202 carries two giraffe annotations in the fixture
  auto m = parse_coco_annotations(slurp(fixture_path("coco_fixture.json")));
  CHECK(m.images[1].labels[3] == 1);
  std::size_t total = 0;
  for (auto v : m.images[1].labels) total += v;
  CHECK(total == 2);  // giraffe + bottle, nothing double-counted
}

TEST_CASE("images without annotations keep all-zero labels") {
  const std::string doc = R"({
    "images": [{"id": 5, "file_name": "x.jpg", "width": 10, "height": 10}],
    "annotations": [],
    "categories": [{"id": 1, "name": "person"}]
  })";
  auto m = parse_coco_annotations(doc);
  REQUIRE(m.size() == 1);
  CHECK(m.images[0].labels == std::vector<std::uint8_t>{0});
}

TEST_CASE("malformed json fails with a position, not a crash") {
  try {
    parse_coco_annotations("{\"images\": [,]}");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}

TEST_CASE("well-formed json with a missing section is a schema failure") {
  const std::string no_annotations = R"({
    "images": [],
    "categories": []
  })";
  CHECK_THROWS_AS(parse_coco_annotations(no_annotations), SchemaError);

  const std::string wrong_type = R"({
    "images": "nope",
    "annotations": [],
    "categories": []
  })";
  CHECK_THROWS_AS(parse_coco_annotations(wrong_type), SchemaError);

  CHECK_THROWS_AS(parse_coco_annotations("[1,2,3]"), SchemaError);
}

TEST_CASE("dangling references are all reported in one failure") {
  const std::string doc = R"({
    "images": [{"id": 1, "file_name": "x.jpg", "width": 4, "height": 4}],
    "annotations": [
      {"image_id": 1, "category_id": 7},
      {"image_id": 99, "category_id": 7},
      {"image_id": 1, "category_id": 55}
    ],
    "categories": [{"id": 7, "name": "cat"}]
  })";
  try {
    parse_coco_annotations(doc);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("image_id 99") != std::string::npos);
    CHECK(msg.find("category_id 55") != std::string::npos);
    CHECK(msg.find("annotation 1") != std::string::npos);
    CHECK(msg.find("annotation 2") != std::string::npos);
  }
}

TEST_CASE("duplicate image ids are rejected") {
  const std::string doc = R"({
    "images": [
      {"id": 1, "file_name": "x.jpg", "width": 4, "height": 4},
      {"id": 1, "file_name": "y.jpg", "width": 4, "height": 4}
    ],
    "annotations": [],
    "categories": [{"id": 7, "name": "cat"}]
  })";
  CHECK_THROWS_AS(parse_coco_annotations(doc), ValidationError);
}

TEST_CASE("manifest json round-trips exactly") {
  auto m = parse_coco_annotations(slurp(fixture_path("coco_fixture.json")));
  m.split = "val";
  auto once = manifest_to_json(m);
  auto back = manifest_from_json(once);
  CHECK(back == m);
  CHECK(manifest_to_json(back) == once);
}

TEST_CASE("manifest json rejects out-of-range label columns") {
  auto m = parse_coco_annotations(slurp(fixture_path("coco_fixture.json")));
  auto doc = nlohmann::json::parse(manifest_to_json(m));
  // the fixture has five classes, so column 4 is the last valid one
  doc["images"][0]["labels"][0] = 5;
  CHECK_THROWS_AS(manifest_from_json(doc.dump()), ValidationError);
}

TEST_CASE("targets_of flattens labels row-major") {
  auto m = parse_coco_annotations(slurp(fixture_path("coco_fixture.json")));
  auto t = targets_of(m);
  REQUIRE(t.rows == 3);
  REQUIRE(t.cols == 5);
  CHECK(t.at(0, 0) == 1);
  CHECK(t.at(0, 2) == 1);
  CHECK(t.at(1, 3) == 1);
  CHECK(t.at(2, 1) == 1);
  CHECK(t.at(2, 0) == 0);
  CHECK(image_ids_of(m) == std::vector<std::int64_t>{101, 202, 303});
}

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

TEST_CASE("synthetic generation is deterministic in the seed") {
  SyntheticSpec spec;
  spec.seed = 99;
  auto a = generate_synthetic(spec, 12);
  auto b = generate_synthetic(spec, 12);
  REQUIRE(a.manifest == b.manifest);
  REQUIRE(a.pixels.size() == b.pixels.size());
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    CHECK(a.pixels[i] == b.pixels[i]);
  }

  spec.seed = 100;
  auto c = generate_synthetic(spec, 12);
  CHECK_FALSE(a.pixels[0] == c.pixels[0]);  // different seed, different noise
}

TEST_CASE("generated manifests are structurally sound") {
  SyntheticSpec spec;
  auto bundle = generate_synthetic(spec, 20);
  REQUIRE(bundle.manifest.size() == 20);
  CHECK(bundle.manifest.num_classes() == 4);
  CHECK_NOTHROW(bundle.manifest.validate());
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& img = bundle.manifest.images[i];
    CHECK(img.width == spec.canvas);
    CHECK(img.height == spec.canvas);
    CHECK(bundle.pixels_of(i).size() == spec.canvas * spec.canvas * 3);
    std::size_t count = 0;
    for (auto v : img.labels) count += v;
    CHECK(count >= spec.min_count);
    CHECK(count <= spec.max_count);
  }
  CHECK(*bundle.index_of_id(bundle.manifest.images[7].id) == 7);
  CHECK_FALSE(bundle.index_of_id(424242).has_value());
}

TEST_CASE("a single-shape spec produces one-hot labels") {
  SyntheticSpec spec;
  spec.shapes = {"cross"};
  spec.min_count = 1;
  spec.max_count = 1;
  auto bundle = generate_synthetic(spec, 5);
  CHECK(bundle.manifest.num_classes() == 1);
  for (const auto& img : bundle.manifest.images) {
    CHECK(img.labels == std::vector<std::uint8_t>{1});
  }
}

TEST_CASE("label frequencies are near the expected rate over many images") {
  SyntheticSpec spec;  // 4 classes, 1..3 objects per image
  spec.seed = 1234;
  auto bundle = generate_synthetic(spec, 500);
  // mean objects per image = 2, spread over 4 classes: P(class) = 0.5
  for (std::size_t j = 0; j < 4; ++j) {
    double rate = 0.0;
    for (const auto& img : bundle.manifest.images) rate += img.labels[j];
    rate /= 500.0;
    CHECK(rate > 0.4);
    CHECK(rate < 0.6);
  }
}

TEST_CASE("generated pixels are not blank and shapes tint their channels") {
  SyntheticSpec spec;
  spec.shapes = {"disk"};  // red-dominant
  spec.min_count = 1;
  spec.max_count = 1;
  auto bundle = generate_synthetic(spec, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& px = bundle.pixels_of(i);
    long long red = 0, green = 0, blue = 0;
    for (std::size_t p = 0; p < px.size(); p += 3) {
      red += px[p];
      green += px[p + 1];
      blue += px[p + 2];
    }
    CHECK(red > green);
    CHECK(red > blue);
  }
}

TEST_CASE("spec validation catches impossible geometry") {
  SyntheticSpec tiny;
  tiny.canvas = 8;  // needs >= 2*7+1 = 15
  CHECK_THROWS_AS(tiny.validate(), ConfigError);

  SyntheticSpec inverted;
  inverted.min_count = 3;
  inverted.max_count = 1;
  CHECK_THROWS_AS(inverted.validate(), ConfigError);

  SyntheticSpec unknown;
  unknown.shapes = {"pentagon"};
  CHECK_THROWS_AS(unknown.validate(), ConfigError);

  SyntheticSpec dup;
  dup.shapes = {"disk", "disk"};
  CHECK_THROWS_AS(dup.validate(), ConfigError);

  SyntheticSpec none;
  none.shapes = {};
  CHECK_THROWS_AS(none.validate(), ConfigError);

  CHECK_NOTHROW(SyntheticSpec{}.validate());
}

TEST_CASE("spec json round-trips and fills defaults") {
  SyntheticSpec spec;
  spec.canvas = 48;
  spec.shapes = {"square", "triangle"};
  spec.seed = 17;
  auto text = spec_to_json(spec);
  auto back = spec_from_json(text);
  CHECK(back.canvas == 48);
  CHECK(back.shapes == spec.shapes);
  CHECK(back.seed == 17);
  CHECK(back.min_radius == spec.min_radius);

  auto defaults = spec_from_json("{}");
  CHECK(defaults.canvas == 32);
  CHECK(defaults.shapes == shape_inventory());

  CHECK_THROWS_AS(spec_from_json(R"({"canvas": "big"})"), SchemaError);
  CHECK_THROWS_AS(spec_from_json("{"), ParseError);
}

// ---------------------------------------------------------------------------
// bundle archive
// ---------------------------------------------------------------------------

TEST_CASE("bundle save/load round-trips bit for bit") {
  auto dir = temp_dir("bundle_roundtrip");
  SyntheticSpec spec;
  spec.seed = 5;
  auto bundle = generate_synthetic(spec, 6);
  const auto path = (dir / "data.mlds").string();
  save_bundle(bundle, path);
  auto loaded = load_bundle(path);
  CHECK(loaded.manifest == bundle.manifest);
  REQUIRE(loaded.pixels.size() == bundle.pixels.size());
  for (std::size_t i = 0; i < bundle.pixels.size(); ++i) {
    CHECK(loaded.pixels[i] == bundle.pixels[i]);
  }
  fs::remove_all(dir);
}

TEST_CASE("bundle loading rejects damage") {
  auto dir = temp_dir("bundle_damage");
  SyntheticSpec spec;
  auto bundle = generate_synthetic(spec, 2);
  const auto path = (dir / "data.mlds").string();
  save_bundle(bundle, path);
  const std::string good = slurp(path);

  auto write_variant = [&](const std::string& bytes) {
    const auto p = (dir / "variant.mlds").string();
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    return p;
  };

  SUBCASE("wrong magic") {
    std::string bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS(load_bundle(write_variant(bad)), ParseError);
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[4] = 9;
    CHECK_THROWS_AS(load_bundle(write_variant(bad)), ParseError);
  }
  SUBCASE("truncated pixel block") {
    CHECK_THROWS_AS(load_bundle(write_variant(good.substr(0, good.size() - 5))),
                    ParseError);
  }
  SUBCASE("trailing garbage") {
    CHECK_THROWS_AS(load_bundle(write_variant(good + "extra")), ParseError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_bundle((dir / "nope.mlds").string()), IoError);
  }
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

TEST_CASE("preprocess maps mid-gray almost to zero") {
  std::vector<std::uint8_t> px(4 * 4 * 3, 128);
  auto t = preprocess(px.data(), 4, 4, 4, 4);
  REQUIRE(t->shape == Shape{3, 4, 4});
  for (double v : t->data) {
    CHECK(v == doctest::Approx(0.003921568627450966).epsilon(1e-15));
  }
}

TEST_CASE("preprocess covers the full [-1, 1] range") {
  std::vector<std::uint8_t> px = {0, 0, 0, 255, 255, 255,
                                  255, 255, 255, 0, 0, 0};
  auto t = preprocess(px.data(), 2, 2, 2, 2);
  double lo = 1e9, hi = -1e9;
  for (double v : t->data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == -1.0);
  CHECK(hi == 1.0);
}

TEST_CASE("identity resize keeps pixel values in channel-first order") {
  // 1x2 image: left pixel (10, 20, 30), right pixel (50, 60, 70)
  std::vector<std::uint8_t> px = {10, 20, 30, 50, 60, 70};
  auto t = preprocess(px.data(), 1, 2, 1, 2);
  REQUIRE(t->shape == Shape{3, 1, 2});
  auto expect = [](std::uint8_t v) { return (v / 255.0 - 0.5) / 0.5; };
  CHECK(t->data[0] == doctest::Approx(expect(10)).epsilon(1e-15));
  CHECK(t->data[1] == doctest::Approx(expect(50)).epsilon(1e-15));
  CHECK(t->data[2] == doctest::Approx(expect(20)).epsilon(1e-15));
  CHECK(t->data[3] == doctest::Approx(expect(60)).epsilon(1e-15));
  CHECK(t->data[4] == doctest::Approx(expect(30)).epsilon(1e-15));
  CHECK(t->data[5] == doctest::Approx(expect(70)).epsilon(1e-15));
}

TEST_CASE("downscaling 2x2 to 1x1 averages the four pixels") {
  // half-pixel centers put the single output sample exactly between all four
  std::vector<std::uint8_t> px = {0, 0, 0, 100, 100, 100,
                                  200, 200, 200, 100, 100, 100};
  auto t = preprocess(px.data(), 2, 2, 1, 1);
  REQUIRE(t->shape == Shape{3, 1, 1});
  const double mean = (0 + 100 + 200 + 100) / 4.0;
  for (double v : t->data) {
    CHECK(v == doctest::Approx((mean / 255.0 - 0.5) / 0.5).epsilon(1e-12));
  }
}

TEST_CASE("preprocess rejects empty geometry") {
  std::vector<std::uint8_t> px(3, 0);
  CHECK_THROWS_AS(preprocess(px.data(), 0, 1, 1, 1), ShapeError);
  CHECK_THROWS_AS(preprocess(px.data(), 1, 1, 0, 1), ShapeError);
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

TEST_CASE("ten images at batch size four split 4/4/2") {
  SyntheticSpec spec;
  auto bundle = generate_synthetic(spec, 10);
  auto bs = batches(bundle, 16, 16, 4, 0, false);
  REQUIRE(bs.size() == 3);
  CHECK(bs[0].images->shape == Shape{4, 3, 16, 16});
  CHECK(bs[1].images->shape == Shape{4, 3, 16, 16});
  CHECK(bs[2].images->shape == Shape{2, 3, 16, 16});
  CHECK(bs[0].targets->shape == Shape{4, 4});
  CHECK(bs[2].targets->shape == Shape{2, 4});

  std::vector<std::size_t> seen;
  for (const auto& b : bs) {
    seen.insert(seen.end(), b.indices.begin(), b.indices.end());
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen[i] == i);  // each exactly once
}

TEST_CASE("unshuffled batches walk images in ascending id order") {
  SyntheticSpec spec;
  auto bundle = generate_synthetic(spec, 7);
  auto bs = batches(bundle, 8, 8, 3, 0, false);
  std::int64_t prev = -1;
  for (const auto& b : bs) {
    for (auto idx : b.indices) {
      CHECK(bundle.manifest.images[idx].id > prev);
      prev = bundle.manifest.images[idx].id;
    }
  }
}

TEST_CASE("shuffled batches depend only on the seed") {
  SyntheticSpec spec;
  auto bundle = generate_synthetic(spec, 12);
  auto a = batches(bundle, 8, 8, 5, 77, true);
  auto b = batches(bundle, 8, 8, 5, 77, true);
  auto c = batches(bundle, 8, 8, 5, 78, true);
  REQUIRE(a.size() == b.size());
  bool any_diff_from_c = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].indices == b[i].indices);
    CHECK(a[i].images->data == b[i].images->data);
    if (a[i].indices != c[i].indices) any_diff_from_c = true;
  }
  CHECK(any_diff_from_c);
}

TEST_CASE("batch targets mirror the manifest labels") {
  SyntheticSpec spec;
  auto bundle = generate_synthetic(spec, 6);
  auto bs = batches(bundle, 8, 8, 4, 0, false);
  for (const auto& b : bs) {
    for (std::size_t r = 0; r < b.indices.size(); ++r) {
      const auto& labels = bundle.manifest.images[b.indices[r]].labels;
      for (std::size_t j = 0; j < labels.size(); ++j) {
        CHECK(b.targets->data[r * labels.size() + j] ==
              static_cast<double>(labels[j]));
      }
    }
  }
}

TEST_CASE("batching rejects a zero batch size and an empty bundle") {
  SyntheticSpec spec;
  auto bundle = generate_synthetic(spec, 3);
  CHECK_THROWS_AS(batches(bundle, 8, 8, 0, 0, false), ConfigError);
  DataBundle empty;
  CHECK_THROWS_AS(batches(empty, 8, 8, 2, 0, false), ValidationError);
}

// ---------------------------------------------------------------------------
// ppm
// ---------------------------------------------------------------------------

TEST_CASE("ppm save/load round-trips") {
  auto dir = temp_dir("ppm");
  RawImage img;
  img.width = 3;
  img.height = 2;
  img.pixels = {0,  1,  2,  3,  4,  5,  6,  7,  8,
                9, 10, 11, 12, 13, 14, 250, 251, 252};
  const auto path = (dir / "img.ppm").string();
  write_ppm(img, path);
  auto back = read_ppm(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);
  fs::remove_all(dir);
}

TEST_CASE("ppm reader accepts comments and tolerant whitespace") {
  auto dir = temp_dir("ppm_comments");
  const auto path = (dir / "img.ppm").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n# a comment line\n 2 1 # trailing note\n255\n";
    const std::uint8_t px[6] = {1, 2, 3, 4, 5, 6};
    out.write(reinterpret_cast<const char*>(px), 6);
  }
  auto img = read_ppm(path);
  CHECK(img.width == 2);
  CHECK(img.height == 1);
  CHECK(img.pixels == std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6});
  fs::remove_all(dir);
}

TEST_CASE("ppm reader rejects what it cannot represent") {
  auto dir = temp_dir("ppm_bad");
  auto write_raw = [&](const std::string& name, const std::string& bytes) {
    const auto p = (dir / name).string();
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    return p;
  };

  CHECK_THROWS_AS(read_ppm(write_raw("p3.ppm", "P3\n1 1\n255\n1 2 3\n")),
                  ParseError);
  CHECK_THROWS_AS(
      read_ppm(write_raw("deep.ppm",
                         std::string("P6\n1 1\n65535\n") + "\x01\x02\x03")),
      ParseError);
  std::string truncated = "P6\n2 2\n255\n";
  truncated += std::string(5, '\x07');  // needs 12 bytes
  CHECK_THROWS_AS(read_ppm(write_raw("short.ppm", truncated)), ParseError);
  CHECK_THROWS_AS(read_ppm((dir / "missing.ppm").string()), IoError);
  fs::remove_all(dir);
}

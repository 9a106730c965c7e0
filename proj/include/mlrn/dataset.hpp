#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlrn/metrics.hpp"
#include "mlrn/tensor.hpp"

namespace mlrn {
namespace data {

struct Category {
  std::int64_t id = 0;
  std::string name;

  bool operator==(const Category&) const = default;
};

// Ordered category list; column order is fixed by ascending id.
class CategoryTable {
 public:
  CategoryTable() = default;
  static CategoryTable create(std::vector<Category> entries);

  // The standard 80-category COCO table.
  static const CategoryTable& coco80();

  std::size_t size() const { return entries_.size(); }
  const std::vector<Category>& entries() const { return entries_; }
  const std::string& name(std::size_t column) const;
  std::optional<std::size_t> column_of_id(std::int64_t id) const;
  std::optional<std::size_t> column_of_name(const std::string& name) const;
  std::vector<std::string> names() const;

  bool operator==(const CategoryTable& other) const {
    return entries_ == other.entries_;
  }

 private:
  std::vector<Category> entries_;
  std::unordered_map<std::int64_t, std::size_t> by_id_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

struct ImageRecord {
  std::int64_t id = 0;
  std::string source;  // file path, or "synthetic:<n>" for generated images
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> labels;  // dense {0,1}, one entry per category

  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  CategoryTable categories;
  std::vector<ImageRecord> images;
  std::string split = "train";

  std::size_t num_classes() const { return categories.size(); }
  std::size_t size() const { return images.size(); }
  // Throws if image ids repeat or a label vector has the wrong width.
  void validate() const;

  bool operator==(const DatasetManifest&) const = default;
};

// Internal manifest JSON: {"categories": [{"id","name"}],
// "images": [{"id","source","width","height","labels":[cols]}], "split"}.
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

// Reads the COCO instances subset: `images` (id, file_name, width, height),
// `annotations` (image_id, category_id), `categories` (id, name). Duplicate
// annotations collapse; unreferenced images keep all-zero label vectors.
DatasetManifest parse_coco_annotations(const std::string& json_bytes);

// Dense {0,1} targets for a whole manifest, one row per image.
metrics::TargetMatrix targets_of(const DatasetManifest& manifest);
std::vector<std::int64_t> image_ids_of(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& shape_inventory() {
  static const std::vector<std::string> kShapes{"disk", "square", "triangle",
                                               "cross"};
  return kShapes;
}

struct SyntheticSpec {
  std::size_t canvas = 32;                     // square canvas, pixels
  std::vector<std::string> shapes =            // each shape is a class
      shape_inventory();
  std::size_t min_count = 1;                   // objects per image, inclusive
  std::size_t max_count = 3;
  double min_radius = 4.0;                     // shape half-extent, pixels
  double max_radius = 7.0;
  std::uint64_t seed = 7;

  void validate() const;
};

std::string spec_to_json(const SyntheticSpec& spec);
// Missing fields fall back to defaults; unknown shape names are rejected.
SyntheticSpec spec_from_json(const std::string& text);

// A manifest plus the raw pixels backing it (H*W*3 interleaved RGB per image).
struct DataBundle {
  DatasetManifest manifest;
  std::vector<std::vector<std::uint8_t>> pixels;

  const std::vector<std::uint8_t>& pixels_of(std::size_t index) const;
  std::optional<std::size_t> index_of_id(std::int64_t image_id) const;
};

// Renders n_images: per image, draw count ~ uniform{min..max} shapes sampled
// without replacement, with jittered position/size/color on a dark background.
DataBundle generate_synthetic(const SyntheticSpec& spec, std::size_t n_images);

// Single-file archive: magic "MLDS", version u32 LE, u64 manifest-JSON length
// + bytes, then one u64-length-prefixed raw RGB block per image.
void save_bundle(const DataBundle& bundle, const std::string& path);
DataBundle load_bundle(const std::string& path);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Bilinear resize (half-pixel centers) to target_h x target_w, channel-first,
// scaled to [0,1] then normalized with mean 0.5 / std 0.5 per channel.
TensorPtr preprocess(const std::uint8_t* pixels, std::size_t height,
                     std::size_t width, std::size_t target_h,
                     std::size_t target_w);

struct Batch {
  TensorPtr images;                  // [B,3,H,W] preprocessed
  TensorPtr targets;                 // [B,C] as 0.0/1.0
  std::vector<std::size_t> indices;  // manifest rows in batch order
};

// Splits the bundle into batches covering every image exactly once; the final
// partial batch is kept. Shuffling is a seeded Fisher-Yates pass.
std::vector<Batch> batches(const DataBundle& bundle, std::size_t target_h,
                           std::size_t target_w, std::size_t batch_size,
                           std::uint64_t seed, bool shuffle);

// ---------------------------------------------------------------------------
// PPM (the codec-free interchange format for single-image prediction)
// ---------------------------------------------------------------------------

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // H*W*3 interleaved RGB
};

RawImage read_ppm(const std::string& path);
void write_ppm(const RawImage& image, const std::string& path);

}  // namespace data
}  // namespace mlrn

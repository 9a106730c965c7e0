#include "mlrn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mlrn/errors.hpp"
#include "binary_io.hpp"

namespace mlrn {
namespace data {

using nlohmann::json;

namespace {

constexpr char kBundleMagic[4] = {'M', 'L', 'D', 'S'};
constexpr std::uint32_t kBundleVersion = 1;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path);
  return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on " + path);
}

// Schema-checked field access for the COCO and manifest JSON forms.
const json& field(const json& obj, const char* key, const std::string& ctx) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw SchemaError(ctx + ": missing required field `" + key + "`");
  }
  return obj.at(key);
}

std::int64_t int_field(const json& obj, const char* key,
                       const std::string& ctx) {
  const json& v = field(obj, key, ctx);
  if (!v.is_number_integer()) {
    throw SchemaError(ctx + ": field `" + key + "` must be an integer");
  }
  return v.get<std::int64_t>();
}

std::size_t size_field(const json& obj, const char* key,
                       const std::string& ctx) {
  std::int64_t v = int_field(obj, key, ctx);
  if (v < 0) {
    throw SchemaError(ctx + ": field `" + key + "` must be non-negative");
  }
  return static_cast<std::size_t>(v);
}

std::string str_field(const json& obj, const char* key,
                      const std::string& ctx) {
  const json& v = field(obj, key, ctx);
  if (!v.is_string()) {
    throw SchemaError(ctx + ": field `" + key + "` must be a string");
  }
  return v.get<std::string>();
}

const json& array_field(const json& obj, const char* key,
                        const std::string& ctx) {
  const json& v = field(obj, key, ctx);
  if (!v.is_array()) {
    throw SchemaError(ctx + ": field `" + key + "` must be an array");
  }
  return v;
}

json parse_json(const std::string& text, const std::string& ctx) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(ctx + ": malformed JSON at byte " + std::to_string(e.byte) +
                     " (" + e.what() + ")");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// CategoryTable
// ---------------------------------------------------------------------------

CategoryTable CategoryTable::create(std::vector<Category> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const Category& a, const Category& b) { return a.id < b.id; });
  CategoryTable t;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!t.by_id_.emplace(entries[i].id, i).second) {
      throw ValidationError("duplicate category id " +
                            std::to_string(entries[i].id));
    }
    t.by_name_.emplace(entries[i].name, i);  // later duplicates lose lookups
  }
  t.entries_ = std::move(entries);
  return t;
}

const std::string& CategoryTable::name(std::size_t column) const {
  if (column >= entries_.size()) {
    throw ShapeError("category column " + std::to_string(column) +
                     " out of range (" + std::to_string(entries_.size()) + ")");
  }
  return entries_[column].name;
}

std::optional<std::size_t> CategoryTable::column_of_id(std::int64_t id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> CategoryTable::column_of_name(
    const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> CategoryTable::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

const CategoryTable& CategoryTable::coco80() {
  static const CategoryTable table = [] {
    // The 2014/2017 instances ids: 1..90 with 10 gaps.
    const std::pair<int, const char*> raw[] = {
        {1, "person"},         {2, "bicycle"},       {3, "car"},
        {4, "motorcycle"},     {5, "airplane"},      {6, "bus"},
        {7, "train"},          {8, "truck"},         {9, "boat"},
        {10, "traffic light"}, {11, "fire hydrant"}, {13, "stop sign"},
        {14, "parking meter"}, {15, "bench"},        {16, "bird"},
        {17, "cat"},           {18, "dog"},          {19, "horse"},
        {20, "sheep"},         {21, "cow"},          {22, "elephant"},
        {23, "bear"},          {24, "zebra"},        {25, "giraffe"},
        {27, "backpack"},      {28, "umbrella"},     {31, "handbag"},
        {32, "tie"},           {33, "suitcase"},     {34, "frisbee"},
        {35, "skis"},          {36, "snowboard"},    {37, "sports ball"},
        {38, "kite"},          {39, "baseball bat"}, {40, "baseball glove"},
        {41, "skateboard"},    {42, "surfboard"},    {43, "tennis racket"},
        {44, "bottle"},        {46, "wine glass"},   {47, "cup"},
        {48, "fork"},          {49, "knife"},        {50, "spoon"},
        {51, "bowl"},          {52, "banana"},       {53, "apple"},
        {54, "sandwich"},      {55, "orange"},       {56, "broccoli"},
        {57, "carrot"},        {58, "hot dog"},      {59, "pizza"},
        {60, "donut"},         {61, "cake"},         {62, "chair"},
        {63, "couch"},         {64, "potted plant"}, {65, "bed"},
        {67, "dining table"},  {70, "toilet"},       {72, "tv"},
        {73, "laptop"},        {74, "mouse"},        {75, "remote"},
        {76, "keyboard"},      {77, "cell phone"},   {78, "microwave"},
        {79, "oven"},          {80, "toaster"},      {81, "sink"},
        {82, "refrigerator"},  {84, "book"},         {85, "clock"},
        {86, "vase"},          {87, "scissors"},     {88, "teddy bear"},
        {89, "hair drier"},    {90, "toothbrush"},
    };
    std::vector<Category> cats;
    for (const auto& [id, name] : raw) cats.push_back({id, name});
    return CategoryTable::create(std::move(cats));
  }();
  return table;
}

// ---------------------------------------------------------------------------
// DatasetManifest
// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
  std::unordered_map<std::int64_t, std::size_t> seen;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!seen.emplace(images[i].id, i).second) {
      throw ValidationError("duplicate image id " +
                            std::to_string(images[i].id));
    }
    if (images[i].labels.size() != categories.size()) {
      throw ValidationError(
          "image " + std::to_string(images[i].id) + " has a label vector of " +
          std::to_string(images[i].labels.size()) + " entries, expected " +
          std::to_string(categories.size()));
    }
    for (std::uint8_t l : images[i].labels) {
      if (l > 1) {
        throw ValidationError("image " + std::to_string(images[i].id) +
                              " has a non-binary label entry");
      }
    }
  }
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json j;
  j["split"] = manifest.split;
  j["categories"] = json::array();
  for (const auto& c : manifest.categories.entries()) {
    j["categories"].push_back({{"id", c.id}, {"name", c.name}});
  }
  j["images"] = json::array();
  for (const auto& img : manifest.images) {
    json cols = json::array();
    for (std::size_t col = 0; col < img.labels.size(); ++col) {
      if (img.labels[col]) cols.push_back(col);
    }
    j["images"].push_back({{"id", img.id},
                           {"source", img.source},
                           {"width", img.width},
                           {"height", img.height},
                           {"labels", std::move(cols)}});
  }
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  const std::string ctx = "manifest";
  json j = parse_json(text, ctx);
  if (!j.is_object()) throw SchemaError(ctx + ": top level must be an object");

  DatasetManifest m;
  if (j.contains("split")) {
    if (!j["split"].is_string()) {
      throw SchemaError(ctx + ": field `split` must be a string");
    }
    m.split = j["split"].get<std::string>();
  }

  std::vector<Category> cats;
  for (const auto& c : array_field(j, "categories", ctx)) {
    cats.push_back({int_field(c, "id", ctx + " category"),
                    str_field(c, "name", ctx + " category")});
  }
  m.categories = CategoryTable::create(std::move(cats));

  for (const auto& e : array_field(j, "images", ctx)) {
    ImageRecord rec;
    rec.id = int_field(e, "id", ctx + " image");
    rec.source = str_field(e, "source", ctx + " image");
    rec.width = size_field(e, "width", ctx + " image");
    rec.height = size_field(e, "height", ctx + " image");
    rec.labels.assign(m.categories.size(), 0);
    for (const auto& col : array_field(e, "labels", ctx + " image")) {
      if (!col.is_number_integer() || col.get<std::int64_t>() < 0) {
        throw SchemaError(ctx + ": label entries must be non-negative column indices");
      }
      auto c = col.get<std::uint64_t>();
      if (c >= m.categories.size()) {
        throw ValidationError(ctx + ": image " + std::to_string(rec.id) +
                              " references label column " + std::to_string(c) +
                              " but there are only " +
                              std::to_string(m.categories.size()) +
                              " categories");
      }
      rec.labels[c] = 1;
    }
    m.images.push_back(std::move(rec));
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// COCO parsing
// ---------------------------------------------------------------------------

DatasetManifest parse_coco_annotations(const std::string& json_bytes) {
  const std::string ctx = "COCO annotations";
  json j = parse_json(json_bytes, ctx);
  if (!j.is_object()) throw SchemaError(ctx + ": top level must be an object");

  const json& jimages = array_field(j, "images", ctx);
  const json& jannotations = array_field(j, "annotations", ctx);
  const json& jcategories = array_field(j, "categories", ctx);

  std::vector<Category> cats;
  for (const auto& c : jcategories) {
    cats.push_back({int_field(c, "id", ctx + " category"),
                    str_field(c, "name", ctx + " category")});
  }

  DatasetManifest m;
  m.categories = CategoryTable::create(std::move(cats));
  m.split = "train";

  std::unordered_map<std::int64_t, std::size_t> row_of_image;
  for (const auto& e : jimages) {
    ImageRecord rec;
    rec.id = int_field(e, "id", ctx + " image");
    rec.source = str_field(e, "file_name", ctx + " image");
    rec.width = size_field(e, "width", ctx + " image");
    rec.height = size_field(e, "height", ctx + " image");
    rec.labels.assign(m.categories.size(), 0);
    if (!row_of_image.emplace(rec.id, m.images.size()).second) {
      throw ValidationError(ctx + ": duplicate image id " +
                            std::to_string(rec.id));
    }
    m.images.push_back(std::move(rec));
  }

  // Collect every dangling reference before failing, so the error names all
  // offenders at once.
  std::vector<std::string> offenders;
  std::size_t index = 0;
  for (const auto& a : jannotations) {
    const std::int64_t image_id = int_field(a, "image_id", ctx + " annotation");
    const std::int64_t category_id =
        int_field(a, "category_id", ctx + " annotation");
    auto row = row_of_image.find(image_id);
    auto col = m.categories.column_of_id(category_id);
    if (row == row_of_image.end()) {
      offenders.push_back("annotation " + std::to_string(index) +
                          " references unknown image_id " +
                          std::to_string(image_id));
    }
    if (!col) {
      offenders.push_back("annotation " + std::to_string(index) +
                          " references unknown category_id " +
                          std::to_string(category_id));
    }
    if (row != row_of_image.end() && col) {
      m.images[row->second].labels[*col] = 1;  // duplicates collapse here
    }
    ++index;
  }
  if (!offenders.empty()) {
    std::string msg = ctx + ":";
    for (const auto& o : offenders) msg += " " + o + ";";
    msg.pop_back();
    throw ValidationError(msg);
  }
  return m;
}

metrics::TargetMatrix targets_of(const DatasetManifest& manifest) {
  manifest.validate();
  const std::size_t n = manifest.size(), c = manifest.num_classes();
  std::vector<std::uint8_t> flat;
  flat.reserve(n * c);
  for (const auto& img : manifest.images) {
    flat.insert(flat.end(), img.labels.begin(), img.labels.end());
  }
  return metrics::TargetMatrix::create(n, c, std::move(flat));
}

std::vector<std::int64_t> image_ids_of(const DatasetManifest& manifest) {
  std::vector<std::int64_t> ids;
  ids.reserve(manifest.size());
  for (const auto& img : manifest.images) ids.push_back(img.id);
  return ids;
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (shapes.empty()) throw ConfigError("synthetic spec: no shape classes");
  std::vector<std::string> seen;
  for (const auto& s : shapes) {
    if (std::find(shape_inventory().begin(), shape_inventory().end(), s) ==
        shape_inventory().end()) {
      throw ConfigError("synthetic spec: unknown shape `" + s + "`");
    }
    if (std::find(seen.begin(), seen.end(), s) != seen.end()) {
      throw ConfigError("synthetic spec: duplicate shape `" + s + "`");
    }
    seen.push_back(s);
  }
  if (min_count > max_count) {
    throw ConfigError("synthetic spec: min_count > max_count");
  }
  if (!(min_radius > 0.0) || !(max_radius >= min_radius)) {
    throw ConfigError("synthetic spec: need 0 < min_radius <= max_radius");
  }
  // A shape center must fit at [r, canvas-1-r] in both axes.
  if (static_cast<double>(canvas) < 2.0 * max_radius + 1.0) {
    throw ConfigError("synthetic spec: canvas " + std::to_string(canvas) +
                      " too small for max_radius " +
                      std::to_string(max_radius));
  }
}

std::string spec_to_json(const SyntheticSpec& spec) {
  json j;
  j["canvas"] = spec.canvas;
  j["shapes"] = spec.shapes;
  j["min_count"] = spec.min_count;
  j["max_count"] = spec.max_count;
  j["min_radius"] = spec.min_radius;
  j["max_radius"] = spec.max_radius;
  j["seed"] = spec.seed;
  return j.dump(2) + "\n";
}

SyntheticSpec spec_from_json(const std::string& text) {
  const std::string ctx = "synthetic spec";
  json j = parse_json(text, ctx);
  if (!j.is_object()) throw SchemaError(ctx + ": top level must be an object");
  SyntheticSpec spec;
  if (j.contains("canvas")) spec.canvas = size_field(j, "canvas", ctx);
  if (j.contains("shapes")) {
    spec.shapes.clear();
    for (const auto& s : array_field(j, "shapes", ctx)) {
      if (!s.is_string()) {
        throw SchemaError(ctx + ": shape names must be strings");
      }
      spec.shapes.push_back(s.get<std::string>());
    }
  }
  if (j.contains("min_count")) spec.min_count = size_field(j, "min_count", ctx);
  if (j.contains("max_count")) spec.max_count = size_field(j, "max_count", ctx);
  if (j.contains("min_radius")) {
    if (!j["min_radius"].is_number()) {
      throw SchemaError(ctx + ": field `min_radius` must be a number");
    }
    spec.min_radius = j["min_radius"].get<double>();
  }
  if (j.contains("max_radius")) {
    if (!j["max_radius"].is_number()) {
      throw SchemaError(ctx + ": field `max_radius` must be a number");
    }
    spec.max_radius = j["max_radius"].get<double>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer()) {
      throw SchemaError(ctx + ": field `seed` must be an integer");
    }
    spec.seed = j["seed"].get<std::uint64_t>();
  }
  spec.validate();
  return spec;
}

const std::vector<std::uint8_t>& DataBundle::pixels_of(
    std::size_t index) const {
  if (index >= pixels.size()) {
    throw ShapeError("bundle image index " + std::to_string(index) +
                     " out of range (" + std::to_string(pixels.size()) + ")");
  }
  return pixels[index];
}

std::optional<std::size_t> DataBundle::index_of_id(
    std::int64_t image_id) const {
  for (std::size_t i = 0; i < manifest.images.size(); ++i) {
    if (manifest.images[i].id == image_id) return i;
  }
  return std::nullopt;
}

namespace {

struct Rgb {
  int r, g, b;
};

// Class-specific base tints; jitter keeps images varied while every class
// stays bright against the dark background.
Rgb base_color(std::size_t inventory_index) {
  switch (inventory_index) {
    case 0: return {220, 60, 60};
    case 1: return {60, 220, 60};
    case 2: return {70, 70, 230};
    default: return {230, 220, 60};
  }
}

int clamp255(int v) { return v < 0 ? 0 : (v > 255 ? 255 : v); }

void render_shape(std::vector<std::uint8_t>& img, std::size_t canvas,
                  std::size_t inventory_index, double cx, double cy, double r,
                  const Rgb& color) {
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int y_hi = std::min(static_cast<int>(canvas) - 1,
                            static_cast<int>(std::ceil(cy + r)));
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int x_hi = std::min(static_cast<int>(canvas) - 1,
                            static_cast<int>(std::ceil(cx + r)));
  const double bar = std::max(1.0, 0.35 * r);
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double dx = x - cx, dy = y - cy;
      bool inside = false;
      switch (inventory_index) {
        case 0:  // disk
          inside = dx * dx + dy * dy <= r * r;
          break;
        case 1:  // square
          inside = std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
          break;
        case 2: {  // upward triangle
          const double drop = y - (cy - r);
          inside = drop >= 0.0 && drop <= 2.0 * r && std::abs(dx) <= 0.5 * drop;
          break;
        }
        default:  // cross
          inside = (std::abs(dx) <= bar && std::abs(dy) <= r) ||
                   (std::abs(dy) <= bar && std::abs(dx) <= r);
          break;
      }
      if (!inside) continue;
      const std::size_t at =
          (static_cast<std::size_t>(y) * canvas + static_cast<std::size_t>(x)) *
          3;
      img[at + 0] = static_cast<std::uint8_t>(color.r);
      img[at + 1] = static_cast<std::uint8_t>(color.g);
      img[at + 2] = static_cast<std::uint8_t>(color.b);
    }
  }
}

}  // namespace

DataBundle generate_synthetic(const SyntheticSpec& spec,
                              std::size_t n_images) {
  spec.validate();
  if (n_images < 1) throw ConfigError("generate_synthetic: n_images must be >= 1");

  // Category ids follow the fixed inventory so a shape keeps its id across
  // spec subsets; columns are ascending-id as always.
  std::vector<Category> cats;
  for (const auto& s : spec.shapes) {
    auto pos = std::find(shape_inventory().begin(), shape_inventory().end(), s);
    const std::size_t inv =
        static_cast<std::size_t>(pos - shape_inventory().begin());
    cats.push_back({static_cast<std::int64_t>(inv + 1), s});
  }

  DataBundle bundle;
  bundle.manifest.categories = CategoryTable::create(cats);
  bundle.manifest.split = "train";
  const std::size_t num_classes = bundle.manifest.categories.size();

  // Map each class column (ascending-id order) back to its inventory slot.
  std::vector<std::size_t> inventory_of_class;
  for (const auto& e : bundle.manifest.categories.entries()) {
    auto pos =
        std::find(shape_inventory().begin(), shape_inventory().end(), e.name);
    inventory_of_class.push_back(
        static_cast<std::size_t>(pos - shape_inventory().begin()));
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> bg_base(10, 60);
  std::uniform_int_distribution<int> bg_noise(0, 12);
  std::uniform_int_distribution<std::size_t> count_dist(spec.min_count,
                                                        spec.max_count);
  std::uniform_real_distribution<double> radius_dist(spec.min_radius,
                                                     spec.max_radius);
  std::uniform_int_distribution<int> color_jitter(-40, 40);

  const std::size_t canvas = spec.canvas;
  for (std::size_t i = 0; i < n_images; ++i) {
    std::vector<std::uint8_t> img(canvas * canvas * 3);
    const int base = bg_base(rng);
    for (std::size_t p = 0; p < canvas * canvas; ++p) {
      const std::uint8_t v = static_cast<std::uint8_t>(base + bg_noise(rng));
      img[p * 3 + 0] = v;
      img[p * 3 + 1] = v;
      img[p * 3 + 2] = v;
    }

    const std::size_t count = std::min(count_dist(rng), num_classes);
    // Partial Fisher-Yates: draw `count` distinct classes.
    std::vector<std::size_t> pool(num_classes);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<std::uint8_t> labels(num_classes, 0);
    for (std::size_t k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, num_classes - 1);
      std::swap(pool[k], pool[pick(rng)]);
      const std::size_t cls = pool[k];
      labels[cls] = 1;

      const double r = radius_dist(rng);
      std::uniform_real_distribution<double> center(
          r, static_cast<double>(canvas) - 1.0 - r);
      const double cx = center(rng);
      const double cy = center(rng);
      const std::size_t inv = inventory_of_class[cls];
      Rgb color = base_color(inv);
      color.r = clamp255(color.r + color_jitter(rng));
      color.g = clamp255(color.g + color_jitter(rng));
      color.b = clamp255(color.b + color_jitter(rng));
      render_shape(img, canvas, inv, cx, cy, r, color);
    }

    ImageRecord rec;
    rec.id = static_cast<std::int64_t>(i + 1);
    rec.source = "synthetic:" + std::to_string(i + 1);
    rec.width = canvas;
    rec.height = canvas;
    rec.labels = std::move(labels);
    bundle.manifest.images.push_back(std::move(rec));
    bundle.pixels.push_back(std::move(img));
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Bundle archive
// ---------------------------------------------------------------------------

void save_bundle(const DataBundle& bundle, const std::string& path) {
  bundle.manifest.validate();
  if (bundle.pixels.size() != bundle.manifest.images.size()) {
    throw ValidationError("bundle has " + std::to_string(bundle.pixels.size()) +
                          " pixel blocks for " +
                          std::to_string(bundle.manifest.images.size()) +
                          " images");
  }
  std::string out;
  out.append(kBundleMagic, 4);
  io::put_u32(out, kBundleVersion);
  const std::string manifest_json = manifest_to_json(bundle.manifest);
  io::put_u64(out, manifest_json.size());
  out += manifest_json;
  for (std::size_t i = 0; i < bundle.pixels.size(); ++i) {
    const auto& img = bundle.manifest.images[i];
    if (bundle.pixels[i].size() != img.width * img.height * 3) {
      throw ValidationError("image " + std::to_string(img.id) +
                            " pixel block does not match its dimensions");
    }
    io::put_u64(out, bundle.pixels[i].size());
    out.append(reinterpret_cast<const char*>(bundle.pixels[i].data()),
               bundle.pixels[i].size());
  }
  write_file(path, out);
}

DataBundle load_bundle(const std::string& path) {
  const std::string buf = read_file(path);
  io::Reader r(buf);
  const std::string magic = r.bytes(4, "dataset bundle magic");
  if (std::memcmp(magic.data(), kBundleMagic, 4) != 0) {
    throw ParseError(path + " is not a dataset bundle (bad magic)");
  }
  const std::uint32_t version = r.u32("dataset bundle version");
  if (version != kBundleVersion) {
    throw ParseError(path + ": unsupported dataset bundle version " +
                     std::to_string(version));
  }
  const std::uint64_t manifest_len = r.u64("dataset bundle manifest length");
  DataBundle bundle;
  bundle.manifest = manifest_from_json(
      r.bytes(static_cast<std::size_t>(manifest_len), "dataset bundle manifest"));
  for (const auto& img : bundle.manifest.images) {
    const std::uint64_t len =
        r.u64("pixel block length for image " + std::to_string(img.id));
    if (len != static_cast<std::uint64_t>(img.width) * img.height * 3) {
      throw ParseError("pixel block for image " + std::to_string(img.id) +
                       " has " + std::to_string(len) + " bytes, expected " +
                       std::to_string(img.width * img.height * 3));
    }
    const char* p = r.take(static_cast<std::size_t>(len),
                           "pixel block for image " + std::to_string(img.id));
    bundle.pixels.emplace_back(reinterpret_cast<const std::uint8_t*>(p),
                               reinterpret_cast<const std::uint8_t*>(p) + len);
  }
  if (!r.done()) {
    throw ParseError(path + ": " + std::to_string(r.remaining()) +
                     " trailing bytes after the last pixel block");
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Preprocessing and batching
// ---------------------------------------------------------------------------

TensorPtr preprocess(const std::uint8_t* pixels, std::size_t height,
                     std::size_t width, std::size_t target_h,
                     std::size_t target_w) {
  if (height == 0 || width == 0) {
    throw ShapeError("preprocess: empty source image");
  }
  if (target_h == 0 || target_w == 0) {
    throw ShapeError("preprocess: empty target size");
  }
  TensorPtr out = zeros({3, target_h, target_w});
  const double scale_y = static_cast<double>(height) / target_h;
  const double scale_x = static_cast<double>(width) / target_w;
  for (std::size_t oy = 0; oy < target_h; ++oy) {
    // Half-pixel-center sampling: target center maps into source coordinates.
    double sy = (oy + 0.5) * scale_y - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(height - 1));
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const double fy = sy - y0;
    for (std::size_t ox = 0; ox < target_w; ++ox) {
      double sx = (ox + 0.5) * scale_x - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(width - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, width - 1);
      const double fx = sx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double p00 = pixels[(y0 * width + x0) * 3 + c];
        const double p01 = pixels[(y0 * width + x1) * 3 + c];
        const double p10 = pixels[(y1 * width + x0) * 3 + c];
        const double p11 = pixels[(y1 * width + x1) * 3 + c];
        const double v = (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01) +
                         fy * ((1.0 - fx) * p10 + fx * p11);
        out->data[(c * target_h + oy) * target_w + ox] =
            (v / 255.0 - 0.5) / 0.5;
      }
    }
  }
  return out;
}

std::vector<Batch> batches(const DataBundle& bundle, std::size_t target_h,
                           std::size_t target_w, std::size_t batch_size,
                           std::uint64_t seed, bool shuffle) {
  if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
  const std::size_t n = bundle.manifest.size();
  if (n == 0) throw ValidationError("batches: bundle holds no images");
  const std::size_t num_classes = bundle.manifest.num_classes();
  if (bundle.pixels.size() != n) {
    throw ValidationError("batches: bundle pixels do not match its manifest");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
  } else {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return bundle.manifest.images[a].id < bundle.manifest.images[b].id;
    });
  }

  std::vector<Batch> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t b = std::min(batch_size, n - start);
    Batch batch;
    batch.images = zeros({b, 3, target_h, target_w});
    batch.targets = zeros({b, num_classes});
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t row = order[start + k];
      const ImageRecord& rec = bundle.manifest.images[row];
      TensorPtr one = preprocess(bundle.pixels_of(row).data(), rec.height,
                                 rec.width, target_h, target_w);
      std::copy(one->data.begin(), one->data.end(),
                batch.images->data.begin() + k * one->numel());
      for (std::size_t c = 0; c < num_classes; ++c) {
        batch.targets->data[k * num_classes + c] =
            rec.labels[c] ? 1.0 : 0.0;
      }
      batch.indices.push_back(row);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PPM
// ---------------------------------------------------------------------------

RawImage read_ppm(const std::string& path) {
  const std::string buf = read_file(path);
  std::size_t off = 0;
  auto skip_space = [&] {
    while (off < buf.size()) {
      if (std::isspace(static_cast<unsigned char>(buf[off]))) {
        ++off;
      } else if (buf[off] == '#') {
        while (off < buf.size() && buf[off] != '\n') ++off;
      } else {
        break;
      }
    }
  };
  auto token = [&]() -> std::string {
    skip_space();
    std::size_t start = off;
    while (off < buf.size() &&
           !std::isspace(static_cast<unsigned char>(buf[off]))) {
      ++off;
    }
    if (start == off) throw ParseError(path + ": truncated PPM header");
    return buf.substr(start, off - start);
  };
  auto number = [&](const char* what) -> std::size_t {
    const std::string t = token();
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != t.size()) {
      throw ParseError(path + ": bad PPM " + std::string(what) + " `" + t + "`");
    }
    return static_cast<std::size_t>(v);
  };

  if (token() != "P6") throw ParseError(path + ": not a binary PPM (P6) file");
  RawImage img;
  img.width = number("width");
  img.height = number("height");
  if (img.width == 0 || img.height == 0) {
    throw ParseError(path + ": zero-dimension PPM");
  }
  const std::size_t maxval = number("maxval");
  if (maxval != 255) {
    throw ParseError(path + ": only maxval 255 PPMs are supported, got " +
                     std::to_string(maxval));
  }
  ++off;  // the single whitespace byte after maxval
  const std::size_t need = img.width * img.height * 3;
  if (off + need > buf.size()) {
    throw ParseError(path + ": PPM pixel data truncated");
  }
  img.pixels.assign(buf.begin() + off, buf.begin() + off + need);
  return img;
}

void write_ppm(const RawImage& image, const std::string& path) {
  if (image.pixels.size() != image.width * image.height * 3) {
    throw ShapeError("write_ppm: pixel buffer does not match dimensions");
  }
  std::string out = "P6\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()),
             image.pixels.size());
  write_file(path, out);
}

}  // namespace data
}  // namespace mlrn

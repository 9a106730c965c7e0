#include "mlrn/run.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "mlrn/checkpoint.hpp"
#include "mlrn/dataset.hpp"
#include "mlrn/errors.hpp"

namespace mlrn {
namespace run {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path);
  return buf.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("write failure on " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string file_safe(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  }
  return out;
}

std::string opt_str(const std::optional<double>& v, int decimals) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, *v);
  return buf;
}

}  // namespace

std::string run_config_to_json(const RunConfig& config) {
  json j;
  j["model"] = json::parse(model::config_to_json(config.model));
  j["train"] = json::parse(training::train_config_to_json(config.train));
  j["data"] = config.data_path;
  j["eval_data"] = config.eval_data_path;
  j["out"] = config.out_dir;
  j["threads"] = config.threads;
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  const std::string ctx = "run config";
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(ctx + ": malformed JSON at byte " + std::to_string(e.byte) +
                     " (" + e.what() + ")");
  }
  if (!j.is_object()) throw SchemaError(ctx + ": top level must be an object");

  RunConfig c;
  if (j.contains("model")) c.model = model::config_from_json(j["model"].dump());
  if (j.contains("train")) {
    c.train = training::train_config_from_json(j["train"].dump());
  }
  auto take_str = [&](const char* key, std::string* out) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) {
      throw SchemaError(ctx + ": field `" + key + "` must be a string");
    }
    *out = j[key].get<std::string>();
  };
  take_str("data", &c.data_path);
  take_str("eval_data", &c.eval_data_path);
  take_str("out", &c.out_dir);
  if (j.contains("threads")) {
    if (!j["threads"].is_number_integer() || j["threads"].get<int>() < 1) {
      throw SchemaError(ctx + ": field `threads` must be a positive integer");
    }
    c.threads = j["threads"].get<int>();
  }
  return c;
}

void run_gen_data(const std::string& spec_path, const std::string& out_dir,
                  std::size_t n_images,
                  std::optional<std::uint64_t> seed_override) {
  data::SyntheticSpec spec;
  if (!spec_path.empty()) spec = data::spec_from_json(read_text(spec_path));
  if (seed_override) spec.seed = *seed_override;
  if (n_images < 1) throw ConfigError("gen-data: need n >= 1 images");

  data::DataBundle bundle = data::generate_synthetic(spec, n_images);
  ensure_dir(out_dir);
  const std::string bundle_path = out_dir + "/dataset.mlds";
  data::save_bundle(bundle, bundle_path);
  write_text(out_dir + "/manifest.json", data::manifest_to_json(bundle.manifest));
  write_text(out_dir + "/resolved_config.json", data::spec_to_json(spec));
  std::cout << "wrote " << bundle.manifest.size() << " images to "
            << bundle_path << "\n";
}

void run_train(RunConfig config) {
  set_max_threads(config.threads);
  data::DataBundle train_data = data::load_bundle(config.data_path);
  std::optional<data::DataBundle> eval_data;
  if (!config.eval_data_path.empty()) {
    eval_data = data::load_bundle(config.eval_data_path);
  }

  // The class count always comes from the data; everything else is config.
  config.model.num_classes = train_data.manifest.num_classes();
  config.model.validate();
  config.train.validate();

  ensure_dir(config.out_dir);
  write_text(config.out_dir + "/resolved_config.json",
             run_config_to_json(config));

  model::Model m = model::build_model(config.model);
  const data::DataBundle& eval_ref = eval_data ? *eval_data : train_data;
  training::TrainReport report =
      training::train(m, train_data, config.train, &eval_ref);

  const std::string ckpt_path = config.out_dir + "/checkpoint.mlrn";
  model::save_checkpoint(m, ckpt_path);
  report.checkpoint_path = ckpt_path;
  write_text(config.out_dir + "/train_report.jsonl",
             training::train_report_to_jsonl(report));

  const auto& last = report.epochs.back();
  char loss_buf[32];
  std::snprintf(loss_buf, sizeof(loss_buf), "%.6f", last.mean_loss);
  std::cout << "final epoch mean loss: " << loss_buf << "\n";
  std::cout << "final eval mAP: "
            << (last.eval ? opt_str(last.eval->map, 3) : "n/a") << "\n";
}

void run_eval(const std::string& data_path, const std::string& ckpt_path,
              const DecisionRule& rule, const std::string& out_dir) {
  data::DataBundle bundle = data::load_bundle(data_path);
  model::Model m = model::load_checkpoint(ckpt_path);
  if (m.config.num_classes != bundle.manifest.num_classes()) {
    throw ValidationError(
        "checkpoint has " + std::to_string(m.config.num_classes) +
        " classes but the dataset has " +
        std::to_string(bundle.manifest.num_classes()));
  }

  metrics::MetricsReport report = training::evaluate(m, bundle, rule);
  ensure_dir(out_dir);
  write_text(out_dir + "/metrics.json", metrics::to_json_string(report));
  const std::string table = metrics::to_text_table(report);
  write_text(out_dir + "/metrics.txt", table);
  for (std::size_t j = 0; j < report.pr_curves.size(); ++j) {
    const std::string& name = report.class_names[j];
    write_text(out_dir + "/pr_" + file_safe(name) + ".csv",
               metrics::pr_curve_csv(name, report.pr_curves[j]));
  }
  std::cout << table;
}

void run_predict(const std::string& ckpt_path, const std::string& image_ref,
                 const std::string& data_path, std::size_t top_n) {
  if (top_n < 1) throw ConfigError("predict: need top >= 1");
  model::Model m = model::load_checkpoint(ckpt_path);

  std::vector<std::string> names;
  const std::uint8_t* pixels = nullptr;
  std::size_t width = 0, height = 0;
  data::RawImage ppm;
  data::DataBundle bundle;
  if (!data_path.empty()) {
    bundle = data::load_bundle(data_path);
    names = bundle.manifest.categories.names();
    std::int64_t id = 0;
    try {
      std::size_t pos = 0;
      id = std::stoll(image_ref, &pos);
      if (pos != image_ref.size()) throw std::invalid_argument(image_ref);
    } catch (const std::exception&) {
      throw ValidationError("predict: `" + image_ref +
                            "` is not an image id (use an integer with --data)");
    }
    auto index = bundle.index_of_id(id);
    if (!index) {
      throw ValidationError("predict: no image with id " + image_ref +
                            " in " + data_path);
    }
    const auto& rec = bundle.manifest.images[*index];
    pixels = bundle.pixels_of(*index).data();
    width = rec.width;
    height = rec.height;
  } else {
    ppm = data::read_ppm(image_ref);
    pixels = ppm.pixels.data();
    width = ppm.width;
    height = ppm.height;
    if (m.config.num_classes == data::CategoryTable::coco80().size()) {
      names = data::CategoryTable::coco80().names();
    }
  }

  TensorPtr image = data::preprocess(pixels, height, width,
                                     m.config.input_height,
                                     m.config.input_width);
  model::LabelProbabilities probs =
      model::predict_probabilities(m, image, std::move(names));

  std::size_t name_width = 0;
  for (const auto& n : probs.class_names) {
    name_width = std::max(name_width, n.size());
  }
  const auto order = probs.by_descending_probability();
  for (std::size_t i = 0; i < std::min(top_n, order.size()); ++i) {
    const std::string name = model::display_name(probs.class_names[order[i]]);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", probs.probabilities[order[i]]);
    std::cout << name;
    for (std::size_t pad = name.size(); pad < name_width + 2; ++pad) {
      std::cout << ' ';
    }
    std::cout << buf << "\n";
  }
}

}  // namespace run
}  // namespace mlrn

// mlrn: train, evaluate, and probe tiny multilabel image classifiers.
//
// Exit codes: 0 success, 2 usage/validation/IO problems, 3 numeric failure
// (non-finite loss during training).

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mlrn/errors.hpp"
#include "mlrn/run.hpp"
#include "mlrn/tensor.hpp"

namespace {

int default_threads() {
  if (const char* env = std::getenv("MLRN_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      return 1;
    }
  }
  return 1;
}

std::vector<std::size_t> parse_channel_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string part =
        text.substr(start, comma == std::string::npos ? comma : comma - start);
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(part, &pos);
      if (pos != part.size() || v < 1) throw std::invalid_argument(part);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw mlrn::ConfigError("bad channel list entry `" + part +
                              "` (want e.g. 8,16,32)");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mlrn - a desk-scale multilabel image classification toolkit"};
  app.require_subcommand(1);
  int threads = default_threads();
  app.add_option("--threads", threads,
                 "Thread cap for tensor ops (default 1, or MLRN_THREADS)")
      ->check(CLI::PositiveNumber);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  std::string gen_spec, gen_out = "out";
  std::size_t gen_n = 200;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec,
                  "Shape-generator JSON file (defaults apply if omitted)");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--n", gen_n, "Number of images");
  gen->add_option("--seed", gen_seed, "Override the generator seed");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset bundle");
  std::string tr_data, tr_eval_data, tr_config, tr_out;
  std::size_t tr_epochs = 0, tr_batch = 0, tr_eval_every = 0;
  double tr_lr = 0, tr_momentum = 0, tr_wd = 0;
  std::uint64_t tr_seed = 0, tr_model_seed = 0;
  std::string tr_rule, tr_channels, tr_input;
  std::size_t tr_blocks = 0;
  bool tr_no_bn = false;
  train->add_option("--data", tr_data, "Training bundle (.mlds)");
  train->add_option("--eval-data", tr_eval_data, "Separate eval bundle (default: the training bundle)");
  train->add_option("--config", tr_config, "Run config JSON (CLI flags override it)");
  train->add_option("--out", tr_out, "Output directory");
  train->add_option("--epochs", tr_epochs, "Training epochs");
  train->add_option("--batch-size", tr_batch, "Minibatch size");
  train->add_option("--lr", tr_lr, "Learning rate");
  train->add_option("--momentum", tr_momentum, "SGD momentum");
  train->add_option("--weight-decay", tr_wd, "Weight decay");
  train->add_option("--seed", tr_seed, "Shuffle/training seed");
  train->add_option("--eval-every", tr_eval_every, "Evaluate every k epochs (0: final only)");
  train->add_option("--rule", tr_rule, "Eval decision rule: threshold:<t> or topk:<k>");
  train->add_option("--stage-channels", tr_channels, "Comma list, e.g. 8,16,32");
  train->add_option("--blocks-per-stage", tr_blocks, "Residual blocks per stage");
  train->add_option("--input-size", tr_input, "Input size HxW, e.g. 32x32");
  train->add_option("--model-seed", tr_model_seed, "Weight init seed");
  train->add_flag("--no-batch-norm", tr_no_bn, "Disable batch norm");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a bundle");
  std::string ev_data, ev_ckpt, ev_rule = "threshold:0.5", ev_out = "out";
  eval->add_option("--data", ev_data, "Dataset bundle (.mlds)")->required();
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint file (.mlrn)")->required();
  eval->add_option("--rule", ev_rule, "Decision rule: threshold:<t> or topk:<k>");
  eval->add_option("--out", ev_out, "Output directory");

  // predict
  auto* predict = app.add_subcommand("predict", "Rank class probabilities for one image");
  std::string pr_ckpt, pr_image, pr_data;
  std::size_t pr_top = 5;
  predict->add_option("--ckpt", pr_ckpt, "Checkpoint file (.mlrn)")->required();
  predict->add_option("--image", pr_image, "PPM (P6) file, or an image id with --data")->required();
  predict->add_option("--data", pr_data, "Bundle to take the image and class names from");
  predict->add_option("--top", pr_top, "Rows to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad usage is exit 2; --help stays 0
  }

  try {
    mlrn::set_max_threads(threads);
    if (gen->parsed()) {
      mlrn::run::run_gen_data(gen_spec, gen_out, gen_n, gen_seed);
    } else if (train->parsed()) {
      mlrn::run::RunConfig cfg;
      if (!tr_config.empty()) {
        std::ifstream in(tr_config, std::ios::binary);
        if (!in) throw mlrn::IoError("cannot open " + tr_config);
        std::ostringstream buf;
        buf << in.rdbuf();
        cfg = mlrn::run::run_config_from_json(buf.str());
      }
      if (train->count("--data")) cfg.data_path = tr_data;
      if (train->count("--eval-data")) cfg.eval_data_path = tr_eval_data;
      if (train->count("--out")) cfg.out_dir = tr_out;
      if (app.count("--threads")) cfg.threads = threads;
      if (train->count("--epochs")) cfg.train.epochs = tr_epochs;
      if (train->count("--batch-size")) cfg.train.batch_size = tr_batch;
      if (train->count("--lr")) cfg.train.learning_rate = tr_lr;
      if (train->count("--momentum")) cfg.train.momentum = tr_momentum;
      if (train->count("--weight-decay")) cfg.train.weight_decay = tr_wd;
      if (train->count("--seed")) cfg.train.seed = tr_seed;
      if (train->count("--eval-every")) cfg.train.eval_every = tr_eval_every;
      if (train->count("--rule")) {
        cfg.train.decision_rule = mlrn::DecisionRule::parse(tr_rule);
      }
      if (train->count("--stage-channels")) {
        cfg.model.stage_channels = parse_channel_list(tr_channels);
      }
      if (train->count("--blocks-per-stage")) {
        cfg.model.blocks_per_stage = tr_blocks;
      }
      if (train->count("--input-size")) {
        const auto x = tr_input.find('x');
        if (x == std::string::npos) {
          throw mlrn::ConfigError("bad --input-size `" + tr_input +
                                  "` (want HxW, e.g. 32x32)");
        }
        cfg.model.input_height = std::stoull(tr_input.substr(0, x));
        cfg.model.input_width = std::stoull(tr_input.substr(x + 1));
      }
      if (train->count("--model-seed")) cfg.model.seed = tr_model_seed;
      if (tr_no_bn) cfg.model.use_batch_norm = false;
      if (cfg.data_path.empty()) {
        throw mlrn::ConfigError("train: --data (or a config with `data`) is required");
      }
      mlrn::set_max_threads(cfg.threads);
      mlrn::run::run_train(std::move(cfg));
    } else if (eval->parsed()) {
      mlrn::run::run_eval(ev_data, ev_ckpt, mlrn::DecisionRule::parse(ev_rule),
                          ev_out);
    } else if (predict->parsed()) {
      mlrn::run::run_predict(pr_ckpt, pr_image, pr_data, pr_top);
    }
  } catch (const mlrn::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const mlrn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spatialops/checkpoint.hpp"
#include "spatialops/config.hpp"
#include "spatialops/dataset.hpp"
#include "spatialops/interpret.hpp"
#include "spatialops/repl.hpp"
#include "spatialops/synthetic.hpp"
#include "spatialops/training.hpp"

using namespace spatialops;

namespace {

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = path.empty() ? Config{} : Config::load(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::vector<InstructionExample> load_split(const std::string& path, const std::string& split) {
  auto data = read_dataset(path);
  if (split != "all") data = select_split(data, split);
  if (data.empty()) throw std::runtime_error("no '" + split + "' examples in " + path);
  return data;
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    std::size_t used = 0;
    const double a = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad alpha '" + item + "'");
    out.push_back(a);
  }
  return out;
}

// Distinct worlds of a dataset in file order.
std::vector<WorldGrid> scenes_from(const std::vector<InstructionExample>& data) {
  std::vector<WorldGrid> out;
  for (const auto& ex : data) {
    bool seen = false;
    for (const auto& w : out) seen = seen || (w.ids == ex.world.ids && w.poses == ex.world.poses);
    if (!seen) out.push_back(ex.world);
  }
  return out;
}

// Runs `fn` with the checkpoint loaded at its stored precision.
template <typename Fn>
int with_model(const std::string& path, Fn&& fn) {
  if (checkpoint_precision(path) == 64) {
    auto model = load_checkpoint<double>(path);
    return fn(model);
  }
  auto model = load_checkpoint<float>(path);
  return fn(model);
}

template <typename T>
int run_train(const Config& cfg, const std::vector<InstructionExample>& data, const std::string& dir) {
  const auto train_set = select_split(data, "train");
  const auto val_set = select_split(data, "val");
  Model<T> model(cfg.model, training_vocabulary(train_set), cfg.model_seed);
  std::filesystem::create_directories(dir);
  std::ofstream log = open_out((std::filesystem::path(dir) / "metrics.jsonl").string());
  std::ofstream(std::filesystem::path(dir) / "config.txt") << cfg.to_text();
  TrainOutputs outputs;
  outputs.checkpoint_dir = dir;
  outputs.metrics_log = &log;
  outputs.on_epoch = [](const EpochRecord& r) { std::cout << epoch_record_json(r) << "\n"; };
  std::cout << "train " << train_set.size() << " val " << val_set.size() << " parameters " << model.parameter_count()
            << "\n";
  const auto result = train(model, train_set, val_set, cfg.train, outputs);
  std::cout << "steps " << result.steps << " best val mean_xyz " << result.best_val_xyz << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounded spatial-operation model: data, training, evaluation and probing"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, checkpoint, mode = "end-to-end", split = "test", prefix;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  std::size_t op = 0, k1 = 0, k2 = 0, grid = 9, interp_grid = 3;
  double scale = 1.0, threshold = std::numeric_limits<double>::quiet_NaN();
  std::string alphas = "1,0.75,0.5,0.25,0", script;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus (JSON lines)");
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  gen->add_option("--set", overrides, "key=value override");
  gen->add_option("--out", out_path, "Output dataset path")->required();

  auto* tr = app.add_subcommand("train", "Train on the train split, validating on val");
  tr->add_option("--data", data_path, "Dataset path")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  tr->add_option("--set", overrides, "key=value override");
  tr->add_option("--checkpoint-dir", out_path, "Directory for checkpoints and metrics")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--mode", mode, "gold-source or end-to-end")->check(CLI::IsMember({"gold-source", "end-to-end"}));
  ev->add_option("--split", split, "train, val, test or all");

  auto* sw = app.add_subcommand("sweep", "Vector field of one operation over a single-block world");
  sw->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  sw->add_option("--op", op, "Operation index")->required();
  sw->add_option("--grid", grid, "Probe grid size");
  sw->add_option("--scale", scale, "Arrow display scale");
  sw->add_option("--out", prefix, "Output prefix for .csv and .svg")->required();

  auto* ip = app.add_subcommand("interp", "Overlaid sweeps of alpha * k1 + (1 - alpha) * k2");
  ip->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  ip->add_option("--k1", k1)->required();
  ip->add_option("--k2", k2)->required();
  ip->add_option("--alphas", alphas, "Comma-separated weights on k1");
  ip->add_option("--grid", interp_grid, "Probe grid size");
  ip->add_option("--scale", scale, "Arrow display scale");
  ip->add_option("--out", prefix, "Output prefix")->required();

  auto* cl = app.add_subcommand("cluster", "Group low-entropy instructions by operation");
  cl->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  cl->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  cl->add_option("--threshold", threshold, "Entropy threshold in nats (default 0.5 ln N_op)");
  cl->add_option("--split", split, "train, val, test or all");

  auto* rp = app.add_subcommand("repl", "Interactive prediction session");
  rp->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  rp->add_option("--data", data_path, "Dataset whose worlds become the scenes")->check(CLI::ExistingFile);
  rp->add_option("--script", script, "Read commands from a file instead of stdin")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      const auto data = generate_corpus(seed, cfg.data, cfg.corpus);
      write_dataset(data, out_path);
      std::cout << "wrote " << data.size() << " examples to " << out_path << "\n";
      return 0;
    }
    if (tr->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      const auto data = read_dataset(data_path);
      return cfg.train.precision == 64 ? run_train<double>(cfg, data, out_path) : run_train<float>(cfg, data, out_path);
    }
    if (ev->parsed()) {
      const auto data = load_split(data_path, split);
      return with_model(checkpoint, [&](auto& model) {
        std::cout << eval_report_json(evaluate(model, data, eval_mode_from_name(mode))) << "\n";
        return 0;
      });
    }
    if (sw->parsed()) {
      return with_model(checkpoint, [&](auto& model) {
        const auto result = sweep_op(model, op, grid);
        auto csv = open_out(prefix + ".csv");
        write_sweep_csv(result, csv);
        auto svg = open_out(prefix + ".svg");
        write_sweep_svg({{"op " + std::to_string(op), "#1f5fbf", &result}}, model.config().world, svg, scale);
        const auto all = mean_displacement(result, false);
        const auto inner = mean_displacement(result, true);
        std::cout << "op " << op << " probes " << result.records.size() << " mean (dx, dy, dz) = (" << all.dx << ", "
                  << all.dy << ", " << all.dz << ") planar " << all.planar << "; interior dx " << inner.dx << " dy "
                  << inner.dy << "\n";
        return 0;
      });
    }
    if (ip->parsed()) {
      const auto weights = parse_alphas(alphas);
      return with_model(checkpoint, [&](auto& model) {
        const auto result = interpolate_sweep(model, k1, k2, weights, interp_grid);
        static const char* palette[] = {"#1f5fbf", "#2a9d8f", "#8ab17d", "#e9c46a", "#f4a261", "#e76f51", "#9b2226"};
        std::vector<SvgLayer> layers;
        for (std::size_t i = 0; i < result.fields.size(); ++i) {
          std::ostringstream label;
          label << "alpha " << weights[i];
          layers.push_back({label.str(), palette[i % std::size(palette)], &result.fields[i]});
          auto csv = open_out(prefix + "_" + std::to_string(i) + ".csv");
          write_sweep_csv(result.fields[i], csv);
        }
        auto svg = open_out(prefix + ".svg");
        write_sweep_svg(layers, model.config().world, svg, scale);
        std::cout << result.fields.size() << " fields, " << result.monotonicity_violations.size()
                  << " monotonicity violations\n";
        for (const auto& v : result.monotonicity_violations) std::cout << "  " << v << "\n";
        return 0;
      });
    }
    if (cl->parsed()) {
      const auto data = load_split(data_path, split);
      return with_model(checkpoint, [&](auto& model) {
        const double t = std::isnan(threshold) ? 0.5 * std::log(static_cast<double>(model.config().num_ops)) : threshold;
        print_cluster_table(cluster_phrases(model, data, t), std::cout);
        return 0;
      });
    }
    if (rp->parsed()) {
      return with_model(checkpoint, [&](auto& model) {
        std::vector<WorldGrid> scenes;
        if (!data_path.empty()) {
          scenes = scenes_from(read_dataset(data_path));
        } else {
          GeneratorConfig gc;
          gc.dims = model.config().world;
          gc.num_blocks = model.config().num_blocks;
          std::mt19937_64 rng(1);
          for (int i = 0; i < 10; ++i) scenes.push_back(generate_scene(rng, gc));
        }
        PredictRepl repl(model, std::move(scenes));
        if (!script.empty()) {
          std::ifstream in(script);
          repl.run(in, std::cout, false);
        } else {
          print_repl_help(std::cout);
          repl.run(std::cin, std::cout, true);
        }
        return 0;
      });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

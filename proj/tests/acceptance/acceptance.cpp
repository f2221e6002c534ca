// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "spatialops/checkpoint.hpp"
#include "spatialops/config.hpp"
#include "spatialops/decoder.hpp"
#include "spatialops/interpret.hpp"
#include "spatialops/operation_bank.hpp"
#include "support/op_gradients.hpp"
#include "support/test_support.hpp"

using namespace spatialops;
namespace st = spatialops::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Shared between criteria 5, 6 and 8.
struct Trained {
  Config config;
  std::vector<InstructionExample> train, val, test;
  std::optional<Model<float>> model;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Config desk_config() { return Config::load(std::filesystem::path(SPATIALOPS_SOURCE_DIR) / "configs" / "desk.cfg"); }

// 1. Analytic gradients against two-point central differences.
Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  const st::FiniteDifference fd{1e-5, 1e-4, false};
  std::mt19937_64 rng(2024);
  st::GradStats ops;
  for (const auto& c : st::op_gradient_cases(rng, fd)) ops.merge(c.stats);

  st::GradStats full;
  LossConfig loss;
  loss.lambda_balance = 0.2;
  for (const auto mode : {ConvMode::ThreeD, ConvMode::TwoD}) {
    Model<double> model(st::tiny_config(mode), st::tiny_vocab(), 3);
    full.merge(st::check_model_gradients(model, st::tiny_batch(model), st::tiny_gold(), loss, {}, fd));
  }
  const double elapsed = seconds_since(t0);
  const auto ok = [](const st::GradStats& s) { return s.fraction() >= 0.99 && s.worst <= 1e-3; };
  std::ostringstream d;
  d << "ops " << ops.within << "/" << ops.count << " within 1e-4 (worst " << fmt(ops.worst, 3) << "), full loss "
    << full.within << "/" << full.count << " (worst " << fmt(full.worst, 3) << "), " << fmt(elapsed, 3) << " s";
  return {ok(ops) && ok(full) && elapsed < 120.0, d.str()};
}

// 2. attention_map, op_vector and readout against loop oracles.
Outcome equation_oracles() {
  std::mt19937_64 rng(7);
  double worst_att = 0.0, worst_op = 0.0, worst_read = 0.0;
  const auto pick = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng() % (hi - lo + 1)); };
  for (int trial = 0; trial < 100; ++trial) {
    // Attention map on a random scene.
    GeneratorConfig gc;
    gc.dims = {pick(1, 4), pick(6, 16), pick(6, 16)};
    gc.num_blocks = static_cast<int>(pick(2, 8));
    gc.lattice_spacing = 2.0;
    gc.random_yaw = true;
    const auto world = generate_scene(rng, gc);
    std::vector<double> d_a(static_cast<std::size_t>(gc.num_blocks));
    double total = 0.0;
    for (auto& v : d_a) total += v = unit_uniform(rng);
    for (auto& v : d_a) v /= total;
    const auto att = attention_map(world, d_a);
    for (std::size_t i = 0; i < world.dims.depth; ++i)
      for (std::size_t j = 0; j < world.dims.height; ++j)
        for (std::size_t k = 0; k < world.dims.width; ++k) {
          const int id = world.id_at(i, j, k);
          const double expect = id == 0 ? 0.0 : 10.0 * d_a[static_cast<std::size_t>(id - 1)];
          worst_att = std::max(worst_att, std::abs(att.at({i, j, k}) - expect));
        }

    // op_vector, scalar and batched forms.
    const std::size_t C = pick(2, 32), N = pick(2, 16);
    const auto bank = Tensor<double>::uniform({C, N}, -2.0, 2.0, rng);
    std::vector<double> d_op(N);
    total = 0.0;
    for (auto& v : d_op) total += v = unit_uniform(rng);
    for (auto& v : d_op) v /= total;
    const auto v = op_vector(bank, d_op);
    ad::Tape<double> tape;
    const auto batched = op_vectors(tape.constant(bank), tape.constant(Tensor<double>({1, N}, d_op))).value();
    for (std::size_t c = 0; c < C; ++c) {
      double expect = 0.0;
      for (std::size_t n = 0; n < N; ++n) expect += bank.at({c, n}) * d_op[n];
      worst_op = std::max({worst_op, std::abs(v[c] - expect), std::abs(batched[c] - expect)});
    }

    // Readout: one softmax per confidence channel, theta without a grid term.
    const WorldDims dims{pick(1, 4), pick(2, 8), pick(2, 8)};
    const std::size_t B = pick(1, 3), V = dims.voxels();
    const auto fields = Tensor<double>::uniform({B, dims.depth, dims.height, dims.width, 8}, -3.0, 3.0, rng);
    const auto grid = CoordinateGrid::for_world(dims);
    const auto pose = readout(tape.constant(fields), grid).value();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < 4; ++c) {
        double peak = -INFINITY;
        for (std::size_t u = 0; u < V; ++u) peak = std::max(peak, fields[(b * V + u) * 8 + 4 + c]);
        double z = 0.0, sum = 0.0;
        for (std::size_t u = 0; u < V; ++u) {
          const std::size_t k = u % dims.width, j = u / dims.width % dims.height, i = u / (dims.width * dims.height);
          const double center[3] = {k + 0.5, j + 0.5, i + 0.5};
          const double w = std::exp(fields[(b * V + u) * 8 + 4 + c] - peak);
          z += w;
          sum += w * ((c < 3 ? center[c] : 0.0) + fields[(b * V + u) * 8 + c]);
        }
        worst_read = std::max(worst_read, std::abs(pose.at({b, c}) - sum / z));
      }
  }
  std::ostringstream d;
  d << "100 instances each; worst |diff| attention " << fmt(worst_att, 3) << ", op_vector " << fmt(worst_op, 3)
    << ", readout " << fmt(worst_read, 3);
  return {worst_att <= 1e-10 && worst_op <= 1e-10 && worst_read <= 1e-10, d.str()};
}

// 3. Metrics: tabulated cases and wrap-around against atan2.
Outcome metric_correctness() {
  // Within two ulps of the value nearest the exact answer; pi itself is not
  // representable, so the cases involving it cannot match bit for bit.
  const auto ulps_ok = [](double got, double want) {
    return std::abs(got - want) <= 2.0 * (std::nextafter(std::abs(want), INFINITY) - std::abs(want));
  };
  bool table = metric_xyz({1, 2, 3, 0.4}, {1, 2, 3, -0.2}) == 0.0 && metric_xyz({3, 4, 0, 0}, {0, 0, 0, 0}) == 5.0 &&
               metric_theta(0.9, 0.9) == 0.0 && ulps_ok(std::abs(metric_theta(1.5 * kPi, 0.0)), kPi / 2) &&
               std::abs(metric_theta(kPi + 0.1, -kPi + 0.1)) <= 2.0 * std::numeric_limits<double>::epsilon();
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double p = (unit_uniform(rng) - 0.5) * 8.0 * kPi, g = (unit_uniform(rng) - 0.5) * 8.0 * kPi;
    const double direct = std::atan2(std::sin(p - g), std::cos(p - g));
    worst = std::max({worst, std::abs(metric_theta(p, g) - direct), std::abs(metric_theta(p, g) + metric_theta(g, p))});
    const BlockPose a{unit_uniform(rng) * 16, unit_uniform(rng) * 16, unit_uniform(rng) * 4, 0};
    const BlockPose b{unit_uniform(rng) * 16, unit_uniform(rng) * 16, unit_uniform(rng) * 4, 0};
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    worst = std::max(worst, std::abs(metric_xyz(a, b) - std::sqrt(dx * dx + dy * dy + dz * dz)));
  }
  return {table && worst <= 1e-12,
          std::string("tabulated ") + (table ? "ok" : "MISMATCH") + ", 1000 random cases worst " + fmt(worst, 3)};
}

// 4. Memorize 64 examples.
Outcome overfit() {
  auto cfg = desk_config();
  cfg.train.max_steps = 2000;
  cfg.train.epochs = 1000;  // 2 steps per epoch at batch 32
  cfg.train.eval_every = 100;
  const auto data = select_split(generate_corpus(cfg.train.seed + 100, cfg.data, CorpusOptions{20, 64, 0}), "train");
  const auto t0 = Clock::now();
  Model<float> model(cfg.model, training_vocabulary(data), cfg.model_seed);
  const auto result = train(model, data, {}, cfg.train);
  const double elapsed = seconds_since(t0);
  const auto report = evaluate(model, data, EvalMode::EndToEnd);
  std::ostringstream d;
  d << data.size() << " examples, " << cfg.model.world.depth << "x" << cfg.model.world.height << "x"
    << cfg.model.world.width << ", K=" << cfg.model.num_blocks << ", N_op=" << cfg.model.num_ops << ", hidden "
    << cfg.model.hidden << ": " << result.steps << " steps, " << fmt(elapsed, 4) << " s, train accuracy "
    << report.source_accuracy << ", mean xyz " << fmt(report.mean_xyz);
  return {data.size() == 64 && result.steps <= 2000 && elapsed <= 600.0 && report.source_accuracy == 1.0 &&
              report.mean_xyz <= 0.1,
          d.str()};
}

// 5. Train on 70 scenes, evaluate on held-out scenes.
Outcome generalization(Trained& out, const std::filesystem::path& work) {
  out.config = desk_config();
  const auto& cfg = out.config;
  const auto corpus = generate_corpus(cfg.train.seed + 100, cfg.data, cfg.corpus);
  out.train = select_split(corpus, "train");
  out.val = select_split(corpus, "val");
  out.test = select_split(corpus, "test");
  std::set<int> scenes;
  for (const auto& ex : out.train) scenes.insert(ex.meta.scene);

  const auto t0 = Clock::now();
  Model<float> model(cfg.model, training_vocabulary(out.train), cfg.model_seed);
  TrainOutputs outputs;
  outputs.checkpoint_dir = work / "generalization";
  outputs.on_epoch = [&](const EpochRecord& r) {
    if (!r.eval_split.empty()) std::cout << "  # " << epoch_record_json(r) << " t=" << fmt(seconds_since(t0), 4) << "\n";
  };
  std::filesystem::create_directories(outputs.checkpoint_dir);
  train(model, out.train, out.val, cfg.train, outputs);
  const double elapsed = seconds_since(t0);
  out.model.emplace(load_checkpoint<float>(outputs.checkpoint_dir / "best.ckpt"));

  const auto e2e = evaluate(*out.model, out.test, EvalMode::EndToEnd);
  const auto gold = evaluate(*out.model, out.test, EvalMode::GoldSource);
  std::ostringstream d;
  d << out.train.size() << " examples over " << scenes.size() << " scenes, " << out.test.size()
    << " held-out; accuracy " << fmt(e2e.source_accuracy) << ", mean xyz " << fmt(e2e.mean_xyz) << " (median "
    << fmt(e2e.median_xyz) << "), rotation |theta| " << fmt(e2e.mean_theta_rotation) << " over " << e2e.rotation_count
    << ", gold-source mean " << fmt(gold.mean_xyz) << ", in bounds " << fmt(e2e.in_bounds_fraction) << ", "
    << fmt(elapsed / 60.0, 3) << " min";
  return {out.train.size() == 2000 && scenes.size() == 70 && e2e.source_accuracy >= 0.95 && e2e.mean_xyz <= 0.5 &&
              e2e.rotation_count > 0 && e2e.mean_theta_rotation <= 0.15 && gold.mean_xyz <= e2e.mean_xyz + 0.05 &&
              elapsed <= 3600.0,
          d.str()};
}

// 6. Clusters and sweeps of the criterion 5 model.
Outcome interpretability(Trained& t, const std::filesystem::path& work) {
  if (!t.model) return {false, "criterion 5 model unavailable"};
  auto& model = *t.model;
  const std::size_t n_ops = model.config().num_ops;
  auto heldout = t.val;
  heldout.insert(heldout.end(), t.test.begin(), t.test.end());
  const double threshold = 0.5 * std::log(static_cast<double>(n_ops));
  const auto table = cluster_phrases(model, heldout, threshold);
  std::ostringstream clusters;
  print_cluster_table(table, clusters);
  std::istringstream lines(clusters.str());
  for (std::string line; std::getline(lines, line);)
    if (line.starts_with("op ") || line.starts_with("selected")) std::cout << "  # " << line << "\n";

  const auto dir = work / "sweeps";
  std::filesystem::create_directories(dir);
  std::vector<Displacement> means;
  bool files_ok = true;
  for (std::size_t k = 0; k < n_ops; ++k) {
    const auto result = sweep_op(model, k, 9);
    const auto stem = dir / ("op" + std::to_string(k));
    {
      std::ofstream csv(stem.string() + ".csv"), svg(stem.string() + ".svg");
      write_sweep_csv(result, csv);
      write_sweep_svg({{"op " + std::to_string(k), "#1f5fbf", &result}}, model.config().world, svg);
    }
    std::ifstream csv(stem.string() + ".csv");
    files_ok = files_ok && read_sweep_csv(csv).records.size() == 81 &&
               std::filesystem::file_size(stem.string() + ".svg") > 0;
    means.push_back(mean_displacement(result, false));
    std::cout << "  # op " << k << " mean (dx, dy, dz) = (" << fmt(means.back().dx, 3) << ", " << fmt(means.back().dy, 3)
              << ", " << fmt(means.back().dz, 3) << ") planar " << fmt(means.back().planar, 3) << "\n";
  }
  const long left = dominant_op(table, "left"), on_top = dominant_op(table, "on-top");
  std::size_t shortest = 0;
  for (std::size_t k = 1; k < n_ops; ++k)
    if (means[k].planar < means[shortest].planar) shortest = k;
  const bool left_ok = left >= 0 && means[static_cast<std::size_t>(left)].dx < 0.0;
  const bool top_ok = on_top >= 0 && static_cast<std::size_t>(on_top) == shortest;

  std::ostringstream d;
  d << "threshold " << fmt(threshold) << ": " << table.selected << "/" << table.total << " selected, "
    << table.clusters.size() << " clusters, mean purity " << fmt(table.mean_purity) << "; " << n_ops
    << " sweeps x 81 records " << (files_ok ? "written" : "MISSING") << "; left -> op " << left << " dx "
    << (left >= 0 ? fmt(means[static_cast<std::size_t>(left)].dx, 3) : "n/a") << "; on-top -> op " << on_top
    << ", shortest arrows op " << shortest;
  return {table.mean_purity >= 0.8 && files_ok && left_ok && top_ok, d.str()};
}

// 7. Seeded 64-bit reruns and checkpoint round trip.
Outcome determinism(const std::filesystem::path& work) {
  auto cfg = desk_config();
  cfg.train.precision = 64;
  cfg.train.epochs = 3;
  cfg.train.eval_every = 1;
  const auto corpus = generate_corpus(5, cfg.data, CorpusOptions{10, 96, 4});
  const auto train_set = select_split(corpus, "train"), val_set = select_split(corpus, "val");
  std::string logs[2];
  std::optional<Model<double>> trained;
  for (auto& log : logs) {
    Model<double> model(cfg.model, training_vocabulary(train_set), cfg.model_seed);
    std::ostringstream out;
    TrainOutputs outputs;
    outputs.metrics_log = &out;
    train(model, train_set, val_set, cfg.train, outputs);
    log = out.str();
    trained.emplace(std::move(model));
  }
  const bool logs_equal = !logs[0].empty() && logs[0] == logs[1];

  const auto path = work / "determinism.ckpt";
  save_checkpoint(*trained, path);
  auto loaded = load_checkpoint<double>(path);
  bool params_equal = loaded.parameters().size() == trained->parameters().size() && loaded.config() == trained->config();
  for (std::size_t i = 0; params_equal && i < loaded.parameters().size(); ++i) {
    params_equal = loaded.parameters()[i].name == trained->parameters()[i].name &&
                   loaded.parameters()[i].value == trained->parameters()[i].value;
  }
  const bool eval_equal = eval_report_json(evaluate(loaded, val_set, EvalMode::EndToEnd)) ==
                              eval_report_json(evaluate(*trained, val_set, EvalMode::EndToEnd)) &&
                          eval_report_json(evaluate(loaded, val_set, EvalMode::GoldSource)) ==
                              eval_report_json(evaluate(*trained, val_set, EvalMode::GoldSource));
  std::ostringstream d;
  d << "metric logs " << (logs_equal ? "identical" : "DIFFER") << " (" << logs[0].size() << " bytes), "
    << trained->parameter_count() << " parameters " << (params_equal ? "exact" : "CHANGED") << " after reload, evaluate "
    << (eval_equal ? "identical" : "DIFFERS");
  return {logs_equal && params_equal && eval_equal, d.str()};
}

// 8. Gold d_a injection alters the attention map and nothing upstream.
Outcome evaluation_protocol(Trained& t) {
  std::optional<Model<float>> fallback;
  if (!t.model) {
    const auto data = st::tiny_examples(8);
    fallback.emplace(st::tiny_config(), training_vocabulary(data), 1);
  }
  auto& model = t.model ? *t.model : *fallback;
  const auto data = t.model ? t.test : st::tiny_examples(8);
  const bool modes = eval_mode_from_name(eval_mode_name(EvalMode::GoldSource)) == EvalMode::GoldSource &&
                     eval_mode_from_name(eval_mode_name(EvalMode::EndToEnd)) == EvalMode::EndToEnd &&
                     evaluate(model, data, EvalMode::GoldSource).mode == EvalMode::GoldSource;
  std::vector<Sample> batch;
  ForwardOptions gold;
  for (const auto& ex : data) {
    batch.push_back(model.prepare(ex.tokens, ex.world));
    gold.forced_source.push_back(ex.source);
  }
  ad::Tape<float> free_tape, gold_tape;
  const auto a = model.forward(free_tape, batch, {}, false);
  const auto b = model.forward(gold_tape, batch, gold, false);
  const bool upstream = a.h_a.value() == b.h_a.value() && a.h_o.value() == b.h_o.value() &&
                        a.logits_a.value() == b.logits_a.value() && a.logits_op.value() == b.logits_op.value() &&
                        a.d_op.value() == b.d_op.value() && a.v_op.value() == b.v_op.value();
  // Each attention map is 10 * d_a scattered over the id grid, with d_a the
  // predicted distribution or the gold one-hot.
  double worst_free = 0.0, worst_gold = 0.0;
  std::size_t changed = 0;
  const std::size_t V = model.config().world.voxels(), K = static_cast<std::size_t>(model.config().num_blocks);
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::vector<double> d_a(K);
    for (std::size_t k = 0; k < K; ++k) d_a[k] = a.d_a.value()[r * K + k];
    const auto expect_free = attention_map(data[r].world, d_a);
    const auto expect_gold = attention_map(data[r].world, inject_one_hot(static_cast<std::size_t>(data[r].source - 1), K));
    bool differs = false;
    for (std::size_t v = 0; v < V; ++v) {
      worst_free = std::max(worst_free, std::abs(a.attention.value()[r * V + v] - expect_free[v]));
      worst_gold = std::max(worst_gold, std::abs(b.attention.value()[r * V + v] - expect_gold[v]));
      differs = differs || a.attention.value()[r * V + v] != b.attention.value()[r * V + v];
    }
    changed += differs;
  }
  std::ostringstream d;
  d << data.size() << " examples: encoder outputs, d_op and v_op " << (upstream ? "bit-identical" : "DIFFER")
    << "; attention maps differ on " << changed << ", match 10*d_a to " << fmt(worst_free, 3) << " (free) and "
    << fmt(worst_gold, 3) << " (gold); both modes " << (modes ? "available" : "MISSING");
  // Float attention is compared against a double oracle.
  return {modes && upstream && worst_free <= 1e-5 && worst_gold == 0.0, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string work_dir = (std::filesystem::temp_directory_path() / "spatialops_acceptance").string();
  app.add_option("--only", only, "Run only these criteria (1-8)")->check(CLI::Range(1, 8));
  app.add_option("--work-dir", work_dir, "Directory for checkpoints and sweep files");
  CLI11_PARSE(app, argc, argv);
  const auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  const std::filesystem::path work(work_dir);
  std::filesystem::create_directories(work);
  Trained trained;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"equation oracles", equation_oracles},
      {"metric correctness", metric_correctness},
      {"overfit", overfit},
      {"generalization", [&] { return generalization(trained, work); }},
      {"interpretability", [&] { return interpretability(trained, work); }},
      {"determinism and persistence", [&] { return determinism(work); }},
      {"evaluation protocol", [&] { return evaluation_protocol(trained); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures ? 1 : 0;
}

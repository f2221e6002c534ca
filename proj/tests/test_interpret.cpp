#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "spatialops/checkpoint.hpp"
#include "spatialops/interpret.hpp"
#include "spatialops/operation_bank.hpp"
#include "spatialops/repl.hpp"
#include "spatialops/synthetic.hpp"
#include "support/test_support.hpp"

using namespace spatialops;
namespace st = spatialops::testing;

namespace {

ModelConfig probe_config() {
  auto c = st::tiny_config();
  c.world = {2, 12, 12};
  return c;
}

Model<double> probe_model(std::uint64_t seed = 3) {
  Model<double> model(probe_config(), st::tiny_vocab(), seed);
  // Larger weights than the initializer so sweeps differ visibly across probes.
  std::mt19937_64 rng(seed);
  for (auto& p : model.parameters()) p.value = Tensor<double>::uniform(p.value.shape(), -0.5, 0.5, rng);
  return model;
}

// Pose predicted for `block` alone at `p` with both distributions forced.
std::array<double, 4> forced_pose(Model<double>& model, int block, const BlockPose& p, const std::vector<double>& d_op) {
  const auto& cfg = model.config();
  const auto world = WorldGrid::from_poses(cfg.world, cfg.num_blocks, {{block, p}});
  ForwardOptions options;
  options.forced_source = {block};
  options.forced_op = d_op;
  const std::vector<Sample> batch{Sample{{}, world.ids}};
  ad::Tape<double> tape;
  const auto& pose = model.forward(tape, batch, options, false).pose.value();
  return {pose[0], pose[1], pose[2], pose[3]};
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) ++n;
  return n;
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(SPATIALOPS_CLI) + " " + args + " > " + log.string() + " 2>&1";
  return std::system(cmd.c_str());
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(ProbePositions, GridCellsAndErrors) {
  const auto p = probe_positions({4, 16, 16}, 9);
  ASSERT_EQ(p.size(), 81u);
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 9; ++c) {
      const auto& q = p[r * 9 + c];
      // Cell c of 9 across 16 voxels.
      std::size_t col = 0, row = 0;
      while ((col + 1) * 18 <= (2 * c + 1) * 16) ++col;
      while ((row + 1) * 18 <= (2 * r + 1) * 16) ++row;
      EXPECT_EQ(q.x, static_cast<double>(col) + 0.5);
      EXPECT_EQ(q.y, static_cast<double>(row) + 0.5);
      EXPECT_EQ(q.z, 0.5);
    }
  EXPECT_EQ(probe_positions({1, 3, 3}, 3)[4].x, 1.5);
  EXPECT_THROW(probe_positions({4, 16, 16}, 0), std::invalid_argument);
  EXPECT_THROW(probe_positions({4, 8, 16}, 9), std::invalid_argument);
}

TEST(Sweep, MatchesPerProbeForcedForward) {
  auto model = probe_model();
  const auto d_op = interpolate(1, 2, 0.3, 4);
  const auto result = sweep(model, d_op, 9, 2);
  ASSERT_EQ(result.records.size(), 81u);
  EXPECT_EQ(result.grid_size, 9u);
  EXPECT_EQ(result.d_op, d_op);
  const auto probes = probe_positions(model.config().world, 9);
  for (std::size_t i = 0; i < 81; ++i) {
    const auto& r = result.records[i];
    EXPECT_EQ(r.row, i / 9);
    EXPECT_EQ(r.col, i % 9);
    const auto pose = forced_pose(model, 2, probes[i], d_op);
    EXPECT_NEAR(r.dx, pose[0] - probes[i].x, 1e-12);
    EXPECT_NEAR(r.dy, pose[1] - probes[i].y, 1e-12);
    EXPECT_NEAR(r.dz, pose[2] - probes[i].z, 1e-12);
    EXPECT_NEAR(r.dtheta, normalize_angle(pose[3]), 1e-12);
  }
  EXPECT_THROW(sweep(model, std::vector<double>(3, 1.0 / 3), 9), std::invalid_argument);
  EXPECT_THROW(sweep(model, d_op, 9, 4), std::out_of_range);
}

TEST(Sweep, IgnoresTheLanguageEncoder) {
  auto model = probe_model();
  const auto base = sweep_op(model, 1, 5);
  auto changed = model;
  for (auto& p : changed.parameters()) {
    if (p.name == "embedding" || p.name.starts_with("arg_") || (p.name.starts_with("op_") && p.name != "op_bank")) {
      for (auto& w : p.value.data()) w += 0.7;
    }
  }
  const auto after = sweep_op(changed, 1, 5);
  for (std::size_t i = 0; i < base.records.size(); ++i) {
    EXPECT_EQ(after.records[i].dx, base.records[i].dx);
    EXPECT_EQ(after.records[i].dtheta, base.records[i].dtheta);
  }
  // The operation bank does matter.
  auto bank = model;
  bank.parameter("op_bank")[1] += 0.5;
  EXPECT_NE(sweep_op(bank, 1, 5).records[0].dx, base.records[0].dx);
}

TEST(Sweep, MeanDisplacementOracle) {
  SweepResult s;
  s.grid_size = 3;
  for (std::size_t i = 0; i < 9; ++i) {
    SweepRecord r;
    r.row = i / 3;
    r.col = i % 3;
    r.dx = static_cast<double>(i);
    r.dy = i == 4 ? 4.0 : 0.0;
    r.dz = 1.0;
    s.records.push_back(r);
  }
  const auto all = mean_displacement(s, false);
  EXPECT_DOUBLE_EQ(all.dx, 4.0);
  EXPECT_DOUBLE_EQ(all.dy, 4.0 / 9);
  EXPECT_DOUBLE_EQ(all.dz, 1.0);
  EXPECT_DOUBLE_EQ(all.planar, (36.0 - 4.0 + std::hypot(4.0, 4.0)) / 9);
  const auto inner = mean_displacement(s, true);
  EXPECT_DOUBLE_EQ(inner.dx, 4.0);
  EXPECT_DOUBLE_EQ(inner.planar, std::hypot(4.0, 4.0));
  EXPECT_THROW(mean_displacement(SweepResult{}, false), std::invalid_argument);
}

TEST(SweepFiles, CsvRoundTripAndSvg) {
  auto model = probe_model();
  const auto result = sweep_op(model, 3, 9);
  std::stringstream csv;
  write_sweep_csv(result, csv);
  const auto text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 82);
  const auto back = read_sweep_csv(csv);
  ASSERT_EQ(back.records.size(), 81u);
  EXPECT_EQ(back.grid_size, 9u);
  for (std::size_t i = 0; i < 81; ++i) {
    const auto &a = result.records[i], &b = back.records[i];
    EXPECT_EQ(a.row, b.row);
    EXPECT_EQ(a.col, b.col);
    for (auto [u, v] : {std::pair{a.x, b.x}, {a.y, b.y}, {a.z, b.z}, {a.dx, b.dx}, {a.dy, b.dy}, {a.dz, b.dz},
                        {a.dtheta, b.dtheta}}) {
      EXPECT_NEAR(u, v, 5e-7);
    }
  }
  std::stringstream bad("row,col\n");
  EXPECT_THROW(read_sweep_csv(bad), std::runtime_error);
  std::stringstream junk("row,col,x,y,z,dx,dy,dz,dtheta\n0,0,1,2,3,4,5,6,seven\n");
  EXPECT_THROW(read_sweep_csv(junk), std::runtime_error);

  std::stringstream svg;
  write_sweep_svg({{"op 3", "#123456", &result}}, model.config().world, svg, 2.0);
  const auto s = svg.str();
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
  EXPECT_EQ(count_of(s, "marker-end"), 81u);
  EXPECT_EQ(count_of(s, "<circle"), 81u);
}

TEST(InterpolateSweep, EndpointsReduceToSingleOperations) {
  auto model = probe_model();
  const auto r = interpolate_sweep(model, 0, 2, {1.0, 0.5, 0.0}, 3);
  ASSERT_EQ(r.fields.size(), 3u);
  const auto k1 = sweep_op(model, 0, 3), k2 = sweep_op(model, 2, 3);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(r.fields[0].records[i].dx, k1.records[i].dx);
    EXPECT_EQ(r.fields[0].records[i].dy, k1.records[i].dy);
    EXPECT_EQ(r.fields[2].records[i].dx, k2.records[i].dx);
    EXPECT_EQ(r.fields[2].records[i].dy, k2.records[i].dy);
  }
  EXPECT_THROW(interpolate_sweep(model, 0, 2, {}, 3), std::invalid_argument);
  EXPECT_THROW(interpolate_sweep(model, 0, 2, {1.5}, 3), std::invalid_argument);
}

TEST(ClusterPhrases, ThresholdExtremesAndPurityOracle) {
  Model<double> model(st::tiny_config(), st::tiny_vocab(), 4);
  std::mt19937_64 rng(4);
  for (auto& p : model.parameters()) p.value = Tensor<double>::uniform(p.value.shape(), -1.0, 1.0, rng);
  const auto data = st::tiny_examples(12);

  const auto all = cluster_phrases(model, data);
  EXPECT_EQ(all.total, 12u);
  EXPECT_EQ(all.selected, 12u);
  // Argmax oracle from a plain forward pass.
  std::map<std::size_t, std::map<std::string, std::size_t>> expect;
  for (const auto& ex : data) {
    const std::vector<Sample> batch{model.prepare(ex.tokens, ex.world)};
    ad::Tape<double> tape;
    const auto d = model.forward(tape, batch, {}, false).d_op.value();
    std::size_t best = 0;
    for (std::size_t k = 1; k < d.size(); ++k)
      if (d[k] > d[best]) best = k;
    ++expect[best][ex.meta.relation];
  }
  ASSERT_EQ(all.clusters.size(), expect.size());
  double mean = 0.0;
  for (const auto& g : all.clusters) {
    EXPECT_EQ(g.relation_counts, expect[g.op]);
    std::size_t size = 0, top = 0;
    for (const auto& [rel, n] : expect[g.op]) {
      size += n;
      top = std::max(top, n);
    }
    EXPECT_EQ(g.size, size);
    EXPECT_DOUBLE_EQ(g.purity, static_cast<double>(top) / static_cast<double>(size));
    mean += g.purity;
  }
  EXPECT_DOUBLE_EQ(all.mean_purity, mean / static_cast<double>(all.clusters.size()));
  const long left = dominant_op(all, "left");
  EXPECT_GE(left, 0);
  EXPECT_EQ(dominant_op(all, "mirror-across-axis"), -1);

  const auto none = cluster_phrases(model, data, 0.0);
  EXPECT_EQ(none.selected, 0u);
  EXPECT_TRUE(none.clusters.empty());
  std::ostringstream out;
  print_cluster_table(none, out);
  EXPECT_NE(out.str().find("no examples"), std::string::npos);
  EXPECT_THROW(cluster_phrases(model, data, std::nan("")), std::invalid_argument);
}

TEST(Repl, CommandsAndScriptDeterminism) {
  auto model = probe_model();
  GeneratorConfig gc;
  gc.dims = model.config().world;
  gc.num_blocks = 3;
  std::mt19937_64 rng(5);
  std::vector<WorldGrid> scenes{generate_scene(rng, gc), generate_scene(rng, gc)};
  const std::string script = "\nscene 1\nmove red left of blue .\ninject op 2\nmove red\nclear\nscene 9\ninject op 7\nquit\nmove\n";
  const auto run = [&] {
    PredictRepl<double> repl(model, scenes);
    std::istringstream in(script);
    std::ostringstream out;
    repl.run(in, out, false);
    return out.str();
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.rfind("usage:", 0), 0u);
  EXPECT_NE(a.find("scene 1:"), std::string::npos);
  EXPECT_NE(a.find("operation 2 injected"), std::string::npos);
  EXPECT_NE(a.find("operations (injected)"), std::string::npos);
  EXPECT_NE(a.find("scene expects an index"), std::string::npos);
  EXPECT_NE(a.find("inject expects"), std::string::npos);
  EXPECT_NE(a.find("commands:"), std::string::npos);
  // Nothing after quit runs: exactly two predictions.
  EXPECT_EQ(count_of(a, "pose:"), 2u);

  PredictRepl<double> repl(model, scenes);
  std::ostringstream out;
  EXPECT_FALSE(repl.handle("quit", out));
  EXPECT_TRUE(repl.handle("inject block 2", out));
  EXPECT_EQ(repl.injected_block(), 2);
  auto wrong = model.config();
  wrong.world = {1, 4, 4};
  Model<double> small(wrong, st::tiny_vocab(), 1);
  EXPECT_THROW(PredictRepl<double>(small, scenes), std::invalid_argument);
  EXPECT_THROW(PredictRepl<double>(model, {}), std::invalid_argument);
}

TEST(Repl, InjectedPredictionMatchesSweep) {
  auto model = probe_model();
  const auto probe = probe_positions(model.config().world, 3)[4];
  const auto scene = WorldGrid::from_poses(model.config().world, 3, {{2, probe}});
  PredictRepl<double> repl(model, {scene});
  std::ostringstream out;
  repl.handle("inject op 1", out);
  repl.handle("inject block 2", out);
  repl.predict("move red left of blue .", out);
  const auto& r = sweep_op(model, 1, 3, 2).records[4];
  std::ostringstream expect;
  expect << std::fixed << std::setprecision(3) << "pose: x " << probe.x + r.dx << "  y " << probe.y + r.dy << "  z "
         << probe.z + r.dz << "  theta " << r.dtheta << "\n";
  EXPECT_NE(out.str().find(expect.str()), std::string::npos) << out.str() << "\nexpected " << expect.str();
}

TEST(Cli, PipelineAndExitCodes) {
  st::TempDir dir("cli");
  const auto log = dir / "log.txt";
  const std::string small =
      " --set world.depth=2 --set world.height=9 --set world.width=9 --set world.num_blocks=4"
      " --set data.num_scenes=10 --set data.train_examples=24 --set data.heldout_per_scene=2";
  const auto data = (dir / "d.jsonl").string();
  ASSERT_EQ(run_cli("gen-data --seed 3 --out " + data + small, log), 0) << read_file(log);
  EXPECT_EQ(read_dataset(data).size(), 30u);

  const auto ckpt = (dir / "ckpt").string();
  ASSERT_EQ(run_cli("train --data " + data + " --checkpoint-dir " + ckpt + small +
                        " --set model.num_ops=4 --set model.channels=4 --set model.hidden=8 --set model.embed=8"
                        " --set train.epochs=2 --set train.batch_size=8 --set train.precision=64",
                    log),
            0)
      << read_file(log);
  const auto best = ckpt + "/best.ckpt";
  EXPECT_TRUE(std::filesystem::exists(best));
  EXPECT_TRUE(std::filesystem::exists(ckpt + "/metrics.jsonl"));

  ASSERT_EQ(run_cli("eval --checkpoint " + best + " --data " + data, log), 0) << read_file(log);
  const auto report = nlohmann::json::parse(read_file(log));
  EXPECT_TRUE(report.contains("source_accuracy")) << report.dump();
  // Same checkpoint, same output.
  run_cli("eval --checkpoint " + best + " --data " + data, dir / "log2.txt");
  EXPECT_EQ(read_file(log), read_file(dir / "log2.txt"));

  const auto prefix = (dir / "op1").string();
  ASSERT_EQ(run_cli("sweep --checkpoint " + best + " --op 1 --out " + prefix, log), 0) << read_file(log);
  std::ifstream csv(prefix + ".csv");
  EXPECT_EQ(read_sweep_csv(csv).records.size(), 81u);
  EXPECT_TRUE(std::filesystem::exists(prefix + ".svg"));

  ASSERT_EQ(run_cli("cluster --checkpoint " + best + " --data " + data + " --threshold inf --split all", log), 0)
      << read_file(log);
  EXPECT_NE(read_file(log).find("selected 30 of 30"), std::string::npos) << read_file(log);

  std::ofstream(dir / "script.txt") << "scene 0\nmove adidas left of bmw .\nquit\n";
  ASSERT_EQ(run_cli("repl --checkpoint " + best + " --data " + data + " --script " + (dir / "script.txt").string(), log),
            0)
      << read_file(log);
  EXPECT_NE(read_file(log).find("pose:"), std::string::npos);

  EXPECT_NE(run_cli("", log), 0);
  EXPECT_NE(run_cli("eval --checkpoint " + data + " --data " + data, log), 0);
  EXPECT_NE(run_cli("sweep --checkpoint " + best + " --op 99 --out " + prefix, log), 0);
  EXPECT_NE(read_file(log).find("error:"), std::string::npos);
  EXPECT_NE(run_cli("gen-data --out " + data + " --set model.nonsense=1", log), 0);
  EXPECT_NE(read_file(log).find("model.nonsense"), std::string::npos);
}

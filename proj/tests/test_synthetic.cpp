#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "spatialops/config.hpp"
#include "spatialops/language.hpp"
#include "spatialops/synthetic.hpp"
#include "support/test_support.hpp"

using namespace spatialops;
using spatialops::testing::TempDir;

namespace {

GeneratorConfig small_generator() {
  GeneratorConfig gc;
  gc.dims = {4, 16, 16};
  gc.num_blocks = 8;
  return gc;
}

void expect_same_world(const WorldGrid& a, const WorldGrid& b) {
  EXPECT_EQ(a.dims, b.dims);
  EXPECT_EQ(a.num_block_types, b.num_block_types);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.poses, b.poses);
}

double planar_distance(const BlockPose& a, const BlockPose& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::string joined(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

}  // namespace

TEST(RelationTarget, TabulatedCases) {
  const BlockPose m{10.5, 4.5, 0.5, 0.3}, r{6.5, 8.5, 0.5, -1.0};
  EXPECT_EQ(relation_target(Relation::Left, m, r, 1.5), (BlockPose{5.0, 8.5, 0.5, 0.3}));
  EXPECT_EQ(relation_target(Relation::Right, m, r, 1.5), (BlockPose{8.0, 8.5, 0.5, 0.3}));
  EXPECT_EQ(relation_target(Relation::AboveNorth, m, r, 1.5), (BlockPose{6.5, 10.0, 0.5, 0.3}));
  EXPECT_EQ(relation_target(Relation::BelowSouth, m, r, 1.5), (BlockPose{6.5, 7.0, 0.5, 0.3}));
  EXPECT_EQ(relation_target(Relation::OnTop, m, r, 1.5), (BlockPose{6.5, 8.5, 1.5, 0.3}));
  EXPECT_EQ(relation_target(Relation::KLengthsOffset, m, r, 3.0), (BlockPose{6.5, 11.5, 0.5, 0.3}));
  EXPECT_EQ(relation_target(Relation::Mirror, m, r, 1.5), (BlockPose{2.5, 4.5, 0.5, 0.3}));
  const auto rot = relation_target(Relation::Rotate45Clockwise, BlockPose{3.5, 3.5, 0.5, 0.0}, r, 1.5);
  EXPECT_EQ(rot.x, 3.5);
  EXPECT_EQ(rot.y, 3.5);
  EXPECT_DOUBLE_EQ(rot.theta, -kPi / 4);
  // Wraps past -pi.
  EXPECT_NEAR(relation_target(Relation::Rotate45Clockwise, BlockPose{0, 0, 0, -kPi + 0.1}, r, 0).theta,
              kPi + 0.1 - kPi / 4, 1e-12);
}

TEST(RelationNames, RoundTripAndTemplates) {
  std::set<std::string> names;
  for (auto r : kAllRelations) {
    names.insert(std::string(relation_name(r)));
    EXPECT_EQ(relation_from_name(relation_name(r)), r);
    for (const auto& t : relation_templates(r)) {
      EXPECT_NE(t.find("{S}"), std::string::npos) << t;
      EXPECT_NE(t.find("{R}"), std::string::npos) << t;
      EXPECT_EQ(t.find("{K}") != std::string::npos, r == Relation::KLengthsOffset) << t;
    }
  }
  EXPECT_EQ(names.size(), kAllRelations.size());
  EXPECT_THROW(relation_from_name("sideways"), std::invalid_argument);
  EXPECT_EQ(block_name(1), "adidas");
  EXPECT_THROW(block_name(0), std::out_of_range);
  EXPECT_THROW(block_name(kMaxBlockTypes + 1), std::out_of_range);
}

TEST(GenerateScene, ZeroJitterSitsOnLattice) {
  auto gc = small_generator();
  gc.jitter = 0.0;
  gc.stack_probability = 0.0;
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = generate_scene(rng, gc);
    ASSERT_EQ(w.poses.size(), 8u);
    for (const auto& [id, p] : w.poses) {
      EXPECT_EQ(w.voxel_count(id), 1u) << "block " << id;
      EXPECT_EQ(p.z, 0.5);
      EXPECT_EQ(p.theta, 0.0);
      // Five sites of spacing 3 centered in 16 voxels: 2.5, 5.5, ..., 14.5.
      EXPECT_EQ(std::fmod(p.x - 2.5, 3.0), 0.0) << p.x;
      EXPECT_EQ(std::fmod(p.y - 2.5, 3.0), 0.0) << p.y;
      EXPECT_GE(p.x, 2.5);
      EXPECT_LE(p.y, 14.5);
    }
  }
}

TEST(GenerateScene, JitteredBlocksStayApartAndValid) {
  const auto gc = small_generator();
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto w = generate_scene(rng, gc);
    EXPECT_NO_THROW(w.validate());
    for (const auto& [a, pa] : w.poses) {
      EXPECT_TRUE(w.in_bounds(pa));
      EXPECT_EQ(w.voxel_count(a), 1u);
      for (const auto& [b, pb] : w.poses) {
        if (a >= b) continue;
        const double d = std::hypot(planar_distance(pa, pb), pa.z - pb.z);
        EXPECT_GE(d, 1.0) << a << " vs " << b;
      }
      // Stacked blocks rest exactly on a ground block.
      if (pa.z > 0.5) {
        bool supported = false;
        for (const auto& [b, pb] : w.poses) supported |= pb.x == pa.x && pb.y == pa.y && pb.z == pa.z - 1.0;
        EXPECT_TRUE(supported) << "block " << a;
      }
    }
  }
}

TEST(GenerateScene, RejectsImpossibleSettings) {
  std::mt19937_64 rng(3);
  auto gc = small_generator();
  gc.num_blocks = 0;
  EXPECT_THROW(generate_scene(rng, gc), std::invalid_argument);
  gc.num_blocks = kMaxBlockTypes + 1;
  EXPECT_THROW(generate_scene(rng, gc), std::invalid_argument);
  gc = small_generator();
  gc.lattice_spacing = 20.0;
  EXPECT_THROW(generate_scene(rng, gc), std::invalid_argument);
}

TEST(GenerateExample, SeededReproducibility) {
  const auto gc = small_generator();
  CorpusOptions opts{10, 40, 5};
  const auto a = generate_corpus(11, gc, opts), b = generate_corpus(11, gc, opts), c = generate_corpus(12, gc, opts);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].target, b[i].target);
    EXPECT_EQ(a[i].meta, b[i].meta);
    expect_same_world(a[i].world, b[i].world);
  }
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].target != c[i].target;
  EXPECT_TRUE(differs);
}

TEST(GenerateExample, TargetsAreSolvableFromTheInstruction) {
  auto gc = small_generator();
  gc.offset_jitter = 0.0;
  std::mt19937_64 rng(4);
  int seen_mirror = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const auto scene = generate_scene(rng, gc);
    const auto ex = generate_example(rng, scene, gc);
    EXPECT_NO_THROW(ex.validate());
    const Relation rel = relation_from_name(ex.meta.relation);
    const int mover = ex.meta.mover;
    const BlockPose& mp = scene.poses.at(mover);
    // Both block names appear in the sentence.
    const auto sentence = joined(ex.tokens);
    EXPECT_NE(sentence.find(block_name(mover)), std::string::npos) << sentence;

    if (rel == Relation::Rotate45Clockwise) {
      EXPECT_EQ(ex.source, mover);
      EXPECT_EQ(ex.target, relation_target(rel, mp, mp, 0.0));
      continue;
    }
    EXPECT_NE(ex.source, mover);
    EXPECT_NE(sentence.find(block_name(ex.source)), std::string::npos) << sentence;
    const BlockPose& rp = scene.poses.at(ex.source);
    double distance = gc.offset;
    if (rel == Relation::KLengthsOffset) {
      const bool three = std::find(ex.tokens.begin(), ex.tokens.end(), "three") != ex.tokens.end();
      distance = three ? 3.0 : 2.0;
    }
    EXPECT_EQ(ex.target, relation_target(rel, mp, rp, distance)) << sentence;
    EXPECT_TRUE(scene.in_bounds(ex.target));
    if (rel == Relation::OnTop) EXPECT_EQ(ex.target.z, rp.z + 1.0);
    if (rel == Relation::Mirror) {
      ++seen_mirror;
      // The mover is the next lattice neighbor east of the reference.
      EXPECT_NEAR(mp.x - rp.x, gc.lattice_spacing, 2 * gc.jitter + 1e-9);
      EXPECT_NEAR(ex.target.x - rp.x, rp.x - mp.x, 1e-12);
    }
  }
  EXPECT_GT(seen_mirror, 0);
}

TEST(GenerateExample, ParaphrasesShareTheTarget) {
  // With a fixed offset, one (relation, mover, reference) triple reached
  // through different templates must land on one target.
  auto gc = small_generator();
  gc.offset_jitter = 0.0;
  std::mt19937_64 scene_rng(5);
  const auto scene = generate_scene(scene_rng, gc);
  std::map<std::string, std::set<std::string>> sentences_by_target;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    std::mt19937_64 rng(seed);
    const auto ex = generate_example(rng, scene, gc);
    std::ostringstream key;
    key << ex.meta.relation << ' ' << ex.meta.mover << ' ' << ex.source << ' ' << ex.target.x << ' ' << ex.target.y
        << ' ' << ex.target.z << ' ' << ex.target.theta;
    sentences_by_target[key.str()].insert(ex.meta.template_id);
  }
  // Some targets are reached through more than one paraphrase.
  std::size_t multi = 0;
  for (const auto& [k, ids] : sentences_by_target) multi += ids.size() > 1;
  EXPECT_GT(multi, 0u);
}

TEST(GenerateExample, RequiresTwoBlocksAndRelations) {
  auto gc = small_generator();
  std::mt19937_64 rng(6);
  const auto one = WorldGrid::from_poses(gc.dims, 8, {{1, {1.5, 1.5, 0.5, 0.0}}});
  EXPECT_THROW(generate_example(rng, one, gc), std::invalid_argument);
  const auto scene = generate_scene(rng, gc);
  gc.relations.clear();
  EXPECT_THROW(generate_example(rng, scene, gc), std::invalid_argument);
  // Mirror alone on a scene without east neighbors is infeasible.
  gc.relations = {Relation::Mirror};
  gc.max_retries = 5;
  const auto apart = WorldGrid::from_poses(gc.dims, 8, {{1, {1.5, 1.5, 0.5, 0.0}}, {2, {1.5, 10.5, 0.5, 0.0}}});
  EXPECT_THROW(generate_example(rng, apart, gc), std::runtime_error);
}

TEST(GenerateCorpus, SceneSplitIsSeventyTwentyTen) {
  const auto corpus = generate_corpus(7, small_generator(), CorpusOptions{20, 56, 3});
  std::map<std::string, std::set<int>> scenes;
  std::map<std::string, int> counts;
  for (const auto& ex : corpus) {
    scenes[ex.meta.split].insert(ex.meta.scene);
    ++counts[ex.meta.split];
  }
  EXPECT_EQ(scenes["train"].size(), 14u);
  EXPECT_EQ(scenes["val"].size(), 4u);
  EXPECT_EQ(scenes["test"].size(), 2u);
  EXPECT_EQ(counts["train"], 56);
  EXPECT_EQ(counts["val"], 12);
  EXPECT_EQ(counts["test"], 6);
  for (int s : scenes["val"]) EXPECT_FALSE(scenes["train"].count(s));
  for (int s : scenes["test"]) EXPECT_FALSE(scenes["train"].count(s) || scenes["val"].count(s));
  EXPECT_EQ(select_split(corpus, "val").size(), 12u);
  EXPECT_THROW(generate_corpus(7, small_generator(), CorpusOptions{0, 1, 1}), std::invalid_argument);
}

TEST(DatasetIO, RoundTripPreservesEveryField) {
  auto gc = small_generator();
  gc.random_yaw = true;
  const auto corpus = generate_corpus(8, gc, CorpusOptions{10, 100, 0});
  ASSERT_EQ(corpus.size(), 100u);
  TempDir dir("dataset_roundtrip");
  write_dataset(corpus, dir / "d.jsonl");
  const auto back = read_dataset(dir / "d.jsonl");
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(back[i].tokens, corpus[i].tokens);
    EXPECT_EQ(back[i].source, corpus[i].source);
    EXPECT_EQ(back[i].meta, corpus[i].meta);
    expect_same_world(back[i].world, corpus[i].world);
    EXPECT_NEAR(back[i].target.x, corpus[i].target.x, 1e-9);
    EXPECT_NEAR(back[i].target.y, corpus[i].target.y, 1e-9);
    EXPECT_NEAR(back[i].target.z, corpus[i].target.z, 1e-9);
    EXPECT_NEAR(back[i].target.theta, corpus[i].target.theta, 1e-9);
  }
}

TEST(DatasetIO, MalformedRecordsNameLineAndField) {
  const auto corpus = generate_corpus(9, small_generator(), CorpusOptions{4, 3, 0});
  TempDir dir("dataset_errors");
  const auto good = example_to_json(corpus[0]).dump();
  {
    std::ofstream out(dir / "truncated.jsonl");
    out << good << "\n\n" << good.substr(0, good.size() / 2) << "\n";
  }
  try {
    read_dataset(dir / "truncated.jsonl");
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 3u);
  }

  auto record = example_to_json(corpus[0]);
  record.erase("target");
  {
    std::ofstream out(dir / "missing.jsonl");
    out << good << "\n" << record.dump() << "\n";
  }
  try {
    read_dataset(dir / "missing.jsonl");
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.field(), "target");
  }
  EXPECT_THROW(read_dataset(dir / "absent.jsonl"), std::runtime_error);
}

TEST(ConfigFile, ParseSetAndRoundTrip) {
  const auto c = Config::parse("# comment\nmodel.num_ops = 12\n\ntrain.lr = 0.002  # trailing\nmodel.mode = 2d\n");
  EXPECT_EQ(c.model.num_ops, 12u);
  EXPECT_DOUBLE_EQ(c.train.adam.lr, 0.002);
  const auto again = Config::parse(c.to_text());
  EXPECT_EQ(again.to_text(), c.to_text());
  EXPECT_EQ(again.model.num_ops, 12u);
  EXPECT_EQ(c.model_text().find("train."), std::string::npos);
  EXPECT_NE(c.model_text().find("model.num_ops = 12"), std::string::npos);
}

TEST(ConfigFile, ErrorsNameTheKey) {
  Config c;
  try {
    c.set("model.colour", "red");
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("model.colour"), std::string::npos);
  }
  try {
    c.set("train.lr", "fast");
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("train.lr"), std::string::npos);
  }
  EXPECT_THROW(c.set("model.mode", "4d"), std::invalid_argument);
  EXPECT_THROW(c.set("train.precision", "16"), std::invalid_argument);
  EXPECT_THROW(Config::parse("model.num_ops 8\n"), std::invalid_argument);
  EXPECT_THROW(Config::load("/nonexistent/desk.cfg"), std::runtime_error);
}

TEST(ConfigFile, DeskRecipeLoads) {
  const auto c = Config::load(std::filesystem::path(SPATIALOPS_SOURCE_DIR) / "configs" / "desk.cfg");
  EXPECT_EQ(c.model.num_ops, 8u);
  EXPECT_EQ(c.train.epochs, 40u);
  EXPECT_DOUBLE_EQ(c.train.loss.lambda_balance, 0.3);
}

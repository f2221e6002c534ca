#include "spatialops/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "spatialops/language.hpp"

namespace spatialops {

namespace {

const std::array<std::string, kMaxBlockTypes> kBlockNames = {
    "adidas", "bmw",    "burgerking", "cocacola", "esso",   "heineken", "hp",     "mcdonalds", "mercedes", "nvidia",
    "pepsi",  "shell",  "sri",        "starbucks", "stella", "target",   "texaco", "toyota",    "twitter",  "ups"};

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

std::size_t pick_index(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n)));
}

std::string render(const std::string& pattern, const std::string& mover, const std::string& reference,
                   const std::string& k_word) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '{' && i + 2 < pattern.size() && pattern[i + 2] == '}') {
      const char key = pattern[i + 1];
      out += key == 'S' ? mover : key == 'R' ? reference : k_word;
      i += 2;
    } else {
      out += pattern[i];
    }
  }
  return out;
}

}  // namespace

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::Left: return "left";
    case Relation::Right: return "right";
    case Relation::AboveNorth: return "above-north";
    case Relation::BelowSouth: return "below-south";
    case Relation::OnTop: return "on-top";
    case Relation::Mirror: return "mirror-across-axis";
    case Relation::Rotate45Clockwise: return "rotate-45-clockwise";
    case Relation::KLengthsOffset: return "k-lengths-offset";
  }
  return "unknown";
}

Relation relation_from_name(std::string_view name) {
  for (auto r : kAllRelations)
    if (relation_name(r) == name) return r;
  throw std::invalid_argument("unknown relation '" + std::string(name) + "'");
}

const std::vector<std::string>& relation_templates(Relation r) {
  static const std::map<Relation, std::vector<std::string>> kTemplates = {
      {Relation::Left,
       {"move {S} to the left of {R} .", "place {S} left of {R} .", "put {S} on the left side of {R} .",
        "to the left of {R} , set {S} down ."}},
      {Relation::Right,
       {"move {S} to the right of {R} .", "place {S} right of {R} .", "put {S} on the right side of {R} .",
        "to the right of {R} , set {S} down ."}},
      {Relation::AboveNorth,
       {"move {S} above {R} .", "place {S} north of {R} .", "slide {S} to the spot just above {R} ."}},
      {Relation::BelowSouth,
       {"move {S} below {R} .", "place {S} south of {R} .", "slide {S} to the spot just below {R} ."}},
      {Relation::OnTop,
       {"stack {S} on top of {R} .", "put {S} onto {R} .", "place {S} directly on top of {R} ."}},
      {Relation::Mirror,
       {"mirror {S} across {R} .", "reflect {S} to the other side of {R} .",
        "move {S} to its mirror position across {R} ."}},
      {Relation::Rotate45Clockwise,
       {"rotate {S} 45 degrees clockwise , leaving {R} alone .", "turn {S} clockwise by 45 degrees but keep {R} still .",
        "spin {S} 45 degrees clockwise without touching {R} ."}},
      {Relation::KLengthsOffset,
       {"move {S} {K} rows above {R} .", "place {S} {K} blocks north of {R} .", "put {S} {K} spaces above {R} ."}},
  };
  return kTemplates.at(r);
}

const std::string& block_name(int id) {
  if (id < 1 || id > kMaxBlockTypes) throw std::out_of_range("no name for block " + std::to_string(id));
  return kBlockNames[static_cast<std::size_t>(id - 1)];
}

BlockPose relation_target(Relation r, const BlockPose& mover, const BlockPose& reference, double distance) {
  BlockPose t{reference.x, reference.y, reference.z, mover.theta};
  switch (r) {
    case Relation::Left: t.x -= distance; break;
    case Relation::Right: t.x += distance; break;
    case Relation::AboveNorth:
    case Relation::KLengthsOffset: t.y += distance; break;
    case Relation::BelowSouth: t.y -= distance; break;
    case Relation::OnTop: t.z += 1.0; break;
    case Relation::Mirror:
      // Reflection through the vertical plane x = reference.x.
      t = BlockPose{2.0 * reference.x - mover.x, mover.y, mover.z, mover.theta};
      break;
    case Relation::Rotate45Clockwise:
      // Clockwise seen from above is negative yaw.
      t = BlockPose{mover.x, mover.y, mover.z, normalize_angle(mover.theta - kPi / 4.0)};
      break;
  }
  return t;
}

WorldGrid generate_scene(std::mt19937_64& rng, const GeneratorConfig& config) {
  if (config.num_blocks < 1 || config.num_blocks > kMaxBlockTypes) {
    throw std::invalid_argument("num_blocks must be in [1, " + std::to_string(kMaxBlockTypes) + "]");
  }
  const auto cols = static_cast<std::size_t>(static_cast<double>(config.dims.width) / config.lattice_spacing);
  const auto rows = static_cast<std::size_t>(static_cast<double>(config.dims.height) / config.lattice_spacing);
  if (cols == 0 || rows == 0) throw std::invalid_argument("lattice spacing exceeds the world size");
  // Centered lattice whose points sit on voxel centers.
  const double x0 = std::floor((static_cast<double>(config.dims.width) - config.lattice_spacing * static_cast<double>(cols - 1)) / 2.0) + 0.5;
  const double y0 = std::floor((static_cast<double>(config.dims.height) - config.lattice_spacing * static_cast<double>(rows - 1)) / 2.0) + 0.5;

  std::vector<std::size_t> free_sites(cols * rows);
  for (std::size_t i = 0; i < free_sites.size(); ++i) free_sites[i] = i;
  std::vector<int> ground;  // ids of ground blocks that nothing rests on yet
  std::map<int, BlockPose> poses;
  for (int id = 1; id <= config.num_blocks; ++id) {
    const double yaw = config.random_yaw ? normalize_angle(uniform(rng, -kPi, kPi)) : 0.0;
    const bool stack = config.dims.depth > 1 && !ground.empty() && unit_uniform(rng) < config.stack_probability;
    if (stack || free_sites.empty()) {
      if (ground.empty()) throw std::runtime_error("cannot place all blocks: world too small");
      const std::size_t g = pick_index(rng, ground.size());
      const BlockPose& base = poses.at(ground[g]);
      poses[id] = BlockPose{base.x, base.y, base.z + 1.0, yaw};
      ground.erase(ground.begin() + static_cast<std::ptrdiff_t>(g));
      continue;
    }
    const std::size_t s = pick_index(rng, free_sites.size());
    const std::size_t site = free_sites[s];
    free_sites.erase(free_sites.begin() + static_cast<std::ptrdiff_t>(s));
    const double x = x0 + config.lattice_spacing * static_cast<double>(site % cols) + uniform(rng, -config.jitter, config.jitter);
    const double y = y0 + config.lattice_spacing * static_cast<double>(site / cols) + uniform(rng, -config.jitter, config.jitter);
    poses[id] = BlockPose{x, y, 0.5, yaw};
    ground.push_back(id);
  }
  return WorldGrid::from_poses(config.dims, config.num_blocks, std::move(poses));
}

namespace {

std::size_t voxel_of(const WorldGrid& w, const BlockPose& p) {
  const auto k = static_cast<std::size_t>(std::floor(p.x));
  const auto j = static_cast<std::size_t>(std::floor(p.y));
  const auto i = static_cast<std::size_t>(std::floor(p.z));
  return (i * w.dims.height + j) * w.dims.width + k;
}

bool inside_with_margin(const WorldGrid& w, const BlockPose& p) {
  return p.x >= 0.5 && p.x <= static_cast<double>(w.dims.width) - 0.5 && p.y >= 0.5 &&
         p.y <= static_cast<double>(w.dims.height) - 0.5 && p.z >= 0.5 &&
         p.z <= static_cast<double>(w.dims.depth) - 0.5;
}

bool has_block_on_top(const WorldGrid& w, const BlockPose& p) {
  if (p.z + 1.0 >= static_cast<double>(w.dims.depth)) return false;
  return w.ids[voxel_of(w, BlockPose{p.x, p.y, p.z + 1.0, 0.0})] != 0;
}

}  // namespace

InstructionExample generate_example(std::mt19937_64& rng, const WorldGrid& scene, const GeneratorConfig& config) {
  if (scene.poses.size() < 2) throw std::invalid_argument("scene needs at least two blocks");
  if (config.relations.empty()) throw std::invalid_argument("no relations enabled");
  std::vector<int> ids;
  for (const auto& [id, p] : scene.poses) ids.push_back(id);

  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    const Relation rel = config.relations[pick_index(rng, config.relations.size())];
    std::vector<std::pair<int, int>> pairs;
    for (int m : ids)
      for (int r : ids) {
        if (m == r) continue;
        const BlockPose& mp = scene.poses.at(m);
        const BlockPose& rp = scene.poses.at(r);
        // Moving a block out from under another is not allowed.
        if (rel != Relation::Rotate45Clockwise && has_block_on_top(scene, mp)) continue;
        if (rel == Relation::OnTop && has_block_on_top(scene, rp)) continue;
        if (rel == Relation::Mirror) {
          // The mover must be the nearest ground neighbor east of the reference
          // in the same lattice row, so the reference alone fixes the target.
          if (mp.z != 0.5 || rp.z != 0.5) continue;
          if (std::abs(mp.y - rp.y) > 2.0 * config.jitter + 1e-9) continue;
          if (std::abs(mp.x - rp.x - config.lattice_spacing) > 2.0 * config.jitter + 1e-9) continue;
        }
        pairs.emplace_back(m, r);
      }
    if (pairs.empty()) continue;
    const auto [mover, reference] = pairs[pick_index(rng, pairs.size())];
    const BlockPose& mp = scene.poses.at(mover);
    const BlockPose& rp = scene.poses.at(reference);

    double distance = 0.0;
    std::string k_word;
    if (rel == Relation::KLengthsOffset) {
      const bool three = unit_uniform(rng) < 0.5;
      distance = three ? 3.0 : 2.0;
      k_word = three ? "three" : "two";
    } else {
      distance = config.offset + uniform(rng, -config.offset_jitter, config.offset_jitter);
    }
    const BlockPose target = relation_target(rel, mp, rp, distance);
    if (!inside_with_margin(scene, target)) continue;
    if (rel != Relation::Rotate45Clockwise) {
      const int occupant = scene.ids[voxel_of(scene, target)];
      if (occupant != 0 && occupant != mover) continue;
    }

    const auto& patterns = relation_templates(rel);
    const std::size_t t = pick_index(rng, patterns.size());
    InstructionExample ex;
    ex.tokens = tokenize(render(patterns[t], block_name(mover), block_name(reference), k_word));
    ex.world = scene;
    ex.source = rel == Relation::Rotate45Clockwise ? mover : reference;
    ex.target = target;
    ex.meta.template_id = std::string(relation_name(rel)) + "/" + std::to_string(t);
    ex.meta.relation = std::string(relation_name(rel));
    ex.meta.mover = mover;
    return ex;
  }
  throw std::runtime_error("no feasible relation found after " + std::to_string(config.max_retries) + " attempts");
}

std::vector<InstructionExample> generate_corpus(std::uint64_t seed, const GeneratorConfig& config,
                                                const CorpusOptions& options) {
  if (options.num_scenes < 1) throw std::invalid_argument("corpus needs at least one scene");
  std::mt19937_64 rng(seed);
  const int n = options.num_scenes;
  const int train_scenes = std::max(1, static_cast<int>(std::lround(0.7 * n)));
  const int val_scenes = std::min(n - train_scenes, static_cast<int>(std::lround(0.2 * n)));

  std::vector<WorldGrid> scenes;
  for (int s = 0; s < n; ++s) scenes.push_back(generate_scene(rng, config));

  std::vector<InstructionExample> out;
  auto emit = [&](int scene, const char* split) {
    auto ex = generate_example(rng, scenes[static_cast<std::size_t>(scene)], config);
    ex.meta.split = split;
    ex.meta.scene = scene;
    out.push_back(std::move(ex));
  };
  for (int i = 0; i < options.train_examples; ++i) emit(i % train_scenes, "train");
  for (int s = train_scenes; s < n; ++s)
    for (int i = 0; i < options.heldout_examples_per_scene; ++i) emit(s, s < train_scenes + val_scenes ? "val" : "test");
  return out;
}

}  // namespace spatialops

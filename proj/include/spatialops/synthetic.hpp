#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "spatialops/dataset.hpp"
#include "spatialops/world.hpp"

namespace spatialops {

enum class Relation { Left, Right, AboveNorth, BelowSouth, OnTop, Mirror, Rotate45Clockwise, KLengthsOffset };

inline constexpr std::array<Relation, 8> kAllRelations = {
    Relation::Left,   Relation::Right,  Relation::AboveNorth,        Relation::BelowSouth,
    Relation::OnTop,  Relation::Mirror, Relation::Rotate45Clockwise, Relation::KLengthsOffset};

std::string_view relation_name(Relation r);
Relation relation_from_name(std::string_view name);

// Paraphrases with {S} for the moved block and {R} for the reference, and {K}
// for the distance word of k-lengths-offset. Each names both blocks once.
const std::vector<std::string>& relation_templates(Relation r);

// Display name of block `id` (1-based).
const std::string& block_name(int id);
inline constexpr int kMaxBlockTypes = 20;

struct GeneratorConfig {
  WorldDims dims;
  int num_blocks = 8;
  double lattice_spacing = 3.0;
  double jitter = 0.15;  // uniform half-width on x and y
  double stack_probability = 0.2;
  bool random_yaw = false;
  double offset = 1.5;
  double offset_jitter = 0.25;
  std::vector<Relation> relations{kAllRelations.begin(), kAllRelations.end()};
  int max_retries = 200;
};

// Target pose produced by a relation. `distance` is the sampled offset for the
// directional relations and k for k-lengths-offset; unused otherwise.
BlockPose relation_target(Relation r, const BlockPose& mover, const BlockPose& reference, double distance);

// Blocks on a jittered lattice, some stacked on top of others.
WorldGrid generate_scene(std::mt19937_64& rng, const GeneratorConfig& config);

// Throws std::runtime_error when no feasible relation is found in time.
InstructionExample generate_example(std::mt19937_64& rng, const WorldGrid& scene, const GeneratorConfig& config);

struct CorpusOptions {
  int num_scenes = 100;
  int train_examples = 2000;          // spread over the training scenes
  int heldout_examples_per_scene = 20;
};

// Scenes are split 70/20/10 into train/val/test in generation order;
// meta.split and meta.scene record the assignment.
std::vector<InstructionExample> generate_corpus(std::uint64_t seed, const GeneratorConfig& config,
                                                const CorpusOptions& options);

}  // namespace spatialops

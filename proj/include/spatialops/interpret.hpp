#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "spatialops/dataset.hpp"
#include "spatialops/model.hpp"

// Probing tools for a trained model: operation sweeps over a single-block
// world, interpolation between two operations, and phrase clustering by the
// operation each instruction selects.
namespace spatialops {

struct SweepRecord {
  std::size_t row = 0, col = 0;  // probe index; row runs south to north
  double x = 0.0, y = 0.0, z = 0.0;  // probe block center
  double dx = 0.0, dy = 0.0, dz = 0.0, dtheta = 0.0;
};

struct SweepResult {
  std::size_t grid_size = 0;
  std::vector<double> d_op;
  std::vector<SweepRecord> records;  // row-major over the probe grid
};

struct Displacement {
  double dx = 0.0, dy = 0.0, dz = 0.0;
  double planar = 0.0;  // mean of sqrt(dx^2 + dy^2)
};

// Probe (r, c) of an n x n grid sits in voxel column floor((c + 0.5) W / n),
// row floor((r + 0.5) H / n) on the bottom layer.
std::vector<BlockPose> probe_positions(const WorldDims& dims, std::size_t grid_size);

// Moves block `block` across the probe grid alone in an otherwise empty world,
// forcing d_a onto it and d_op to `d_op`. The language encoder never runs.
template <typename T>
SweepResult sweep(Model<T>& model, const std::vector<double>& d_op, std::size_t grid_size, int block = 1);

template <typename T>
SweepResult sweep_op(Model<T>& model, std::size_t op_index, std::size_t grid_size, int block = 1);

// Means over every probe, or over probes off the outer ring of the grid.
Displacement mean_displacement(const SweepResult& result, bool interior_only);

// Header row, then one row per probe with 6 decimals.
void write_sweep_csv(const SweepResult& result, std::ostream& out);
SweepResult read_sweep_csv(std::istream& in);

struct SvgLayer {
  std::string label;
  std::string color;
  const SweepResult* result = nullptr;
};

// Top-down vector field. Arrows are drawn from each probe center with their
// planar displacement multiplied by `display_scale`.
void write_sweep_svg(const std::vector<SvgLayer>& layers, const WorldDims& dims, std::ostream& out,
                     double display_scale = 1.0);

struct InterpolationResult {
  std::size_t k1 = 0, k2 = 0;
  std::vector<double> alphas;
  std::vector<SweepResult> fields;  // one per alpha
  // Probes whose planar direction does not turn monotonically as alpha moves
  // through the list, described for the report.
  std::vector<std::string> monotonicity_violations;
};

// Sweeps alpha * k1 + (1 - alpha) * k2 for each alpha on a grid_size x
// grid_size probe grid.
template <typename T>
InterpolationResult interpolate_sweep(Model<T>& model, std::size_t k1, std::size_t k2,
                                      const std::vector<double>& alphas, std::size_t grid_size = 3);

struct PhraseCluster {
  std::size_t op = 0;
  std::size_t size = 0;
  std::map<std::string, std::size_t> relation_counts;
  std::string majority_relation;
  double purity = 0.0;
  std::vector<std::string> sample_phrases;
};

struct ClusterTable {
  double threshold = 0.0;
  std::size_t total = 0;     // examples scored
  std::size_t selected = 0;  // examples with H(d_op) <= threshold
  std::vector<PhraseCluster> clusters;  // ascending op index
  double mean_purity = 0.0;             // unweighted over clusters
  double weighted_purity = 0.0;         // weighted by cluster size
};

// Groups examples whose d_op entropy (nats) is at most `threshold` by the
// argmax operation.
template <typename T>
ClusterTable cluster_phrases(Model<T>& model, const std::vector<InstructionExample>& data,
                             double threshold = std::numeric_limits<double>::infinity(),
                             std::size_t sample_count = 3);

// Operation holding the most examples of `relation`; -1 when none.
long dominant_op(const ClusterTable& table, const std::string& relation);

void print_cluster_table(const ClusterTable& table, std::ostream& out);

}  // namespace spatialops

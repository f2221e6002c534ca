#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "spatialops/tensor.hpp"

// Voxel blocks world.
//
// Coordinates are in block-lengths: x runs west to east along the width axis,
// y south to north along the height axis, z upward along the depth axis. The
// id grid is stored row-major as [depth][height][width], so voxel (i, j, k)
// has its center at (x, y, z) = (k + 0.5, j + 0.5, i + 0.5).
namespace spatialops {

constexpr double kPi = 3.14159265358979323846;

struct BlockPose {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double theta = 0.0;

  bool operator==(const BlockPose&) const = default;
};

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// Wraps to (-pi, pi].
double normalize_angle(double theta);

// Yaw about the vertical axis. The quaternion is expressed in the renderer
// frame where Y points up. Rejects quaternions whose norm is off by > 1e-6.
double yaw_from_quaternion(const Quaternion& q);
Quaternion quaternion_from_yaw(double theta);

struct WorldDims {
  std::size_t depth = 4;
  std::size_t height = 16;
  std::size_t width = 16;

  std::size_t voxels() const { return depth * height * width; }
  bool operator==(const WorldDims&) const = default;
};

struct WorldGrid {
  WorldDims dims;
  int num_block_types = 8;
  std::vector<int> ids;  // 0 = background, 1..K = block
  std::map<int, BlockPose> poses;

  // Empty world of the given size.
  static WorldGrid empty(WorldDims dims, int num_block_types);

  // Rasterizes poses: a block fills every voxel whose center lies in its
  // axis-aligned unit cube [c - 0.5, c + 0.5). Later ids overwrite earlier ones.
  static WorldGrid from_poses(WorldDims dims, int num_block_types, std::map<int, BlockPose> poses);

  int id_at(std::size_t i, std::size_t j, std::size_t k) const {
    return ids[(i * dims.height + j) * dims.width + k];
  }
  bool in_bounds(const BlockPose& p) const;
  std::size_t voxel_count(int id) const;

  // Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

// [D, H, W, K + 1]; channel c is 1 exactly where ids == c.
Tensor<double> one_hot_world(const WorldGrid& world);

// 10 * d_a[id - 1] on block voxels, 0 on background. d_a has K entries.
Tensor<double> attention_map(const WorldGrid& world, std::span<const double> d_a);

// Block with the largest pose displacement; ties go to the lowest id.
int moved_furthest(const WorldGrid& before, const WorldGrid& after);

}  // namespace spatialops

#include "spatialops/world.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace spatialops {

double normalize_angle(double theta) {
  // remainder is exact and leaves values already in range untouched.
  double out = std::remainder(theta, 2.0 * kPi);
  if (out <= -kPi) out = kPi;
  return out;
}

double yaw_from_quaternion(const Quaternion& q) {
  const double norm = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
  if (std::abs(norm - 1.0) > 1e-6) {
    throw std::invalid_argument("quaternion is not unit length (norm " + std::to_string(norm) + ")");
  }
  // Y-X-Z Tait-Bryan decomposition; the first angle is the yaw about Y.
  return normalize_angle(std::atan2(2.0 * (q.w * q.y + q.x * q.z), 1.0 - 2.0 * (q.x * q.x + q.y * q.y)));
}

Quaternion quaternion_from_yaw(double theta) {
  return Quaternion{std::cos(theta / 2.0), 0.0, std::sin(theta / 2.0), 0.0};
}

WorldGrid WorldGrid::empty(WorldDims dims, int num_block_types) {
  WorldGrid w;
  w.dims = dims;
  w.num_block_types = num_block_types;
  w.ids.assign(dims.voxels(), 0);
  return w;
}

WorldGrid WorldGrid::from_poses(WorldDims dims, int num_block_types, std::map<int, BlockPose> poses) {
  WorldGrid w = empty(dims, num_block_types);
  for (const auto& [id, p] : poses) {
    // Voxel centers c + 0.5 inside [p - 0.5, p + 0.5) are exactly c = floor(p).
    const auto k = static_cast<long>(std::floor(p.x));
    const auto j = static_cast<long>(std::floor(p.y));
    const auto i = static_cast<long>(std::floor(p.z));
    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(dims.depth) || j >= static_cast<long>(dims.height) ||
        k >= static_cast<long>(dims.width)) {
      continue;
    }
    w.ids[(static_cast<std::size_t>(i) * dims.height + static_cast<std::size_t>(j)) * dims.width +
          static_cast<std::size_t>(k)] = id;
  }
  w.poses = std::move(poses);
  return w;
}

bool WorldGrid::in_bounds(const BlockPose& p) const {
  return p.x >= 0.0 && p.x <= static_cast<double>(dims.width) && p.y >= 0.0 &&
         p.y <= static_cast<double>(dims.height) && p.z >= 0.0 && p.z <= static_cast<double>(dims.depth);
}

std::size_t WorldGrid::voxel_count(int id) const {
  std::size_t n = 0;
  for (int v : ids) n += v == id;
  return n;
}

void WorldGrid::validate() const {
  if (dims.voxels() == 0) throw std::invalid_argument("world has a zero extent");
  if (num_block_types < 1) throw std::invalid_argument("world needs at least one block type");
  if (ids.size() != dims.voxels()) {
    throw std::invalid_argument("world has " + std::to_string(ids.size()) + " ids for " +
                                std::to_string(dims.voxels()) + " voxels");
  }
  for (int v : ids) {
    if (v < 0 || v > num_block_types) throw std::invalid_argument("world id " + std::to_string(v) + " out of range");
    if (v != 0 && !poses.contains(v)) throw std::invalid_argument("block " + std::to_string(v) + " has no pose");
  }
  for (const auto& [id, p] : poses) {
    if (id < 1 || id > num_block_types) throw std::invalid_argument("pose for unknown block " + std::to_string(id));
    if (!in_bounds(p)) throw std::invalid_argument("block " + std::to_string(id) + " lies outside the world");
  }
}

Tensor<double> one_hot_world(const WorldGrid& world) {
  const std::size_t channels = static_cast<std::size_t>(world.num_block_types) + 1;
  Tensor<double> out({world.dims.depth, world.dims.height, world.dims.width, channels});
  for (std::size_t v = 0; v < world.ids.size(); ++v) out[v * channels + static_cast<std::size_t>(world.ids[v])] = 1.0;
  return out;
}

Tensor<double> attention_map(const WorldGrid& world, std::span<const double> d_a) {
  if (d_a.size() != static_cast<std::size_t>(world.num_block_types)) {
    throw std::invalid_argument("block distribution has " + std::to_string(d_a.size()) + " entries, world has " +
                                std::to_string(world.num_block_types) + " block types");
  }
  Tensor<double> out({world.dims.depth, world.dims.height, world.dims.width});
  for (std::size_t v = 0; v < world.ids.size(); ++v) {
    const int id = world.ids[v];
    if (id != 0) out[v] = 10.0 * d_a[static_cast<std::size_t>(id - 1)];
  }
  return out;
}

int moved_furthest(const WorldGrid& before, const WorldGrid& after) {
  if (before.poses.empty()) throw std::invalid_argument("moved_furthest: empty block inventory");
  int best = 0;
  double best_dist = -1.0;
  for (const auto& [id, p] : before.poses) {
    auto it = after.poses.find(id);
    if (it == after.poses.end()) {
      throw std::invalid_argument("moved_furthest: block " + std::to_string(id) + " missing after the move");
    }
    const double dist = std::hypot(it->second.x - p.x, it->second.y - p.y, it->second.z - p.z);
    if (dist > best_dist) {
      best = id;
      best_dist = dist;
    }
  }
  return best;
}

}  // namespace spatialops

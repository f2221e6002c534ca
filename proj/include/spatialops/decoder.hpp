#pragma once

#include "spatialops/autodiff.hpp"
#include "spatialops/world.hpp"

namespace spatialops {

// Voxel-center coordinates, each [D, H, W].
struct CoordinateGrid {
  Tensor<double> gx, gy, gz;

  static CoordinateGrid for_world(const WorldDims& dims);
};

enum class ConvMode { ThreeD, TwoD };

template <typename T>
struct ConvStackParams {
  ad::Var<T> kernel1, bias1;  // [kd, 5, 5, C, C], [C]
  ad::Var<T> kernel2, bias2;  // [kd, 3, 3, C, C], [C]
  ad::Var<T> readout_kernel, readout_bias;  // [1, 1, 1, C, 8], [8]
  // TwoD mode only.
  ad::Var<T> gamma1, beta1, gamma2, beta2;
  ad::BatchNormState<T>* norm1 = nullptr;
  ad::BatchNormState<T>* norm2 = nullptr;
};

// Readout channel layout.
enum ReadoutChannel : std::size_t { kDx, kDy, kDz, kDTheta, kCx, kCy, kCz, kCTheta, kReadoutChannels };

// A [B, D, H, W] (x) v_op [B, C] through both conv layers and the 1x1x1
// readout projection -> [B, D, H, W, 8]. The first layer runs on the rank-one
// input directly instead of materializing the broadcast tensor.
template <typename T>
ad::Var<T> conv_stack(ad::Var<T> attention, ad::Var<T> v_op, const ConvStackParams<T>& p, ConvMode mode,
                      bool train);

// Same stack applied to an already broadcast feature tensor [B, D, H, W, C].
template <typename T>
ad::Var<T> conv_stack_dense(ad::Var<T> features, const ConvStackParams<T>& p, ConvMode mode, bool train);

// fields [B, D, H, W, 8] -> [B, 4] holding (x, y, z, theta). Every confidence
// channel gets its own softmax over all voxels; theta uses no grid term and
// is left unwrapped.
template <typename T>
ad::Var<T> readout(ad::Var<T> fields, const CoordinateGrid& grid);

}  // namespace spatialops

#include "spatialops/decoder.hpp"

#include <stdexcept>

namespace spatialops {

CoordinateGrid CoordinateGrid::for_world(const WorldDims& dims) {
  CoordinateGrid g;
  const Shape shape{dims.depth, dims.height, dims.width};
  g.gx = Tensor<double>(shape);
  g.gy = Tensor<double>(shape);
  g.gz = Tensor<double>(shape);
  std::size_t v = 0;
  for (std::size_t i = 0; i < dims.depth; ++i)
    for (std::size_t j = 0; j < dims.height; ++j)
      for (std::size_t k = 0; k < dims.width; ++k, ++v) {
        g.gx[v] = static_cast<double>(k) + 0.5;
        g.gy[v] = static_cast<double>(j) + 0.5;
        g.gz[v] = static_cast<double>(i) + 0.5;
      }
  return g;
}

namespace {

template <typename T>
ad::Var<T> activate(ad::Var<T> x, ad::Var<T> gamma, ad::Var<T> beta, ad::BatchNormState<T>* norm, ConvMode mode,
                    bool train) {
  if (mode == ConvMode::ThreeD) return ad::tanh(x);
  if (norm == nullptr) throw std::logic_error("2d conv stack needs batch-norm state");
  return ad::relu(ad::batchnorm(x, gamma, beta, *norm, train));
}

template <typename T>
ad::Var<T> finish_stack(ad::Var<T> layer1, const ConvStackParams<T>& p, ConvMode mode, bool train) {
  auto h1 = activate(layer1, p.gamma1, p.beta1, p.norm1, mode, train);
  auto h2 = activate(ad::conv3d(h1, p.kernel2, p.bias2), p.gamma2, p.beta2, p.norm2, mode, train);
  return ad::conv3d(h2, p.readout_kernel, p.readout_bias);
}

}  // namespace

template <typename T>
ad::Var<T> conv_stack(ad::Var<T> attention, ad::Var<T> v_op, const ConvStackParams<T>& p, ConvMode mode,
                      bool train) {
  return finish_stack(ad::conv3d_rank1(attention, v_op, p.kernel1, p.bias1), p, mode, train);
}

template <typename T>
ad::Var<T> conv_stack_dense(ad::Var<T> features, const ConvStackParams<T>& p, ConvMode mode, bool train) {
  return finish_stack(ad::conv3d(features, p.kernel1, p.bias1), p, mode, train);
}

template <typename T>
ad::Var<T> readout(ad::Var<T> fields, const CoordinateGrid& grid) {
  const auto& s = fields.value().shape();
  if (s.size() != 5 || s[4] != kReadoutChannels) {
    throw std::invalid_argument("readout needs [B, D, H, W, 8] fields, got " + shape_string(s));
  }
  const std::size_t batch = s[0], voxels = s[1] * s[2] * s[3];
  if (grid.gx.size() != voxels) throw std::invalid_argument("coordinate grid does not match the fields");
  auto& tape = fields.tape();
  auto flat = ad::reshape(fields, {batch, voxels, kReadoutChannels});
  auto offsets = ad::slice_last(flat, kDx, kDTheta + 1);
  auto confidence = ad::softmax(ad::slice_last(flat, kCx, kCTheta + 1), 1);
  Tensor<T> g({batch, voxels, 4});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t v = 0; v < voxels; ++v) {
      T* row = &g[(b * voxels + v) * 4];
      row[0] = static_cast<T>(grid.gx[v]);
      row[1] = static_cast<T>(grid.gy[v]);
      row[2] = static_cast<T>(grid.gz[v]);
    }
  auto located = ad::add(offsets, tape.constant(std::move(g)));
  return ad::sum_axis(ad::mul(confidence, located), 1);
}

template ad::Var<float> conv_stack(ad::Var<float>, ad::Var<float>, const ConvStackParams<float>&, ConvMode, bool);
template ad::Var<double> conv_stack(ad::Var<double>, ad::Var<double>, const ConvStackParams<double>&, ConvMode, bool);
template ad::Var<float> conv_stack_dense(ad::Var<float>, const ConvStackParams<float>&, ConvMode, bool);
template ad::Var<double> conv_stack_dense(ad::Var<double>, const ConvStackParams<double>&, ConvMode, bool);
template ad::Var<float> readout(ad::Var<float>, const CoordinateGrid&);
template ad::Var<double> readout(ad::Var<double>, const CoordinateGrid&);

}  // namespace spatialops

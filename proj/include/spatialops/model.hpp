#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spatialops/autodiff.hpp"
#include "spatialops/decoder.hpp"
#include "spatialops/language.hpp"
#include "spatialops/world.hpp"

namespace spatialops {

struct ModelConfig {
  WorldDims world;
  int num_blocks = 8;
  std::size_t num_ops = 32;
  std::size_t channels = 16;
  std::size_t embed = 32;
  std::size_t hidden = 64;
  ConvMode mode = ConvMode::ThreeD;

  // Kernel depth used by both conv layers.
  std::size_t kernel_depth() const { return std::min<std::size_t>(4, world.depth); }
  bool operator==(const ModelConfig&) const = default;
};

// Model-ready form of one instruction and its world.
struct Sample {
  std::vector<std::size_t> tokens;
  std::vector<int> ids;
};

struct ForwardOptions {
  // One block id per batch row; replaces d_a with a one-hot before the
  // attention map is built.
  std::vector<int> forced_source;
  // Replaces d_op for every row.
  std::optional<std::vector<double>> forced_op;
};

// When both distributions are forced the encoder does not run and the
// encoder-side Vars are left invalid.
template <typename T>
struct ForwardResult {
  ad::Var<T> h_a, h_o;             // [B, 2H]
  ad::Var<T> logits_a, logits_op;  // [B, K], [B, N]
  ad::Var<T> d_a, d_op;            // distributions actually used downstream
  ad::Var<T> v_op;                 // [B, C]
  ad::Var<T> attention;            // [B, D, H, W]
  ad::Var<T> fields;               // [B, D, H, W, 8]
  ad::Var<T> pose;                 // [B, 4] = x, y, z, theta
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class Model {
 public:
  Model(ModelConfig config, Vocabulary vocab, std::uint64_t seed);
  // Assembles a model from stored tensors; names and shapes must match the
  // layout that `config` implies.
  Model(ModelConfig config, Vocabulary vocab, std::vector<NamedTensor<T>> params,
        std::vector<ad::BatchNormState<T>> norms);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const CoordinateGrid& grid() const { return grid_; }

  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  Tensor<T>& parameter(std::string_view name);
  const Tensor<T>& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  // Running moments of the two batch-norm layers; empty in 3d mode.
  std::vector<ad::BatchNormState<T>>& norms() { return norms_; }
  const std::vector<ad::BatchNormState<T>>& norms() const { return norms_; }

  Sample prepare(const std::vector<std::string>& tokens, const WorldGrid& world) const;

  // With `bound` non-null every parameter is registered as a trainable leaf
  // and (*bound)[i] pairs with parameters()[i]; otherwise parameters enter
  // the tape as constants. `train` selects batch statistics in 2d mode.
  ForwardResult<T> forward(ad::Tape<T>& tape, std::span<const Sample> batch, const ForwardOptions& options,
                           bool train, std::vector<ad::Var<T>>* bound = nullptr);

  template <typename U>
  Model<U> converted() const {
    std::vector<NamedTensor<U>> params;
    for (const auto& p : params_) params.push_back({p.name, p.value.template cast<U>()});
    std::vector<ad::BatchNormState<U>> norms;
    for (const auto& n : norms_) {
      ad::BatchNormState<U> m(n.running_mean.size());
      m.running_mean = n.running_mean.template cast<U>();
      m.running_var = n.running_var.template cast<U>();
      norms.push_back(std::move(m));
    }
    return Model<U>(config_, vocab_, std::move(params), std::move(norms));
  }

 private:
  // Name and shape of every parameter, in storage order.
  static std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& config, std::size_t vocab_size);
  std::size_t index_of(std::string_view name) const;

  ModelConfig config_;
  Vocabulary vocab_;
  CoordinateGrid grid_;
  std::vector<NamedTensor<T>> params_;
  std::vector<ad::BatchNormState<T>> norms_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace spatialops

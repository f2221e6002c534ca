#include "spatialops/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "spatialops/operation_bank.hpp"

namespace spatialops {

namespace {

const char* const kEncoders[] = {"arg", "op"};
const char* const kDirections[] = {"fwd", "bwd"};

}  // namespace

template <typename T>
std::vector<std::pair<std::string, Shape>> Model<T>::layout(const ModelConfig& c, std::size_t vocab_size) {
  const std::size_t E = c.embed, H = c.hidden, C = c.channels, kd = c.kernel_depth();
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("embedding", Shape{vocab_size, E});
  for (auto enc : kEncoders)
    for (auto dir : kDirections) {
      const std::string prefix = std::string(enc) + "_" + dir;
      out.emplace_back(prefix + "_wx", Shape{E, 4 * H});
      out.emplace_back(prefix + "_wh", Shape{H, 4 * H});
      out.emplace_back(prefix + "_b", Shape{4 * H});
    }
  out.emplace_back("arg_head_w", Shape{2 * H, static_cast<std::size_t>(c.num_blocks)});
  out.emplace_back("arg_head_b", Shape{static_cast<std::size_t>(c.num_blocks)});
  out.emplace_back("op_head_w", Shape{2 * H, c.num_ops});
  out.emplace_back("op_head_b", Shape{c.num_ops});
  out.emplace_back("op_bank", Shape{C, c.num_ops});
  out.emplace_back("conv1_w", Shape{kd, 5, 5, C, C});
  out.emplace_back("conv1_b", Shape{C});
  out.emplace_back("conv2_w", Shape{kd, 3, 3, C, C});
  out.emplace_back("conv2_b", Shape{C});
  out.emplace_back("readout_w", Shape{1, 1, 1, C, kReadoutChannels});
  out.emplace_back("readout_b", Shape{kReadoutChannels});
  if (c.mode == ConvMode::TwoD) {
    out.emplace_back("bn1_gamma", Shape{C});
    out.emplace_back("bn1_beta", Shape{C});
    out.emplace_back("bn2_gamma", Shape{C});
    out.emplace_back("bn2_beta", Shape{C});
  }
  return out;
}

template <typename T>
Model<T>::Model(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), grid_(CoordinateGrid::for_world(config.world)) {
  if (config_.num_blocks < 1 || config_.num_ops == 0 || config_.channels == 0 || config_.embed == 0 ||
      config_.hidden == 0 || config_.world.voxels() == 0) {
    throw std::invalid_argument("model sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  const T H = static_cast<T>(config_.hidden);
  const T C = static_cast<T>(config_.channels);
  const T kd = static_cast<T>(config_.kernel_depth());
  for (auto& [name, shape] : layout(config_, vocab_.size())) {
    T bound = 0;
    if (name == "embedding") {
      bound = T(0.1);
    } else if (name.ends_with("_wx") || name.ends_with("_wh")) {
      bound = T{1} / std::sqrt(H);
    } else if (name.ends_with("head_w")) {
      bound = T{1} / std::sqrt(2 * H);
    } else if (name == "op_bank" || name == "readout_w") {
      bound = T{1} / std::sqrt(C);
    } else if (name == "conv1_w") {
      bound = T{1} / std::sqrt(kd * 25 * C);
    } else if (name == "conv2_w") {
      bound = T{1} / std::sqrt(kd * 9 * C);
    }
    Tensor<T> value = bound > 0 ? Tensor<T>::uniform(shape, -bound, bound, rng) : Tensor<T>(shape);
    if (name.ends_with("gamma")) value.fill(T{1});
    if (name.ends_with("fwd_b") || name.ends_with("bwd_b")) {
      // Forget-gate bias starts at 1.
      for (std::size_t j = config_.hidden; j < 2 * config_.hidden; ++j) value[j] = T{1};
    }
    params_.push_back({name, std::move(value)});
  }
  if (config_.mode == ConvMode::TwoD) norms_.assign(2, ad::BatchNormState<T>(config_.channels));
}

template <typename T>
Model<T>::Model(ModelConfig config, Vocabulary vocab, std::vector<NamedTensor<T>> params,
                std::vector<ad::BatchNormState<T>> norms)
    : config_(config),
      vocab_(std::move(vocab)),
      grid_(CoordinateGrid::for_world(config.world)),
      params_(std::move(params)),
      norms_(std::move(norms)) {
  const auto expected = layout(config_, vocab_.size());
  if (expected.size() != params_.size()) {
    throw std::invalid_argument("expected " + std::to_string(expected.size()) + " parameters, got " +
                                std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params_[i].name != expected[i].first || params_[i].value.shape() != expected[i].second) {
      throw std::invalid_argument("parameter " + params_[i].name + " " + shape_string(params_[i].value.shape()) +
                                  " does not match expected " + expected[i].first + " " +
                                  shape_string(expected[i].second));
    }
  }
  const std::size_t want_norms = config_.mode == ConvMode::TwoD ? 2 : 0;
  if (norms_.size() != want_norms) throw std::invalid_argument("wrong number of batch-norm states");
}

template <typename T>
std::size_t Model<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename T>
Tensor<T>& Model<T>::parameter(std::string_view name) {
  return params_[index_of(name)].value;
}

template <typename T>
const Tensor<T>& Model<T>::parameter(std::string_view name) const {
  return params_[index_of(name)].value;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Sample Model<T>::prepare(const std::vector<std::string>& tokens, const WorldGrid& world) const {
  if (world.dims != config_.world) throw std::invalid_argument("world size does not match the model");
  if (world.num_block_types != config_.num_blocks) {
    throw std::invalid_argument("world has " + std::to_string(world.num_block_types) + " block types, model has " +
                                std::to_string(config_.num_blocks));
  }
  return Sample{vocab_.encode(tokens), world.ids};
}

template <typename T>
ForwardResult<T> Model<T>::forward(ad::Tape<T>& tape, std::span<const Sample> batch, const ForwardOptions& options,
                                   bool train, std::vector<ad::Var<T>>* bound) {
  const std::size_t B = batch.size();
  if (B == 0) throw std::invalid_argument("forward on an empty batch");
  const std::size_t K = static_cast<std::size_t>(config_.num_blocks), N = config_.num_ops;
  const auto& dims = config_.world;
  const std::size_t V = dims.voxels();

  std::vector<ad::Var<T>> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(bound ? tape.parameter(p.value) : tape.constant(p.value));
  if (bound) *bound = vars;
  auto var = [&](std::string_view name) { return vars[index_of(name)]; };

  const bool source_forced = !options.forced_source.empty();
  const bool op_forced = options.forced_op.has_value();
  if (source_forced && options.forced_source.size() != B) {
    throw std::invalid_argument("forced_source needs one block per batch row");
  }
  if (op_forced && options.forced_op->size() != N) {
    throw std::invalid_argument("forced operation distribution has " + std::to_string(options.forced_op->size()) +
                                " entries, model has " + std::to_string(N) + " operations");
  }

  ForwardResult<T> out;
  if (!(source_forced && op_forced)) {
    std::size_t longest = 0;
    std::vector<std::size_t> lengths(B);
    for (std::size_t b = 0; b < B; ++b) {
      if (batch[b].tokens.empty()) throw std::invalid_argument("cannot encode an empty instruction");
      lengths[b] = batch[b].tokens.size();
      longest = std::max(longest, lengths[b]);
    }
    auto embedding = var("embedding");
    std::vector<ad::Var<T>> steps;
    std::vector<std::size_t> column(B);
    for (std::size_t t = 0; t < longest; ++t) {
      for (std::size_t b = 0; b < B; ++b) {
        column[b] = t < lengths[b] ? batch[b].tokens[t] : Vocabulary::kPad;
        if (column[b] >= vocab_.size()) throw std::out_of_range("token index outside the vocabulary");
      }
      steps.push_back(ad::gather_rows(embedding, std::span<const std::size_t>(column)));
    }
    auto weights = [&](const std::string& prefix) {
      return LstmWeights<T>{var(prefix + "_wx"), var(prefix + "_wh"), var(prefix + "_b")};
    };
    out.h_a = bilstm_final_states(steps, lengths, weights("arg_fwd"), weights("arg_bwd"));
    out.h_o = bilstm_final_states(steps, lengths, weights("op_fwd"), weights("op_bwd"));
    out.logits_a = ad::add_bias(ad::matmul(out.h_a, var("arg_head_w")), var("arg_head_b"));
    out.logits_op = ad::add_bias(ad::matmul(out.h_o, var("op_head_w")), var("op_head_b"));
  }

  if (source_forced) {
    Tensor<T> one_hot({B, K});
    for (std::size_t b = 0; b < B; ++b) {
      const int s = options.forced_source[b];
      if (s < 1 || s > config_.num_blocks) throw std::out_of_range("forced source " + std::to_string(s));
      one_hot[b * K + static_cast<std::size_t>(s - 1)] = T{1};
    }
    out.d_a = tape.constant(std::move(one_hot));
  } else {
    out.d_a = ad::softmax(out.logits_a, 1);
  }
  if (op_forced) {
    Tensor<T> d({B, N});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < N; ++k) d[b * N + k] = static_cast<T>((*options.forced_op)[k]);
    out.d_op = tape.constant(std::move(d));
  } else {
    out.d_op = ad::softmax(out.logits_op, 1);
  }

  // Attention: 10 * d_a[id - 1] on block voxels, 0 on background.
  std::vector<int> columns(B * V);
  for (std::size_t b = 0; b < B; ++b) {
    if (batch[b].ids.size() != V) throw std::invalid_argument("world ids do not match the model's world size");
    for (std::size_t v = 0; v < V; ++v) {
      const int id = batch[b].ids[v];
      if (id < 0 || id > config_.num_blocks) throw std::out_of_range("world id " + std::to_string(id));
      columns[b * V + v] = id - 1;
    }
  }
  out.attention = ad::reshape(ad::scale(ad::gather_cols(out.d_a, std::span<const int>(columns), V), T{10}),
                              {B, dims.depth, dims.height, dims.width});
  out.v_op = op_vectors(var("op_bank"), out.d_op);

  ConvStackParams<T> stack;
  stack.kernel1 = var("conv1_w");
  stack.bias1 = var("conv1_b");
  stack.kernel2 = var("conv2_w");
  stack.bias2 = var("conv2_b");
  stack.readout_kernel = var("readout_w");
  stack.readout_bias = var("readout_b");
  if (config_.mode == ConvMode::TwoD) {
    stack.gamma1 = var("bn1_gamma");
    stack.beta1 = var("bn1_beta");
    stack.gamma2 = var("bn2_gamma");
    stack.beta2 = var("bn2_beta");
    stack.norm1 = &norms_[0];
    stack.norm2 = &norms_[1];
  }
  out.fields = conv_stack(out.attention, out.v_op, stack, config_.mode, train);
  out.pose = readout(out.fields, grid_);
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace spatialops

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "spatialops/dataset.hpp"
#include "spatialops/model.hpp"

namespace spatialops {

struct LossConfig {
  double w_source = 1.0;
  double w_xyz = 1.0;
  double w_theta = 1.0;
  double lambda_a = 0.01;
  double lambda_op = 0.01;
  // Weight of ln(N_op) - H(batch mean of d_op), which keeps every operation
  // in use while the per-example entropy term sharpens d_op.
  double lambda_balance = 0.0;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

// Batch means of each term; `total` is the weighted sum.
template <typename T>
struct LossTerms {
  ad::Var<T> total, source_ce, xyz, theta, entropy_a, entropy_op, op_balance;
};

struct Gold {
  std::vector<int> source;
  std::vector<BlockPose> target;
};

// CE against the gold source, squared distance, squared wrapped angle and
// the Shannon entropies of d_a and d_op.
template <typename T>
LossTerms<T> compute_loss(ad::Tape<T>& tape, const ForwardResult<T>& pred, const Gold& gold, const LossConfig& cfg);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // grads[i] pairs with params[i] and must share its shape.
  void step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads);
  std::size_t steps() const { return steps_; }
  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

double metric_xyz(const BlockPose& p, const BlockPose& g);
// Signed wrapped difference p - g in (-pi, pi].
double metric_theta(double p, double g);

enum class EvalMode { GoldSource, EndToEnd };

struct PoseHistogram {
  std::vector<double> edges;  // bin i covers [edges[i], edges[i + 1])
  std::vector<std::size_t> counts;
};

struct EvalReport {
  EvalMode mode = EvalMode::EndToEnd;
  std::size_t count = 0;
  double source_accuracy = 0.0;
  double mean_xyz = 0.0;
  double median_xyz = 0.0;
  double mean_theta = 0.0;           // mean |L_theta| over every example
  double mean_theta_rotation = 0.0;  // over rotation-bearing examples only
  std::size_t rotation_count = 0;
  double in_bounds_fraction = 0.0;
  PoseHistogram theta_histogram;     // |L_theta| of rotation-bearing examples
  std::vector<BlockPose> predictions;
  std::vector<double> xyz_errors;
};

std::string_view eval_mode_name(EvalMode mode);
// Single-line JSON form of a report.
std::string eval_report_json(const EvalReport& report);
EvalMode eval_mode_from_name(std::string_view name);

// True when the gold target changes the moved block's yaw.
bool rotation_bearing(const InstructionExample& ex);

template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<InstructionExample>& data, EvalMode mode,
                    std::size_t batch_size = 64);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 60;
  std::size_t max_steps = 0;   // 0 = no cap
  std::size_t eval_every = 1;  // epochs between validation passes
  std::uint64_t seed = 1;
  int precision = 32;          // 32 or 64
  AdamConfig adam;
  // Cosine decay from adam.lr to zero over the planned step count.
  bool cosine_decay = false;
  LossConfig loss;

  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0, source_ce = 0.0, xyz = 0.0, theta = 0.0, entropy_a = 0.0, entropy_op = 0.0, op_balance = 0.0;
  std::string eval_split;
  double source_accuracy = 0.0, mean_xyz = 0.0, median_xyz = 0.0, mean_theta = 0.0;
};

std::string epoch_record_json(const EpochRecord& r);

struct TrainOutputs {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::ostream* metrics_log = nullptr;   // one JSON object per line
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  double best_val_xyz = 0.0;
};

// Vocabulary over every token of `examples`.
Vocabulary training_vocabulary(const std::vector<InstructionExample>& examples);

// Shuffled mini-batch Adam on `train`, validating end to end on `val` (or on
// `train` when `val` is empty). Writes best.ckpt (lowest validation mean
// distance) and last.ckpt. A non-finite loss stops training with
// TrainingDiverged and leaves the checkpoints of the last good epoch intact.
template <typename T>
TrainResult train(Model<T>& model, const std::vector<InstructionExample>& train,
                  const std::vector<InstructionExample>& val, const TrainConfig& config,
                  const TrainOutputs& outputs = {});

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace spatialops

#include "spatialops/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "spatialops/checkpoint.hpp"

namespace spatialops {

void LossConfig::validate() const {
  for (double w : {w_source, w_xyz, w_theta, lambda_a, lambda_op, lambda_balance}) {
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
  }
}

namespace {

// Mean Shannon entropy of softmax(logits) over rows, from log-probabilities.
template <typename T>
ad::Var<T> entropy_from_logits(ad::Var<T> logits) {
  const auto rows = static_cast<T>(logits.value().dim(0));
  auto logp = ad::log_softmax(logits, 1);
  return ad::scale(ad::sum(ad::mul(ad::exp(logp), logp)), T{-1} / rows);
}

// Same for a distribution that enters the graph as a constant.
template <typename T>
ad::Var<T> entropy_of_constant(ad::Tape<T>& tape, const Tensor<T>& p) {
  const auto rows = static_cast<T>(p.dim(0));
  T h{0};
  for (T v : p.data())
    if (v > T{0}) h -= v * std::log(v);
  return tape.constant(Tensor<T>::scalar(h / rows));
}

// ln(N) minus the entropy of the batch-mean distribution.
template <typename T>
ad::Var<T> balance_deficit(ad::Var<T> dist) {
  const auto& shape = dist.value().shape();
  const T rows = static_cast<T>(shape[0]);
  const T n = static_cast<T>(shape[1]);
  auto mean = ad::scale(ad::sum_axis(dist, 0), T{1} / rows);
  // The offset keeps log finite when an operation's mass underflows.
  auto h = ad::scale(ad::sum(ad::mul(mean, ad::log(ad::add_scalar(mean, T(1e-12))))), T{-1});
  return ad::add_scalar(ad::scale(h, T{-1}), std::log(n));
}

}  // namespace

template <typename T>
LossTerms<T> compute_loss(ad::Tape<T>& tape, const ForwardResult<T>& pred, const Gold& gold, const LossConfig& cfg) {
  cfg.validate();
  const std::size_t B = pred.pose.value().dim(0);
  if (gold.source.size() != B || gold.target.size() != B) {
    throw std::invalid_argument("gold labels must cover every batch row");
  }
  Tensor<T> xyz({B, 3}), theta({B, 1});
  for (std::size_t b = 0; b < B; ++b) {
    xyz[b * 3 + 0] = static_cast<T>(gold.target[b].x);
    xyz[b * 3 + 1] = static_cast<T>(gold.target[b].y);
    xyz[b * 3 + 2] = static_cast<T>(gold.target[b].z);
    theta[b] = static_cast<T>(gold.target[b].theta);
  }
  const T inv_b = T{1} / static_cast<T>(B);

  LossTerms<T> out;
  auto diff = ad::sub(ad::slice_last(pred.pose, 0, 3), tape.constant(std::move(xyz)));
  out.xyz = ad::scale(ad::sum(ad::square(diff)), inv_b);
  auto dtheta = ad::sub(ad::slice_last(pred.pose, 3, 4), tape.constant(std::move(theta)));
  out.theta = ad::scale(ad::sum(ad::square(ad::atan2(ad::sin(dtheta), ad::cos(dtheta)))), inv_b);

  if (pred.logits_a.valid()) {
    std::vector<std::size_t> idx(B);
    const auto K = pred.logits_a.value().dim(1);
    for (std::size_t b = 0; b < B; ++b) {
      if (gold.source[b] < 1 || static_cast<std::size_t>(gold.source[b]) > K) {
        throw std::out_of_range("gold source " + std::to_string(gold.source[b]) + " out of range");
      }
      idx[b] = static_cast<std::size_t>(gold.source[b] - 1);
    }
    out.source_ce =
        ad::scale(ad::sum(ad::pick(ad::log_softmax(pred.logits_a, 1), std::span<const std::size_t>(idx))), -inv_b);
    out.entropy_a = entropy_from_logits(pred.logits_a);
  } else {
    // The encoder did not run, so there is no source prediction to supervise.
    out.source_ce = tape.constant(Tensor<T>::scalar(T{0}));
    out.entropy_a = entropy_of_constant(tape, pred.d_a.value());
  }
  out.entropy_op = pred.logits_op.valid() ? entropy_from_logits(pred.logits_op)
                                          : entropy_of_constant(tape, pred.d_op.value());

  auto total = ad::scale(out.source_ce, static_cast<T>(cfg.w_source));
  total = ad::add(total, ad::scale(out.xyz, static_cast<T>(cfg.w_xyz)));
  total = ad::add(total, ad::scale(out.theta, static_cast<T>(cfg.w_theta)));
  total = ad::add(total, ad::scale(out.entropy_a, static_cast<T>(cfg.lambda_a)));
  total = ad::add(total, ad::scale(out.entropy_op, static_cast<T>(cfg.lambda_op)));
  out.op_balance = balance_deficit(pred.d_op);
  out.total = ad::add(total, ad::scale(out.op_balance, static_cast<T>(cfg.lambda_balance)));
  return out;
}

template <typename T>
void Adam<T>::step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: one gradient per parameter required");
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter set changed between steps");
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = grads[i];
    if (g.shape() != p.shape() || m_[i].shape() != p.shape()) {
      throw std::invalid_argument("adam: gradient " + shape_string(g.shape()) + " for parameter " +
                                  shape_string(p.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      m_[i][j] = b1 * m_[i][j] + (T{1} - b1) * g[j];
      v_[i][j] = b2 * v_[i][j] + (T{1} - b2) * g[j] * g[j];
      const double mhat = static_cast<double>(m_[i][j]) / c1;
      const double vhat = static_cast<double>(v_[i][j]) / c2;
      p[j] -= static_cast<T>(config_.lr * mhat / (std::sqrt(vhat) + config_.epsilon));
    }
  }
}

double metric_xyz(const BlockPose& p, const BlockPose& g) {
  return std::sqrt((p.x - g.x) * (p.x - g.x) + (p.y - g.y) * (p.y - g.y) + (p.z - g.z) * (p.z - g.z));
}

double metric_theta(double p, double g) { return std::atan2(std::sin(p - g), std::cos(p - g)); }

std::string_view eval_mode_name(EvalMode mode) {
  return mode == EvalMode::GoldSource ? "gold-source" : "end-to-end";
}

EvalMode eval_mode_from_name(std::string_view name) {
  if (name == "gold-source") return EvalMode::GoldSource;
  if (name == "end-to-end") return EvalMode::EndToEnd;
  throw std::invalid_argument("unknown evaluation mode '" + std::string(name) + "'");
}

bool rotation_bearing(const InstructionExample& ex) {
  const int mover = ex.meta.mover != 0 ? ex.meta.mover : ex.source;
  auto it = ex.world.poses.find(mover);
  if (it == ex.world.poses.end()) return false;
  return std::abs(metric_theta(ex.target.theta, it->second.theta)) > 1e-9;
}

namespace {

template <typename T>
std::vector<Sample> prepare_all(const Model<T>& model, const std::vector<InstructionExample>& data) {
  std::vector<Sample> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(model.prepare(ex.tokens, ex.world));
  return out;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<InstructionExample>& data, EvalMode mode,
                    std::size_t batch_size) {
  if (data.empty()) throw std::invalid_argument("cannot evaluate an empty dataset");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  const auto samples = prepare_all(model, data);
  EvalReport r;
  r.mode = mode;
  r.count = data.size();
  r.theta_histogram.edges = {0.0, kPi / 32, kPi / 16, kPi / 8, kPi / 4, kPi / 2, kPi + 1e-12};
  r.theta_histogram.counts.assign(r.theta_histogram.edges.size() - 1, 0);
  std::size_t correct = 0, in_bounds = 0;
  double theta_sum = 0.0, theta_rot_sum = 0.0;
  const std::size_t K = static_cast<std::size_t>(model.config().num_blocks);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    ForwardOptions opts;
    if (mode == EvalMode::GoldSource)
      for (std::size_t i = start; i < end; ++i) opts.forced_source.push_back(data[i].source);
    ad::Tape<T> tape;
    auto res = model.forward(tape, std::span<const Sample>(samples).subspan(start, end - start), opts, false);
    const auto& pose = res.pose.value();
    const auto& logits = res.logits_a.value();
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t b = i - start;
      std::vector<double> row(K);
      for (std::size_t k = 0; k < K; ++k) row[k] = static_cast<double>(logits[b * K + k]);
      correct += static_cast<int>(argmax(row)) + 1 == data[i].source;
      BlockPose p{static_cast<double>(pose[b * 4 + 0]), static_cast<double>(pose[b * 4 + 1]),
                  static_cast<double>(pose[b * 4 + 2]), normalize_angle(static_cast<double>(pose[b * 4 + 3]))};
      r.predictions.push_back(p);
      r.xyz_errors.push_back(metric_xyz(p, data[i].target));
      in_bounds += data[i].world.in_bounds(p);
      const double dtheta = std::abs(metric_theta(p.theta, data[i].target.theta));
      theta_sum += dtheta;
      if (rotation_bearing(data[i])) {
        theta_rot_sum += dtheta;
        ++r.rotation_count;
        for (std::size_t h = 0; h + 1 < r.theta_histogram.edges.size(); ++h) {
          if (dtheta >= r.theta_histogram.edges[h] && dtheta < r.theta_histogram.edges[h + 1]) {
            ++r.theta_histogram.counts[h];
            break;
          }
        }
      }
    }
  }
  const double n = static_cast<double>(data.size());
  r.source_accuracy = static_cast<double>(correct) / n;
  r.mean_xyz = std::accumulate(r.xyz_errors.begin(), r.xyz_errors.end(), 0.0) / n;
  auto sorted = r.xyz_errors;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_xyz = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  r.mean_theta = theta_sum / n;
  r.mean_theta_rotation = r.rotation_count ? theta_rot_sum / static_cast<double>(r.rotation_count) : 0.0;
  r.in_bounds_fraction = static_cast<double>(in_bounds) / n;
  return r;
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["source_ce"] = r.source_ce;
  j["xyz"] = r.xyz;
  j["theta"] = r.theta;
  j["entropy_a"] = r.entropy_a;
  j["entropy_op"] = r.entropy_op;
  j["op_balance"] = r.op_balance;
  if (!r.eval_split.empty()) {
    j["eval_split"] = r.eval_split;
    j["source_accuracy"] = r.source_accuracy;
    j["mean_xyz"] = r.mean_xyz;
    j["median_xyz"] = r.median_xyz;
    j["mean_theta"] = r.mean_theta;
  }
  return j.dump();
}

Vocabulary training_vocabulary(const std::vector<InstructionExample>& examples) {
  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(examples.size());
  for (const auto& ex : examples) corpus.push_back(ex.tokens);
  return Vocabulary::build(corpus);
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = eval_mode_name(r.mode);
  j["count"] = r.count;
  j["source_accuracy"] = r.source_accuracy;
  j["mean_xyz"] = r.mean_xyz;
  j["median_xyz"] = r.median_xyz;
  j["mean_theta"] = r.mean_theta;
  j["mean_theta_rotation"] = r.mean_theta_rotation;
  j["rotation_count"] = r.rotation_count;
  j["in_bounds_fraction"] = r.in_bounds_fraction;
  j["theta_histogram"] = {{"edges", r.theta_histogram.edges}, {"counts", r.theta_histogram.counts}};
  return j.dump();
}

template <typename T>
TrainResult train(Model<T>& model, const std::vector<InstructionExample>& train,
                  const std::vector<InstructionExample>& val, const TrainConfig& config,
                  const TrainOutputs& outputs) {
  if (train.empty()) throw std::invalid_argument("training set is empty");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  config.loss.validate();
  if (!outputs.checkpoint_dir.empty()) std::filesystem::create_directories(outputs.checkpoint_dir);

  const auto samples = prepare_all(model, train);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Adam<T> adam(config.adam);
  std::vector<Tensor<T>*> targets;
  for (auto& p : model.parameters()) targets.push_back(&p.value);

  const std::size_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  std::size_t planned = config.epochs * per_epoch;
  if (config.max_steps) planned = std::min(planned, config.max_steps);

  TrainResult result;
  result.best_val_xyz = std::numeric_limits<double>::infinity();
  const auto& eval_set = val.empty() ? train : val;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    // Fisher-Yates driven by unit_uniform so the order is library independent.
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = std::min(i - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i)));
      std::swap(order[i - 1], order[j]);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Sample> batch;
      Gold gold;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(samples[order[i]]);
        gold.source.push_back(train[order[i]].source);
        gold.target.push_back(train[order[i]].target);
      }
      ad::Tape<T> tape;
      std::vector<ad::Var<T>> vars;
      auto pred = model.forward(tape, batch, {}, true, &vars);
      auto loss = compute_loss(tape, pred, gold, config.loss);
      const double total = static_cast<double>(loss.total.value().item());
      if (!std::isfinite(total)) {
        throw TrainingDiverged("non-finite loss at step " + std::to_string(result.steps + 1) +
                               "; checkpoints from the last completed epoch are kept");
      }
      tape.backward(loss.total);
      std::vector<Tensor<T>> grads;
      grads.reserve(vars.size());
      for (const auto& v : vars) grads.push_back(tape.grad(v));
      if (config.cosine_decay) {
        const double progress = static_cast<double>(result.steps) / static_cast<double>(planned);
        adam.set_lr(0.5 * config.adam.lr * (1.0 + std::cos(std::numbers::pi * progress)));
      }
      adam.step(targets, grads);
      ++result.steps;
      ++batches;
      rec.loss += total;
      rec.source_ce += static_cast<double>(loss.source_ce.value().item());
      rec.xyz += static_cast<double>(loss.xyz.value().item());
      rec.theta += static_cast<double>(loss.theta.value().item());
      rec.entropy_a += static_cast<double>(loss.entropy_a.value().item());
      rec.entropy_op += static_cast<double>(loss.entropy_op.value().item());
      rec.op_balance += static_cast<double>(loss.op_balance.value().item());
      if (config.max_steps && result.steps >= config.max_steps) {
        stop = true;
        break;
      }
    }
    const double nb = static_cast<double>(batches);
    rec.loss /= nb;
    rec.source_ce /= nb;
    rec.xyz /= nb;
    rec.theta /= nb;
    rec.entropy_a /= nb;
    rec.entropy_op /= nb;
    rec.op_balance /= nb;
    rec.step = result.steps;
    const bool last = stop || epoch == config.epochs;
    if ((config.eval_every && epoch % config.eval_every == 0) || last) {
      const auto report = evaluate(model, eval_set, EvalMode::EndToEnd);
      rec.eval_split = val.empty() ? "train" : "val";
      rec.source_accuracy = report.source_accuracy;
      rec.mean_xyz = report.mean_xyz;
      rec.median_xyz = report.median_xyz;
      rec.mean_theta = report.mean_theta;
      if (!outputs.checkpoint_dir.empty()) {
        save_checkpoint(model, outputs.checkpoint_dir / "last.ckpt");
        if (report.mean_xyz < result.best_val_xyz) save_checkpoint(model, outputs.checkpoint_dir / "best.ckpt");
      }
      result.best_val_xyz = std::min(result.best_val_xyz, report.mean_xyz);
    }
    if (outputs.metrics_log) *outputs.metrics_log << epoch_record_json(rec) << '\n' << std::flush;
    if (outputs.on_epoch) outputs.on_epoch(rec);
    result.history.push_back(std::move(rec));
  }
  return result;
}

template class Adam<float>;
template class Adam<double>;
template LossTerms<float> compute_loss(ad::Tape<float>&, const ForwardResult<float>&, const Gold&, const LossConfig&);
template LossTerms<double> compute_loss(ad::Tape<double>&, const ForwardResult<double>&, const Gold&,
                                        const LossConfig&);
template EvalReport evaluate(Model<float>&, const std::vector<InstructionExample>&, EvalMode, std::size_t);
template EvalReport evaluate(Model<double>&, const std::vector<InstructionExample>&, EvalMode, std::size_t);
template TrainResult train(Model<float>&, const std::vector<InstructionExample>&,
                           const std::vector<InstructionExample>&, const TrainConfig&, const TrainOutputs&);
template TrainResult train(Model<double>&, const std::vector<InstructionExample>&,
                           const std::vector<InstructionExample>&, const TrainConfig&, const TrainOutputs&);

}  // namespace spatialops

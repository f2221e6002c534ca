#include "spatialops/repl.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "spatialops/operation_bank.hpp"
#include "spatialops/synthetic.hpp"

namespace spatialops {

void print_repl_help(std::ostream& out) {
  out << "commands:\n"
         "  scene N          select scene N\n"
         "  inject op K      force the operation distribution one-hot on K\n"
         "  inject block B   force the block distribution one-hot on block B\n"
         "  clear            remove injections\n"
         "  help             show this text\n"
         "  quit             leave\n"
         "anything else is read as an instruction for the current scene\n";
}

template <typename T>
PredictRepl<T>::PredictRepl(Model<T>& model, std::vector<WorldGrid> scenes) : model_(model), scenes_(std::move(scenes)) {
  if (scenes_.empty()) throw std::invalid_argument("repl needs at least one scene");
  for (const auto& s : scenes_) {
    if (s.dims != model_.config().world) throw std::invalid_argument("scene size does not match the model");
  }
}

namespace {

std::vector<std::string> words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool parse_index(const std::string& text, long& value) {
  std::size_t used = 0;
  try {
    value = std::stol(text, &used);
  } catch (const std::logic_error&) {
    return false;
  }
  return used == text.size();
}

template <typename T>
std::vector<std::size_t> top_k(std::span<const T> p, std::size_t k) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

}  // namespace

template <typename T>
bool PredictRepl<T>::handle(const std::string& line, std::ostream& out) {
  const auto w = words(line);
  if (w.empty()) {
    out << "usage: type an instruction or 'help'\n";
    return true;
  }
  if (w[0] == "quit" || w[0] == "exit") return false;
  if (w[0] == "help") {
    print_repl_help(out);
    return true;
  }
  if (w[0] == "clear" && w.size() == 1) {
    op_.reset();
    block_.reset();
    out << "injections cleared\n";
    return true;
  }
  if (w[0] == "scene") {
    long n = 0;
    if (w.size() != 2 || !parse_index(w[1], n) || n < 0 || static_cast<std::size_t>(n) >= scenes_.size()) {
      out << "scene expects an index in [0, " << scenes_.size() << ")\n";
      return true;
    }
    scene_ = static_cast<std::size_t>(n);
    out << "scene " << scene_ << ": " << scenes_[scene_].poses.size() << " blocks\n";
    return true;
  }
  if (w[0] == "inject") {
    long n = 0;
    if (w.size() == 3 && w[1] == "op" && parse_index(w[2], n) && n >= 0 &&
        static_cast<std::size_t>(n) < model_.config().num_ops) {
      op_ = static_cast<std::size_t>(n);
      out << "operation " << n << " injected\n";
    } else if (w.size() == 3 && w[1] == "block" && parse_index(w[2], n) && n >= 1 && n <= model_.config().num_blocks) {
      block_ = static_cast<int>(n);
      out << "block " << n << " injected\n";
    } else {
      out << "inject expects 'op K' with K < " << model_.config().num_ops << " or 'block B' with 1 <= B <= "
          << model_.config().num_blocks << "\n";
      print_repl_help(out);
    }
    return true;
  }
  predict(line, out);
  return true;
}

template <typename T>
void PredictRepl<T>::predict(const std::string& instruction, std::ostream& out) {
  const auto tokens = tokenize(instruction);
  if (tokens.empty()) {
    out << "usage: type an instruction or 'help'\n";
    return;
  }
  const auto& world = scenes_[scene_];
  const auto& cfg = model_.config();
  std::vector<Sample> batch{model_.prepare(tokens, world)};
  ForwardOptions options;
  if (block_) options.forced_source = {*block_};
  if (op_) options.forced_op = inject_one_hot(*op_, cfg.num_ops);
  ad::Tape<T> tape;
  const auto pred = model_.forward(tape, batch, options, false);

  out << std::fixed << std::setprecision(3);
  const auto d_a = pred.d_a.value().data();
  out << "blocks" << (block_ ? " (injected)" : "") << ":";
  for (auto i : top_k(d_a, 3)) {
    out << "  " << i + 1 << ' ' << block_name(static_cast<int>(i) + 1) << ' ' << static_cast<double>(d_a[i]);
  }
  out << "\n";
  const auto d_op = pred.d_op.value().data();
  out << "operations" << (op_ ? " (injected)" : "") << ":";
  for (auto i : top_k(d_op, 3)) out << "  op " << i << ' ' << static_cast<double>(d_op[i]);
  out << "\n";
  const auto& pose = pred.pose.value();
  const BlockPose p{static_cast<double>(pose[0]), static_cast<double>(pose[1]), static_cast<double>(pose[2]),
                    normalize_angle(static_cast<double>(pose[3]))};
  out << "pose: x " << p.x << "  y " << p.y << "  z " << p.z << "  theta " << p.theta << "\n";
  out << std::defaultfloat;

  // Top-down view, north up: digits are the column's peak attention (0-9),
  // '.' is empty and X marks the predicted target.
  const auto& dims = cfg.world;
  const auto& att = pred.attention.value();
  const long tx = static_cast<long>(std::floor(p.x)), ty = static_cast<long>(std::floor(p.y));
  for (std::size_t r = dims.height; r-- > 0;) {
    std::string row;
    for (std::size_t k = 0; k < dims.width; ++k) {
      if (static_cast<long>(k) == tx && static_cast<long>(r) == ty) {
        row += 'X';
        continue;
      }
      bool block = false;
      double peak = 0.0;
      for (std::size_t i = 0; i < dims.depth; ++i) {
        const std::size_t v = (i * dims.height + r) * dims.width + k;
        if (world.ids[v] != 0) {
          block = true;
          peak = std::max(peak, static_cast<double>(att[v]));
        }
      }
      row += block ? static_cast<char>('0' + std::clamp(static_cast<int>(peak), 0, 9)) : '.';
    }
    out << row << "\n";
  }
}

template <typename T>
void PredictRepl<T>::run(std::istream& in, std::ostream& out, bool prompt) {
  std::string line;
  while (true) {
    if (prompt) out << "> " << std::flush;
    if (!std::getline(in, line)) break;
    if (!handle(line, out)) break;
  }
}

template class PredictRepl<float>;
template class PredictRepl<double>;

}  // namespace spatialops

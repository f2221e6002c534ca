#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spatialops/model.hpp"

// Line-oriented prediction session. Commands:
//   scene N          select scene N
//   inject op K      force d_op one-hot on operation K
//   inject block B   force d_a one-hot on block B
//   clear            drop both injections
//   help, quit
// Any other non-empty line is an instruction to run on the current scene.
namespace spatialops {

template <typename T>
class PredictRepl {
 public:
  PredictRepl(Model<T>& model, std::vector<WorldGrid> scenes);

  // Returns false once the session should end.
  bool handle(const std::string& line, std::ostream& out);
  void run(std::istream& in, std::ostream& out, bool prompt);

  // Prediction report for an instruction on the current scene.
  void predict(const std::string& instruction, std::ostream& out);

  std::size_t scene() const { return scene_; }
  const std::optional<std::size_t>& injected_op() const { return op_; }
  const std::optional<int>& injected_block() const { return block_; }

 private:
  Model<T>& model_;
  std::vector<WorldGrid> scenes_;
  std::size_t scene_ = 0;
  std::optional<std::size_t> op_;
  std::optional<int> block_;
};

void print_repl_help(std::ostream& out);

extern template class PredictRepl<float>;
extern template class PredictRepl<double>;

}  // namespace spatialops

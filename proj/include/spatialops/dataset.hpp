#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatialops/world.hpp"

namespace spatialops {

// Generator bookkeeping. Never fed to the model.
struct ExampleMeta {
  std::string template_id;
  std::string relation;
  int mover = 0;  // block that is moved; 0 when unknown
  std::string split;
  int scene = -1;

  bool operator==(const ExampleMeta&) const = default;
};

// `source` is the block the operation is anchored on: the reference for
// spatial relations and the moved block itself for in-place rotation.
struct InstructionExample {
  std::vector<std::string> tokens;
  WorldGrid world;
  int source = 0;
  BlockPose target;
  ExampleMeta meta;

  void validate() const;
};

// One JSON object per line. Doubles are written with round-trip precision.
nlohmann::json example_to_json(const InstructionExample& ex);
// `line` is only used in diagnostics.
InstructionExample example_from_json(const nlohmann::json& record, std::size_t line);

void write_dataset(const std::vector<InstructionExample>& examples, const std::filesystem::path& path);
// Throws DatasetError naming the line and field of the first malformed record.
std::vector<InstructionExample> read_dataset(const std::filesystem::path& path);

// Examples whose meta.split equals `split`.
std::vector<InstructionExample> select_split(const std::vector<InstructionExample>& examples,
                                             const std::string& split);

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::size_t line, const std::string& field, const std::string& what);
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

}  // namespace spatialops

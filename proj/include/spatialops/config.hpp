#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "spatialops/model.hpp"
#include "spatialops/synthetic.hpp"
#include "spatialops/training.hpp"

namespace spatialops {

// Flat key = value settings; '#' starts a comment. Every key has a default and
// unknown keys are errors.
struct Config {
  ModelConfig model;
  std::uint64_t model_seed = 7;
  TrainConfig train;
  GeneratorConfig data;
  CorpusOptions corpus;

  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  // Throws std::invalid_argument naming the key on bad keys or values.
  void set(std::string_view key, std::string_view value);
  std::string to_text() const;
  // Only the model.* and world.* keys.
  std::string model_text() const;
};

}  // namespace spatialops

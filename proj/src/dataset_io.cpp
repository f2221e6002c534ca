#include "spatialops/dataset.hpp"

#include <fstream>
#include <stdexcept>

namespace spatialops {

using nlohmann::json;

DatasetError::DatasetError(std::size_t line, const std::string& field, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ", field '" + field + "': " + what),
      line_(line),
      field_(field) {}

void InstructionExample::validate() const {
  world.validate();
  if (tokens.empty()) throw std::invalid_argument("example has no tokens");
  if (!world.poses.contains(source)) {
    throw std::invalid_argument("source block " + std::to_string(source) + " is not in the world");
  }
  if (!world.in_bounds(target)) throw std::invalid_argument("target lies outside the world");
}

json example_to_json(const InstructionExample& ex) {
  json poses = json::array();
  for (const auto& [id, p] : ex.world.poses) {
    poses.push_back({{"id", id}, {"x", p.x}, {"y", p.y}, {"z", p.z}, {"theta", p.theta}});
  }
  return json{
      {"tokens", ex.tokens},
      {"world",
       {{"dims", {ex.world.dims.depth, ex.world.dims.height, ex.world.dims.width}},
        {"num_block_types", ex.world.num_block_types},
        {"ids", ex.world.ids},
        {"poses", poses}}},
      {"source", ex.source},
      {"target", {ex.target.x, ex.target.y, ex.target.z, ex.target.theta}},
      {"meta",
       {{"template_id", ex.meta.template_id},
        {"relation", ex.meta.relation},
        {"mover", ex.meta.mover},
        {"split", ex.meta.split},
        {"scene", ex.meta.scene}}},
  };
}

namespace {

const json& field(const json& obj, const char* key, const std::string& path, std::size_t line) {
  if (!obj.is_object() || !obj.contains(key)) throw DatasetError(line, path + key, "missing");
  return obj.at(key);
}

template <typename V>
V typed(const json& value, const std::string& path, std::size_t line) {
  try {
    return value.get<V>();
  } catch (const json::exception& e) {
    throw DatasetError(line, path, std::string("wrong type (") + e.what() + ")");
  }
}

}  // namespace

InstructionExample example_from_json(const json& record, std::size_t line) {
  InstructionExample ex;
  ex.tokens = typed<std::vector<std::string>>(field(record, "tokens", "", line), "tokens", line);

  const auto& world = field(record, "world", "", line);
  const auto dims = typed<std::vector<std::size_t>>(field(world, "dims", "world.", line), "world.dims", line);
  if (dims.size() != 3) throw DatasetError(line, "world.dims", "expected [depth, height, width]");
  ex.world.dims = WorldDims{dims[0], dims[1], dims[2]};
  ex.world.num_block_types =
      typed<int>(field(world, "num_block_types", "world.", line), "world.num_block_types", line);
  ex.world.ids = typed<std::vector<int>>(field(world, "ids", "world.", line), "world.ids", line);
  const auto& poses = field(world, "poses", "world.", line);
  if (!poses.is_array()) throw DatasetError(line, "world.poses", "expected an array");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const std::string path = "world.poses[" + std::to_string(i) + "].";
    const auto& p = poses[i];
    const int id = typed<int>(field(p, "id", path, line), path + "id", line);
    BlockPose pose{typed<double>(field(p, "x", path, line), path + "x", line),
                   typed<double>(field(p, "y", path, line), path + "y", line),
                   typed<double>(field(p, "z", path, line), path + "z", line),
                   typed<double>(field(p, "theta", path, line), path + "theta", line)};
    if (!ex.world.poses.emplace(id, pose).second) throw DatasetError(line, path + "id", "duplicate block");
  }

  ex.source = typed<int>(field(record, "source", "", line), "source", line);
  const auto target = typed<std::vector<double>>(field(record, "target", "", line), "target", line);
  if (target.size() != 4) throw DatasetError(line, "target", "expected [x, y, z, theta]");
  ex.target = BlockPose{target[0], target[1], target[2], target[3]};

  // Externally supplied records may omit the generator metadata.
  if (record.contains("meta")) {
    const auto& meta = record.at("meta");
    if (!meta.is_object()) throw DatasetError(line, "meta", "expected an object");
    auto opt = [&](const char* key, auto fallback) {
      using V = decltype(fallback);
      return meta.contains(key) ? typed<V>(meta.at(key), std::string("meta.") + key, line) : fallback;
    };
    ex.meta.template_id = opt("template_id", std::string{});
    ex.meta.relation = opt("relation", std::string{});
    ex.meta.mover = opt("mover", 0);
    ex.meta.split = opt("split", std::string{});
    ex.meta.scene = opt("scene", -1);
  }

  try {
    ex.validate();
  } catch (const std::invalid_argument& e) {
    throw DatasetError(line, "world", e.what());
  }
  return ex;
}

void write_dataset(const std::vector<InstructionExample>& examples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<InstructionExample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<InstructionExample> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DatasetError(line, "<record>", std::string("malformed JSON: ") + e.what());
    }
    out.push_back(example_from_json(record, line));
  }
  return out;
}

std::vector<InstructionExample> select_split(const std::vector<InstructionExample>& examples,
                                             const std::string& split) {
  std::vector<InstructionExample> out;
  for (const auto& ex : examples)
    if (ex.meta.split == split) out.push_back(ex);
  return out;
}

}  // namespace spatialops

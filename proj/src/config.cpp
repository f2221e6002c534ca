#include "spatialops/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace spatialops {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename V>
V parse_number(std::string_view key, std::string_view text) {
  V value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw std::invalid_argument("config key '" + std::string(key) + "': expected true or false");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Entry {
  std::string key;
  std::function<void(Config&, std::string_view)> set;
  std::function<std::string(const Config&)> get;
};

template <typename V>
Entry size_entry(std::string key, V Config::*section, std::size_t V::*field) {
  return {key,
          [key, section, field](Config& c, std::string_view v) {
            c.*section.*field = parse_number<std::size_t>(key, v);
          },
          [section, field](const Config& c) { return std::to_string(c.*section.*field); }};
}

template <typename V>
Entry double_entry(std::string key, V& (*select)(Config&), const V& (*select_const)(const Config&), double V::*field) {
  return {key, [key, select, field](Config& c, std::string_view v) { select(c).*field = parse_number<double>(key, v); },
          [select_const, field](const Config& c) { return format_double(select_const(c).*field); }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    auto world_size = [](std::string key, std::size_t WorldDims::*field) {
      return Entry{key,
                   [key, field](Config& c, std::string_view v) {
                     const auto n = parse_number<std::size_t>(key, v);
                     if (n == 0) throw std::invalid_argument("config key '" + key + "' must be positive");
                     c.model.world.*field = n;
                     c.data.dims.*field = n;
                   },
                   [field](const Config& c) { return std::to_string(c.model.world.*field); }};
    };
    t.push_back(world_size("world.depth", &WorldDims::depth));
    t.push_back(world_size("world.height", &WorldDims::height));
    t.push_back(world_size("world.width", &WorldDims::width));
    t.push_back({"world.num_blocks",
                 [](Config& c, std::string_view v) {
                   const int n = parse_number<int>("world.num_blocks", v);
                   if (n < 2 || n > kMaxBlockTypes) {
                     throw std::invalid_argument("config key 'world.num_blocks' must be in [2, 20]");
                   }
                   c.model.num_blocks = n;
                   c.data.num_blocks = n;
                 },
                 [](const Config& c) { return std::to_string(c.model.num_blocks); }});

    t.push_back(size_entry("model.num_ops", &Config::model, &ModelConfig::num_ops));
    t.push_back(size_entry("model.channels", &Config::model, &ModelConfig::channels));
    t.push_back(size_entry("model.embed", &Config::model, &ModelConfig::embed));
    t.push_back(size_entry("model.hidden", &Config::model, &ModelConfig::hidden));
    t.push_back({"model.mode",
                 [](Config& c, std::string_view v) {
                   if (v == "3d") c.model.mode = ConvMode::ThreeD;
                   else if (v == "2d") c.model.mode = ConvMode::TwoD;
                   else throw std::invalid_argument("config key 'model.mode' must be 3d or 2d");
                 },
                 [](const Config& c) { return std::string(c.model.mode == ConvMode::ThreeD ? "3d" : "2d"); }});
    t.push_back({"model.seed", [](Config& c, std::string_view v) { c.model_seed = parse_number<std::uint64_t>("model.seed", v); },
                 [](const Config& c) { return std::to_string(c.model_seed); }});

    t.push_back(size_entry("train.batch_size", &Config::train, &TrainConfig::batch_size));
    t.push_back(size_entry("train.epochs", &Config::train, &TrainConfig::epochs));
    t.push_back(size_entry("train.max_steps", &Config::train, &TrainConfig::max_steps));
    t.push_back(size_entry("train.eval_every", &Config::train, &TrainConfig::eval_every));
    t.push_back({"train.seed", [](Config& c, std::string_view v) { c.train.seed = parse_number<std::uint64_t>("train.seed", v); },
                 [](const Config& c) { return std::to_string(c.train.seed); }});
    t.push_back({"train.precision",
                 [](Config& c, std::string_view v) {
                   const int p = parse_number<int>("train.precision", v);
                   if (p != 32 && p != 64) throw std::invalid_argument("config key 'train.precision' must be 32 or 64");
                   c.train.precision = p;
                 },
                 [](const Config& c) { return std::to_string(c.train.precision); }});
    auto adam = +[](Config& c) -> AdamConfig& { return c.train.adam; };
    auto adam_c = +[](const Config& c) -> const AdamConfig& { return c.train.adam; };
    t.push_back(double_entry("train.lr", adam, adam_c, &AdamConfig::lr));
    t.push_back(double_entry("train.beta1", adam, adam_c, &AdamConfig::beta1));
    t.push_back(double_entry("train.beta2", adam, adam_c, &AdamConfig::beta2));
    t.push_back(double_entry("train.epsilon", adam, adam_c, &AdamConfig::epsilon));
    t.push_back({"train.lr_schedule",
                 [](Config& c, std::string_view v) {
                   if (v == "constant") c.train.cosine_decay = false;
                   else if (v == "cosine") c.train.cosine_decay = true;
                   else throw std::invalid_argument("config key 'train.lr_schedule' must be constant or cosine");
                 },
                 [](const Config& c) { return std::string(c.train.cosine_decay ? "cosine" : "constant"); }});

    auto loss = +[](Config& c) -> LossConfig& { return c.train.loss; };
    auto loss_c = +[](const Config& c) -> const LossConfig& { return c.train.loss; };
    t.push_back(double_entry("loss.w_source", loss, loss_c, &LossConfig::w_source));
    t.push_back(double_entry("loss.w_xyz", loss, loss_c, &LossConfig::w_xyz));
    t.push_back(double_entry("loss.w_theta", loss, loss_c, &LossConfig::w_theta));
    t.push_back(double_entry("loss.lambda_a", loss, loss_c, &LossConfig::lambda_a));
    t.push_back(double_entry("loss.lambda_op", loss, loss_c, &LossConfig::lambda_op));
    t.push_back(double_entry("loss.lambda_balance", loss, loss_c, &LossConfig::lambda_balance));

    t.push_back({"data.num_scenes", [](Config& c, std::string_view v) { c.corpus.num_scenes = parse_number<int>("data.num_scenes", v); },
                 [](const Config& c) { return std::to_string(c.corpus.num_scenes); }});
    t.push_back({"data.train_examples",
                 [](Config& c, std::string_view v) { c.corpus.train_examples = parse_number<int>("data.train_examples", v); },
                 [](const Config& c) { return std::to_string(c.corpus.train_examples); }});
    t.push_back({"data.heldout_per_scene",
                 [](Config& c, std::string_view v) {
                   c.corpus.heldout_examples_per_scene = parse_number<int>("data.heldout_per_scene", v);
                 },
                 [](const Config& c) { return std::to_string(c.corpus.heldout_examples_per_scene); }});
    auto data = +[](Config& c) -> GeneratorConfig& { return c.data; };
    auto data_c = +[](const Config& c) -> const GeneratorConfig& { return c.data; };
    t.push_back(double_entry("data.lattice_spacing", data, data_c, &GeneratorConfig::lattice_spacing));
    t.push_back(double_entry("data.jitter", data, data_c, &GeneratorConfig::jitter));
    t.push_back(double_entry("data.stack_probability", data, data_c, &GeneratorConfig::stack_probability));
    t.push_back(double_entry("data.offset", data, data_c, &GeneratorConfig::offset));
    t.push_back(double_entry("data.offset_jitter", data, data_c, &GeneratorConfig::offset_jitter));
    t.push_back({"data.random_yaw", [](Config& c, std::string_view v) { c.data.random_yaw = parse_bool("data.random_yaw", v); },
                 [](const Config& c) { return std::string(c.data.random_yaw ? "true" : "false"); }});
    t.push_back({"data.relations",
                 [](Config& c, std::string_view v) {
                   std::vector<Relation> rels;
                   std::size_t start = 0;
                   while (start <= v.size()) {
                     auto comma = v.find(',', start);
                     if (comma == std::string_view::npos) comma = v.size();
                     const auto name = trim(v.substr(start, comma - start));
                     if (!name.empty()) rels.push_back(relation_from_name(name));
                     start = comma + 1;
                   }
                   if (rels.empty()) throw std::invalid_argument("config key 'data.relations' lists no relation");
                   c.data.relations = std::move(rels);
                 },
                 [](const Config& c) {
                   std::string out;
                   for (auto r : c.data.relations) out += (out.empty() ? "" : ",") + std::string(relation_name(r));
                   return out;
                 }});
    return t;
  }();
  return table;
}

}  // namespace

void Config::set(std::string_view key, std::string_view value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(*this, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

Config Config::parse(std::string_view text) {
  Config c;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      c.set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(*this) + "\n";
  return out;
}

std::string Config::model_text() const {
  std::string out;
  for (const auto& e : entries())
    if (e.key.starts_with("model.") || e.key.starts_with("world.")) out += e.key + " = " + e.get(*this) + "\n";
  return out;
}

}  // namespace spatialops

#include "spatialops/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "spatialops/config.hpp"

namespace spatialops {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'O', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  template <typename U>
  void scalar(U v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void str(const std::string& s) {
    scalar<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename T>
  void values(const Tensor<T>& t) {
    for (T v : t.data()) scalar(v);
  }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw std::runtime_error("failed writing checkpoint " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  template <typename U>
  U scalar() {
    U v;
    in_.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!in_) throw std::runtime_error("checkpoint " + path_.string() + " is truncated");
    return to_little(v);
  }
  std::string str() {
    const auto n = scalar<std::uint64_t>();
    if (n > (1u << 26)) throw std::runtime_error("checkpoint " + path_.string() + " has an implausible string");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("checkpoint " + path_.string() + " is truncated");
    return s;
  }
  // Reads `n` values stored at `width` bytes and converts them to T.
  template <typename T>
  std::vector<T> values(std::size_t n, int width) {
    std::vector<T> out(n);
    for (auto& v : out) v = width == 4 ? static_cast<T>(scalar<float>()) : static_cast<T>(scalar<double>());
    return out;
  }
  void raw(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("checkpoint " + path_.string() + " is truncated");
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

Config config_for(const ModelConfig& m) {
  Config c;
  c.model = m;
  c.data.dims = m.world;
  c.data.num_blocks = m.num_blocks;
  return c;
}

int read_header(Reader& r, const std::filesystem::path& path) {
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error(path.string() + " is not a checkpoint");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto width = r.scalar<std::uint32_t>();
  if (width != 4 && width != 8) throw std::runtime_error("checkpoint has element width " + std::to_string(width));
  return static_cast<int>(width);
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  // Write beside the target and rename so a crash never leaves half a file.
  auto tmp = path;
  tmp += ".tmp";
  {
    Writer w(tmp);
    w.raw(kMagic, sizeof kMagic);
    w.scalar<std::uint32_t>(kVersion);
    w.scalar<std::uint32_t>(sizeof(T));
    w.str(config_for(model.config()).model_text());
    w.scalar<std::uint64_t>(model.vocab().size());
    for (const auto& t : model.vocab().tokens()) w.str(t);
    w.scalar<std::uint64_t>(model.parameters().size());
    for (const auto& p : model.parameters()) {
      w.str(p.name);
      w.scalar<std::uint64_t>(p.value.rank());
      for (auto e : p.value.shape()) w.scalar<std::uint64_t>(e);
      w.values(p.value);
    }
    w.scalar<std::uint64_t>(model.norms().size());
    for (const auto& n : model.norms()) {
      w.scalar<std::uint64_t>(n.running_mean.size());
      w.values(n.running_mean);
      w.values(n.running_var);
    }
    w.finish(tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  const int width = read_header(r, path);
  const Config cfg = Config::parse(r.str());
  const auto vocab_size = r.scalar<std::uint64_t>();
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < vocab_size; ++i) tokens.push_back(r.str());
  const auto count = r.scalar<std::uint64_t>();
  std::vector<NamedTensor<T>> params;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor<T> p;
    p.name = r.str();
    const auto rank = r.scalar<std::uint64_t>();
    if (rank > 8) throw std::runtime_error("checkpoint parameter " + p.name + " has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = r.scalar<std::uint64_t>();
    p.value = Tensor<T>(shape, r.values<T>(element_count(shape), width));
    params.push_back(std::move(p));
  }
  std::vector<ad::BatchNormState<T>> norms;
  const auto norm_count = r.scalar<std::uint64_t>();
  for (std::uint64_t i = 0; i < norm_count; ++i) {
    const auto c = r.scalar<std::uint64_t>();
    ad::BatchNormState<T> n(c);
    n.running_mean = Tensor<T>({c}, r.values<T>(c, width));
    n.running_var = Tensor<T>({c}, r.values<T>(c, width));
    norms.push_back(std::move(n));
  }
  return Model<T>(cfg.model, Vocabulary::from_tokens(std::move(tokens)), std::move(params), std::move(norms));
}

int checkpoint_precision(const std::filesystem::path& path) {
  Reader r(path);
  return read_header(r, path) * 8;
}

template void save_checkpoint(const Model<float>&, const std::filesystem::path&);
template void save_checkpoint(const Model<double>&, const std::filesystem::path&);
template Model<float> load_checkpoint(const std::filesystem::path&);
template Model<double> load_checkpoint(const std::filesystem::path&);

}  // namespace spatialops

#include "spatialops/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "spatialops/operation_bank.hpp"

namespace spatialops {

std::vector<BlockPose> probe_positions(const WorldDims& dims, std::size_t grid_size) {
  if (grid_size == 0) throw std::invalid_argument("probe grid size must be positive");
  if (grid_size > dims.width || grid_size > dims.height) {
    throw std::invalid_argument("probe grid " + std::to_string(grid_size) + " exceeds the world footprint");
  }
  std::vector<BlockPose> out;
  const auto cell = [&](std::size_t i, std::size_t extent) {
    return std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(extent) / static_cast<double>(grid_size));
  };
  for (std::size_t r = 0; r < grid_size; ++r)
    for (std::size_t c = 0; c < grid_size; ++c) out.push_back({cell(c, dims.width) + 0.5, cell(r, dims.height) + 0.5, 0.5, 0.0});
  return out;
}

template <typename T>
SweepResult sweep(Model<T>& model, const std::vector<double>& d_op, std::size_t grid_size, int block) {
  const auto& cfg = model.config();
  if (d_op.size() != cfg.num_ops) {
    throw std::invalid_argument("operation distribution has " + std::to_string(d_op.size()) + " entries, model has " +
                                std::to_string(cfg.num_ops));
  }
  if (block < 1 || block > cfg.num_blocks) throw std::out_of_range("probe block " + std::to_string(block));
  const auto probes = probe_positions(cfg.world, grid_size);

  std::vector<Sample> batch;
  for (const auto& p : probes) {
    const auto world = WorldGrid::from_poses(cfg.world, cfg.num_blocks, {{block, p}});
    batch.push_back(Sample{{}, world.ids});
  }
  ForwardOptions options;
  options.forced_source.assign(batch.size(), block);
  options.forced_op = d_op;
  ad::Tape<T> tape;
  const auto pred = model.forward(tape, batch, options, false);
  const auto& pose = pred.pose.value();

  SweepResult out;
  out.grid_size = grid_size;
  out.d_op = d_op;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto& p = probes[i];
    SweepRecord r;
    r.row = i / grid_size;
    r.col = i % grid_size;
    r.x = p.x;
    r.y = p.y;
    r.z = p.z;
    r.dx = static_cast<double>(pose[i * 4 + 0]) - p.x;
    r.dy = static_cast<double>(pose[i * 4 + 1]) - p.y;
    r.dz = static_cast<double>(pose[i * 4 + 2]) - p.z;
    r.dtheta = normalize_angle(static_cast<double>(pose[i * 4 + 3]) - p.theta);
    out.records.push_back(r);
  }
  return out;
}

template <typename T>
SweepResult sweep_op(Model<T>& model, std::size_t op_index, std::size_t grid_size, int block) {
  return sweep(model, inject_one_hot(op_index, model.config().num_ops), grid_size, block);
}

Displacement mean_displacement(const SweepResult& result, bool interior_only) {
  Displacement d;
  std::size_t n = 0;
  const std::size_t last = result.grid_size - 1;
  for (const auto& r : result.records) {
    if (interior_only && result.grid_size >= 3 && (r.row == 0 || r.col == 0 || r.row == last || r.col == last)) continue;
    d.dx += r.dx;
    d.dy += r.dy;
    d.dz += r.dz;
    d.planar += std::hypot(r.dx, r.dy);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("sweep has no probes to average");
  const double inv = 1.0 / static_cast<double>(n);
  d.dx *= inv;
  d.dy *= inv;
  d.dz *= inv;
  d.planar *= inv;
  return d;
}

namespace {

constexpr const char* kCsvHeader = "row,col,x,y,z,dx,dy,dz,dtheta";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
  out << kCsvHeader << '\n' << std::fixed << std::setprecision(6);
  for (const auto& r : result.records) {
    out << r.row << ',' << r.col << ',' << r.x << ',' << r.y << ',' << r.z << ',' << r.dx << ',' << r.dy << ','
        << r.dz << ',' << r.dtheta << '\n';
  }
  out << std::defaultfloat;
}

SweepResult read_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error("sweep csv: missing header");
  SweepResult out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 9) throw std::runtime_error("sweep csv line " + std::to_string(line_no) + ": expected 9 fields");
    try {
      SweepRecord r;
      r.row = std::stoul(f[0]);
      r.col = std::stoul(f[1]);
      r.x = std::stod(f[2]);
      r.y = std::stod(f[3]);
      r.z = std::stod(f[4]);
      r.dx = std::stod(f[5]);
      r.dy = std::stod(f[6]);
      r.dz = std::stod(f[7]);
      r.dtheta = std::stod(f[8]);
      out.grid_size = std::max(out.grid_size, std::max(r.row, r.col) + 1);
      out.records.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error("sweep csv line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return out;
}

void write_sweep_svg(const std::vector<SvgLayer>& layers, const WorldDims& dims, std::ostream& out,
                     double display_scale) {
  constexpr double px = 40.0;
  constexpr double legend = 24.0;
  const double w = static_cast<double>(dims.width) * px;
  const double h = static_cast<double>(dims.height) * px;
  const double total_h = h + legend * static_cast<double>(layers.size() + 1);
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << total_h << "\" viewBox=\"0 0 "
      << w << ' ' << total_h << "\">\n";
  out << "<desc>Top-down view, north up. Arrow length = planar displacement x " << display_scale
      << ", 1 block-length = " << px << " px.</desc>\n";
  out << "<defs>\n";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out << "<marker id=\"head" << i << "\" markerWidth=\"8\" markerHeight=\"8\" refX=\"7\" refY=\"4\" "
        << "orient=\"auto\"><path d=\"M0,0 L8,4 L0,8 z\" fill=\"" << layers[i].color << "\"/></marker>\n";
  }
  out << "</defs>\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\" stroke=\"black\"/>\n";
  for (std::size_t k = 1; k < dims.width; ++k) {
    out << "<line x1=\"" << static_cast<double>(k) * px << "\" y1=\"0\" x2=\"" << static_cast<double>(k) * px
        << "\" y2=\"" << h << "\" stroke=\"#eeeeee\"/>\n";
  }
  for (std::size_t j = 1; j < dims.height; ++j) {
    out << "<line x1=\"0\" y1=\"" << static_cast<double>(j) * px << "\" x2=\"" << w << "\" y2=\""
        << static_cast<double>(j) * px << "\" stroke=\"#eeeeee\"/>\n";
  }
  const auto sx = [&](double x) { return x * px; };
  const auto sy = [&](double y) { return h - y * px; };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (!layer.result) continue;
    for (const auto& r : layer.result->records) {
      const double x2 = r.x + display_scale * r.dx, y2 = r.y + display_scale * r.dy;
      out << "<circle cx=\"" << sx(r.x) << "\" cy=\"" << sy(r.y) << "\" r=\"3\" fill=\"" << layer.color << "\"/>\n";
      out << "<line x1=\"" << sx(r.x) << "\" y1=\"" << sy(r.y) << "\" x2=\"" << sx(x2) << "\" y2=\"" << sy(y2)
          << "\" stroke=\"" << layer.color << "\" stroke-width=\"2\" marker-end=\"url(#head" << i << ")\"/>\n";
    }
    out << "<text x=\"8\" y=\"" << h + legend * static_cast<double>(i + 1) << "\" font-family=\"monospace\" "
        << "font-size=\"14\" fill=\"" << layer.color << "\">" << layer.label << "</text>\n";
  }
  out << "</svg>\n" << std::defaultfloat;
}

template <typename T>
InterpolationResult interpolate_sweep(Model<T>& model, std::size_t k1, std::size_t k2,
                                      const std::vector<double>& alphas, std::size_t grid_size) {
  if (alphas.empty()) throw std::invalid_argument("interpolation needs at least one alpha");
  InterpolationResult out;
  out.k1 = k1;
  out.k2 = k2;
  out.alphas = alphas;
  const auto n = model.config().num_ops;
  for (double a : alphas) out.fields.push_back(sweep(model, interpolate(k1, k2, a, n), grid_size));

  const auto& probes = out.fields.front().records;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    int sign = 0;
    for (std::size_t i = 0; i + 1 < out.fields.size(); ++i) {
      const auto& a = out.fields[i].records[p];
      const auto& b = out.fields[i + 1].records[p];
      const double turn = normalize_angle(std::atan2(b.dy, b.dx) - std::atan2(a.dy, a.dx));
      if (std::abs(turn) < 1e-9) continue;
      const int s = turn > 0 ? 1 : -1;
      if (sign != 0 && s != sign) {
        std::ostringstream msg;
        msg << "probe (" << probes[p].row << ", " << probes[p].col << ") reverses between alpha " << alphas[i]
            << " and " << alphas[i + 1];
        out.monotonicity_violations.push_back(msg.str());
        break;
      }
      sign = s;
    }
  }
  return out;
}

template <typename T>
ClusterTable cluster_phrases(Model<T>& model, const std::vector<InstructionExample>& data, double threshold,
                             std::size_t sample_count) {
  if (std::isnan(threshold)) throw std::invalid_argument("entropy threshold is NaN");
  ClusterTable table;
  table.threshold = threshold;
  table.total = data.size();
  std::map<std::size_t, PhraseCluster> groups;
  constexpr std::size_t kBatch = 64;
  for (std::size_t start = 0; start < data.size(); start += kBatch) {
    const std::size_t end = std::min(data.size(), start + kBatch);
    std::vector<Sample> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(model.prepare(data[i].tokens, data[i].world));
    ad::Tape<T> tape;
    const auto pred = model.forward(tape, batch, {}, false);
    const auto& d = pred.d_op.value();
    const std::size_t n = d.dim(1);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      double h = 0.0;
      std::size_t best = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double p = static_cast<double>(d[b * n + k]);
        if (p > 0.0) h -= p * std::log(p);
        if (d[b * n + k] > d[b * n + best]) best = k;
      }
      if (h > threshold) continue;
      const auto& ex = data[start + b];
      auto& g = groups[best];
      g.op = best;
      ++g.size;
      ++g.relation_counts[ex.meta.relation];
      std::string phrase;
      for (const auto& t : ex.tokens) phrase += (phrase.empty() ? "" : " ") + t;
      if (g.sample_phrases.size() < sample_count &&
          std::find(g.sample_phrases.begin(), g.sample_phrases.end(), phrase) == g.sample_phrases.end()) {
        g.sample_phrases.push_back(phrase);
      }
      ++table.selected;
    }
  }
  std::size_t majority_total = 0;
  for (auto& [op, g] : groups) {
    std::size_t best = 0;
    for (const auto& [relation, count] : g.relation_counts) {
      if (count > best) {
        best = count;
        g.majority_relation = relation;
      }
    }
    g.purity = static_cast<double>(best) / static_cast<double>(g.size);
    majority_total += best;
    table.mean_purity += g.purity;
    table.clusters.push_back(g);
  }
  if (!table.clusters.empty()) {
    table.mean_purity /= static_cast<double>(table.clusters.size());
    table.weighted_purity = static_cast<double>(majority_total) / static_cast<double>(table.selected);
  }
  return table;
}

long dominant_op(const ClusterTable& table, const std::string& relation) {
  long op = -1;
  std::size_t best = 0;
  for (const auto& g : table.clusters) {
    const auto it = g.relation_counts.find(relation);
    if (it != g.relation_counts.end() && it->second > best) {
      best = it->second;
      op = static_cast<long>(g.op);
    }
  }
  return op;
}

void print_cluster_table(const ClusterTable& table, std::ostream& out) {
  if (table.clusters.empty()) {
    out << "no examples with op entropy <= " << table.threshold << " (" << table.total << " scored)\n";
    return;
  }
  out << std::fixed << std::setprecision(3);
  for (const auto& g : table.clusters) {
    out << "op " << g.op << "  size " << g.size << "  purity " << g.purity << "  majority " << g.majority_relation
        << "\n";
    for (const auto& [relation, count] : g.relation_counts) out << "    " << relation << ": " << count << "\n";
    for (const auto& phrase : g.sample_phrases) out << "    \"" << phrase << "\"\n";
  }
  out << "selected " << table.selected << " of " << table.total << "  mean purity " << table.mean_purity
      << "  weighted purity " << table.weighted_purity << "\n"
      << std::defaultfloat;
}

#define SPATIALOPS_INSTANTIATE(T)                                                                                \
  template SweepResult sweep(Model<T>&, const std::vector<double>&, std::size_t, int);                          \
  template SweepResult sweep_op(Model<T>&, std::size_t, std::size_t, int);                                      \
  template InterpolationResult interpolate_sweep(Model<T>&, std::size_t, std::size_t, const std::vector<double>&, \
                                                 std::size_t);                                                  \
  template ClusterTable cluster_phrases(Model<T>&, const std::vector<InstructionExample>&, double, std::size_t);

SPATIALOPS_INSTANTIATE(float)
SPATIALOPS_INSTANTIATE(double)

#undef SPATIALOPS_INSTANTIATE

}  // namespace spatialops

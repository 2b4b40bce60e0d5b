#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "grain/dataset.hpp"
#include "grain/graph.hpp"
#include "grain/trainer.hpp"

namespace grain {

/// Parser failure; what() is "<file>:<line>: <message>" (line 0 = whole file).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& msg)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + msg), file_(file), line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, bool tabs_only) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    if (tabs_only) {
      const std::size_t j = line.find('\t', i);
      out.push_back(line.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i));
      if (j == std::string_view::npos) break;
      i = j + 1;
    } else {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

/// Reads all lines, stripping a trailing '\r'. Empty lines are kept so line numbers stay exact.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

template <typename T>
T parse_integer(std::string_view s, const std::string& file, std::size_t line, const char* what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError(file, line, std::string("invalid ") + what + " '" + std::string(s) + "'");
  return v;
}

inline double parse_real(std::string_view s, const std::string& file, std::size_t line) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ParseError(file, line, "invalid feature value '" + std::string(s) + "'");
  return v;
}

inline bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

}  // namespace detail

inline std::string format_real(double v) { return format_double(v); }

struct DatasetMeta {
  std::string name;
  int num_classes = 0;
  std::size_t num_features = 0;
};

inline DatasetMeta read_meta(const std::filesystem::path& path) {
  const std::string file = path.string();
  DatasetMeta m;
  bool has_c = false, has_d = false;
  const auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank(lines[i])) continue;
    const auto f = detail::split_fields(lines[i], true);
    if (f.size() != 2) throw ParseError(file, i + 1, "expected 'key<TAB>value'");
    if (f[0] == "name") {
      m.name = std::string(f[1]);
    } else if (f[0] == "num_classes") {
      m.num_classes = detail::parse_integer<int>(f[1], file, i + 1, "num_classes");
      if (m.num_classes < 1) throw ParseError(file, i + 1, "num_classes must be >= 1");
      has_c = true;
    } else if (f[0] == "num_features") {
      m.num_features = detail::parse_integer<std::size_t>(f[1], file, i + 1, "num_features");
      if (m.num_features < 1) throw ParseError(file, i + 1, "num_features must be >= 1");
      has_d = true;
    } else {
      throw ParseError(file, i + 1, "unknown meta key '" + std::string(f[0]) + "'");
    }
  }
  if (!has_c) throw ParseError(file, 0, "missing num_classes");
  if (!has_d) throw ParseError(file, 0, "missing num_features");
  return m;
}

/// Loads a dataset directory (meta.tsv, features.tsv, labels.tsv, edges.tsv,
/// optional splits.tsv). Without splits.tsv a seeded stratified split is drawn.
inline LabeledDataset load_dataset(const std::filesystem::path& dir, std::uint64_t split_seed = 0) {
  if (!std::filesystem::is_directory(dir)) throw ParseError(dir.string(), 0, "not a directory");
  const DatasetMeta meta = read_meta(dir / "meta.tsv");
  const std::size_t d = meta.num_features;

  // features.tsv defines the node universe: ids 0..n-1, each exactly once.
  const std::string ffile = (dir / "features.tsv").string();
  const auto flines = detail::read_lines(dir / "features.tsv");
  std::vector<std::pair<NodeId, std::size_t>> order;  // (id, 1-based line)
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < flines.size(); ++i) {
    if (detail::blank(flines[i])) continue;
    const auto f = detail::split_fields(flines[i], true);
    if (f.size() != d + 1)
      throw ParseError(ffile, i + 1,
                       "expected " + std::to_string(d) + " features, got " + std::to_string(f.size() - 1));
    const auto id = detail::parse_integer<NodeId>(f[0], ffile, i + 1, "node id");
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = detail::parse_real(f[j + 1], ffile, i + 1);
    order.emplace_back(id, i + 1);
    rows.push_back(std::move(row));
  }
  const std::size_t n = rows.size();
  if (n == 0) throw ParseError(ffile, 0, "no feature rows");
  LabeledDataset ds;
  ds.name = meta.name.empty() ? dir.filename().string() : meta.name;
  ds.num_classes = meta.num_classes;
  ds.features = Tensor(n, d);
  {
    std::vector<char> seen(n, 0);
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto [id, line] = order[r];
      if (id >= n)
        throw ParseError(ffile, line, "node id " + std::to_string(id) + " outside [0, " + std::to_string(n) + ")");
      if (seen[id]) throw ParseError(ffile, line, "duplicate node id " + std::to_string(id));
      seen[id] = 1;
      std::copy(rows[r].begin(), rows[r].end(), ds.features.row(id).begin());
    }
  }

  const std::string lfile = (dir / "labels.tsv").string();
  const auto llines = detail::read_lines(dir / "labels.tsv");
  ds.labels.assign(n, -1);
  for (std::size_t i = 0; i < llines.size(); ++i) {
    if (detail::blank(llines[i])) continue;
    const auto f = detail::split_fields(llines[i], true);
    if (f.size() != 2) throw ParseError(lfile, i + 1, "expected 'node<TAB>label'");
    const auto id = detail::parse_integer<NodeId>(f[0], lfile, i + 1, "node id");
    const int y = detail::parse_integer<int>(f[1], lfile, i + 1, "label");
    if (id >= n) throw ParseError(lfile, i + 1, "unknown node id " + std::to_string(id));
    if (y < 0 || y >= meta.num_classes)
      throw ParseError(lfile, i + 1,
                       "label " + std::to_string(y) + " outside [0, " + std::to_string(meta.num_classes) + ")");
    if (ds.labels[id] != -1) throw ParseError(lfile, i + 1, "duplicate label for node " + std::to_string(id));
    ds.labels[id] = y;
  }
  for (std::size_t v = 0; v < n; ++v)
    if (ds.labels[v] < 0) throw ParseError(lfile, 0, "node " + std::to_string(v) + " has no label");

  const std::string efile = (dir / "edges.tsv").string();
  const auto elines = detail::read_lines(dir / "edges.tsv");
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < elines.size(); ++i) {
    if (detail::blank(elines[i])) continue;
    const auto f = detail::split_fields(elines[i], true);
    if (f.size() != 2) throw ParseError(efile, i + 1, "expected 'u<TAB>v'");
    const auto u = detail::parse_integer<NodeId>(f[0], efile, i + 1, "node id");
    const auto v = detail::parse_integer<NodeId>(f[1], efile, i + 1, "node id");
    if (u >= n || v >= n) throw ParseError(efile, i + 1, "edge endpoint outside [0, " + std::to_string(n) + ")");
    edges.emplace_back(u, v);
  }
  ds.graph = build_graph(edges, n);
  ds.normalized = normalize_adjacency(ds.graph);

  const auto sp = dir / "splits.tsv";
  if (std::filesystem::exists(sp)) {
    const std::string sfile = sp.string();
    const auto slines = detail::read_lines(sp);
    std::vector<char> seen(n, 0);
    for (std::size_t i = 0; i < slines.size(); ++i) {
      if (detail::blank(slines[i])) continue;
      const auto f = detail::split_fields(slines[i], true);
      if (f.size() != 2) throw ParseError(sfile, i + 1, "expected 'node<TAB>train|val|test'");
      const auto id = detail::parse_integer<NodeId>(f[0], sfile, i + 1, "node id");
      if (id >= n) throw ParseError(sfile, i + 1, "unknown node id " + std::to_string(id));
      if (seen[id]) throw ParseError(sfile, i + 1, "node " + std::to_string(id) + " assigned to more than one split");
      seen[id] = 1;
      if (f[1] == "train") ds.splits.train.push_back(id);
      else if (f[1] == "val") ds.splits.val.push_back(id);
      else if (f[1] == "test") ds.splits.test.push_back(id);
      else throw ParseError(sfile, i + 1, "unknown split '" + std::string(f[1]) + "'");
    }
    for (auto* part : {&ds.splits.train, &ds.splits.val, &ds.splits.test}) std::sort(part->begin(), part->end());
    ds.splits.source = "file";
  } else {
    ds.splits = stratified_split(ds.labels, ds.num_classes, split_seed);
  }
  ds.validate();
  return ds;
}

/// Writes a dataset in the canonical directory format (edges listed once, u < v).
inline void write_dataset(const LabeledDataset& ds, const std::filesystem::path& dir, bool with_splits = true) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + (dir / name).string());
    return out;
  };
  {
    auto out = open("meta.tsv");
    out << "name\t" << ds.name << "\nnum_classes\t" << ds.num_classes << "\nnum_features\t" << ds.n_features()
        << "\n";
  }
  {
    auto out = open("features.tsv");
    for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
      out << i;
      for (double x : ds.features.row(i)) out << '\t' << format_real(x);
      out << '\n';
    }
  }
  {
    auto out = open("labels.tsv");
    for (std::size_t i = 0; i < ds.n_nodes(); ++i) out << i << '\t' << ds.labels[i] << '\n';
  }
  {
    auto out = open("edges.tsv");
    for (const auto& [u, v] : ds.graph.edge_list()) out << u << '\t' << v << '\n';
  }
  if (with_splits) {
    std::vector<const char*> tag(ds.n_nodes(), nullptr);
    for (NodeId v : ds.splits.train) tag[v] = "train";
    for (NodeId v : ds.splits.val) tag[v] = "val";
    for (NodeId v : ds.splits.test) tag[v] = "test";
    auto out = open("splits.tsv");
    for (std::size_t i = 0; i < tag.size(); ++i)
      if (tag[i]) out << i << '\t' << tag[i] << '\n';
  }
}

struct ConversionReport {
  std::size_t nodes = 0;
  std::size_t features = 0;
  std::size_t classes = 0;
  std::size_t edges_written = 0;
  std::size_t dropped_unknown = 0;
  std::vector<std::string> class_names;  // index = class id
};

/// Converts whitespace-separated content (`id f_1..f_d label`) and cites
/// (`id id`) files into a dataset directory.
inline ConversionReport convert_content_cites(const std::filesystem::path& content, const std::filesystem::path& cites,
                                              const std::filesystem::path& out_dir, const std::string& name = "") {
  const std::string cfile = content.string();
  const auto clines = detail::read_lines(content);
  std::map<std::string, NodeId> ids;
  std::vector<std::vector<std::string>> feats;
  std::vector<std::string> label_str;
  std::optional<std::size_t> width;
  for (std::size_t i = 0; i < clines.size(); ++i) {
    if (detail::blank(clines[i])) continue;
    const auto f = detail::split_fields(clines[i], false);
    if (f.size() < 3) throw ParseError(cfile, i + 1, "expected '<id> <features...> <label>'");
    const std::size_t d = f.size() - 2;
    if (width && *width != d)
      throw ParseError(cfile, i + 1, "inconsistent feature width: expected " + std::to_string(*width) + ", got " +
                                         std::to_string(d));
    width = d;
    std::string id(f[0]);
    if (ids.count(id)) throw ParseError(cfile, i + 1, "duplicate node id '" + id + "'");
    ids.emplace(id, feats.size());
    std::vector<std::string> row;
    row.reserve(d);
    for (std::size_t j = 1; j + 1 < f.size(); ++j) {
      const double x = detail::parse_real(f[j], cfile, i + 1);
      row.push_back(format_real(x));
    }
    feats.push_back(std::move(row));
    label_str.emplace_back(f.back());
  }
  if (feats.empty()) throw ParseError(cfile, 0, "no content rows");

  ConversionReport rep;
  rep.class_names = label_str;
  std::sort(rep.class_names.begin(), rep.class_names.end());
  rep.class_names.erase(std::unique(rep.class_names.begin(), rep.class_names.end()), rep.class_names.end());
  std::map<std::string, int> class_of;
  for (std::size_t c = 0; c < rep.class_names.size(); ++c) class_of[rep.class_names[c]] = static_cast<int>(c);

  const std::string efile = cites.string();
  const auto elines = detail::read_lines(cites);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < elines.size(); ++i) {
    if (detail::blank(elines[i])) continue;
    const auto f = detail::split_fields(elines[i], false);
    if (f.size() != 2) throw ParseError(efile, i + 1, "expected '<id> <id>'");
    auto a = ids.find(std::string(f[0]));
    auto b = ids.find(std::string(f[1]));
    if (a == ids.end() || b == ids.end()) {
      ++rep.dropped_unknown;
      continue;
    }
    edges.emplace_back(a->second, b->second);
  }

  rep.nodes = feats.size();
  rep.features = *width;
  rep.classes = rep.class_names.size();
  rep.edges_written = edges.size();

  std::filesystem::create_directories(out_dir);
  auto open = [&](const char* fname) {
    std::ofstream out(out_dir / fname, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + (out_dir / fname).string());
    return out;
  };
  {
    auto out = open("meta.tsv");
    out << "name\t" << (name.empty() ? content.stem().string() : name) << "\nnum_classes\t" << rep.classes
        << "\nnum_features\t" << rep.features << "\n";
  }
  {
    auto out = open("features.tsv");
    for (std::size_t i = 0; i < feats.size(); ++i) {
      out << i;
      for (const auto& x : feats[i]) out << '\t' << x;
      out << '\n';
    }
  }
  {
    auto out = open("labels.tsv");
    for (std::size_t i = 0; i < label_str.size(); ++i) out << i << '\t' << class_of.at(label_str[i]) << '\n';
  }
  {
    auto out = open("edges.tsv");
    for (const auto& [u, v] : edges) out << u << '\t' << v << '\n';
  }
  return rep;
}

/// Reads a RunConfig file (JSON object with flat dotted keys).
inline TrainConfig load_run_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string(), 0, std::string("invalid JSON: ") + e.what());
  }
  try {
    return config_from_flat_json(j, base);
  } catch (const std::invalid_argument& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

}  // namespace grain

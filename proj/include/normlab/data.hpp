#pragma once

// Deterministic synthetic datasets and CSV / IDX ingestion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "normlab/errors.hpp"
#include "normlab/linalg.hpp"
#include "normlab/model.hpp"

namespace normlab {

struct BlobsSpec {
  std::size_t classes = 3;
  std::size_t dim = 2;
  std::size_t points_per_class = 250;
  double spread = 0.5;
  std::uint64_t seed = 1;
};

struct TwoMoonsSpec {
  std::size_t points = 500;
  double noise = 0.1;
  std::uint64_t seed = 1;
};

struct CsvFileSpec {
  std::filesystem::path path;
  std::string label_column = "label";
  std::uint64_t seed = 0;  // split shuffle
};

struct IdxPairSpec {
  std::filesystem::path images_path;
  std::filesystem::path labels_path;
  std::size_t subset_size = 0;  // 0 = all
  std::uint64_t seed = 0;
};

using DatasetSpec = std::variant<BlobsSpec, TwoMoonsSpec, CsvFileSpec, IdxPairSpec>;

struct Dataset {
  Batch train;
  Batch validation;
  std::size_t num_classes = 0;
  std::vector<std::string> label_names;  // label_names[i] is the original label mapped to i
  Vec feature_mean;                      // standardization fitted on train
  Vec feature_std;
};

namespace detail {

struct RawData {
  std::vector<Vec> x;
  std::vector<std::size_t> y;
  std::vector<std::string> label_names;
};

inline RawData make_blobs(const BlobsSpec& s) {
  if (s.classes < 2 || s.dim == 0 || s.points_per_class == 0) {
    throw ConfigError("blobs: need classes >= 2, dim >= 1, points_per_class >= 1");
  }
  RngStream rng(s.seed);
  RawData d;
  constexpr double radius = 3.0;
  for (std::size_t c = 0; c < s.classes; ++c) {
    Vec center(s.dim, 0.0);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                         static_cast<double>(s.classes);
    if (s.dim == 1) {
      center[0] = radius * static_cast<double>(c);
    } else {
      center[0] = radius * std::cos(angle);
      center[1] = radius * std::sin(angle);
    }
    for (std::size_t i = 0; i < s.points_per_class; ++i) {
      Vec p(s.dim);
      for (std::size_t k = 0; k < s.dim; ++k) p[k] = center[k] + rng.normal(0.0, s.spread);
      d.x.push_back(std::move(p));
      d.y.push_back(c);
    }
    d.label_names.push_back(std::to_string(c));
  }
  return d;
}

inline RawData make_two_moons(const TwoMoonsSpec& s) {
  if (s.points < 2) throw ConfigError("two_moons: need at least 2 points");
  RngStream rng(s.seed);
  RawData d;
  const std::size_t upper = s.points / 2;
  for (std::size_t i = 0; i < s.points; ++i) {
    const bool first = i < upper;
    const std::size_t count = first ? upper : s.points - upper;
    const std::size_t j = first ? i : i - upper;
    const double t = count > 1 ? std::numbers::pi * static_cast<double>(j) /
                                     static_cast<double>(count - 1)
                               : 0.0;
    Vec p = first ? Vec{std::cos(t), std::sin(t)} : Vec{1.0 - std::cos(t), 0.5 - std::sin(t)};
    p[0] += rng.normal(0.0, s.noise);
    p[1] += rng.normal(0.0, s.noise);
    d.x.push_back(std::move(p));
    d.y.push_back(first ? 0 : 1);
  }
  d.label_names = {"0", "1"};
  return d;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

/// Sorted distinct labels -> contiguous 0-based ids. Numeric labels sort numerically.
inline std::vector<std::string> label_order(const std::vector<std::string>& raw) {
  std::vector<std::string> names(raw.begin(), raw.end());
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  const bool numeric = std::all_of(names.begin(), names.end(), [](const std::string& s) {
    double v;
    return parse_number(s, v);
  });
  if (numeric) {
    std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
      return std::strtod(a.c_str(), nullptr) < std::strtod(b.c_str(), nullptr);
    });
  }
  return names;
}

inline RawData read_csv(const CsvFileSpec& s) {
  std::ifstream f(s.path);
  if (!f) throw IoError("cannot open CSV file '" + s.path.string() + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(f, line)) throw ParseError(1, "empty CSV file (header row required)");
  const auto header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), s.label_column);
  if (it == header.end()) {
    throw ConfigError("CSV header has no label column '" + s.label_column + "'");
  }
  const auto label_idx = static_cast<std::size_t>(it - header.begin());
  RawData d;
  std::vector<std::string> raw_labels;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                                   std::to_string(cells.size()));
    }
    Vec x;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_idx) continue;
      double v;
      if (!parse_number(cells[c], v)) {
        throw ParseError(lineno, "non-numeric value '" + cells[c] + "' in column '" +
                                     header[c] + "'");
      }
      x.push_back(v);
    }
    if (cells[label_idx].empty()) throw ParseError(lineno, "empty label");
    raw_labels.push_back(cells[label_idx]);
    d.x.push_back(std::move(x));
  }
  if (d.x.empty()) throw ParseError(lineno, "CSV file has no data rows");
  if (header.size() < 2) throw ConfigError("CSV needs at least one feature column");
  d.label_names = label_order(raw_labels);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < d.label_names.size(); ++i) index[d.label_names[i]] = i;
  for (const auto& l : raw_labels) d.y.push_back(index.at(l));
  return d;
}

}  // namespace detail

/// Raw contents of an IDX file: dimensions and unsigned-byte payload.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

inline IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open IDX file '" + path.string() + "'");
  std::array<unsigned char, 4> magic{};
  if (!f.read(reinterpret_cast<char*>(magic.data()), 4)) {
    throw FormatError("IDX file '" + path.string() + "' is truncated");
  }
  if (magic[0] != 0 || magic[1] != 0) {
    throw FormatError("IDX magic number mismatch in '" + path.string() + "'");
  }
  if (magic[2] != 0x08) {
    throw FormatError("IDX element type " + std::to_string(magic[2]) +
                      " not supported (only unsigned byte)");
  }
  IdxArray out;
  std::size_t total = 1;
  for (unsigned i = 0; i < magic[3]; ++i) {
    std::array<unsigned char, 4> b{};
    if (!f.read(reinterpret_cast<char*>(b.data()), 4)) {
      throw FormatError("IDX header truncated in '" + path.string() + "'");
    }
    const std::uint32_t dim = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
                              (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
    out.dims.push_back(dim);
    total *= dim;
  }
  out.data.resize(total);
  if (total > 0 && !f.read(reinterpret_cast<char*>(out.data.data()),
                           static_cast<std::streamsize>(total))) {
    throw FormatError("IDX payload truncated in '" + path.string() + "'");
  }
  return out;
}

inline void write_idx(const std::filesystem::path& path, const IdxArray& a) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  const unsigned char magic[4] = {0, 0, 0x08, static_cast<unsigned char>(a.dims.size())};
  f.write(reinterpret_cast<const char*>(magic), 4);
  for (std::uint32_t d : a.dims) {
    const unsigned char b[4] = {static_cast<unsigned char>(d >> 24),
                                static_cast<unsigned char>(d >> 16),
                                static_cast<unsigned char>(d >> 8), static_cast<unsigned char>(d)};
    f.write(reinterpret_cast<const char*>(b), 4);
  }
  f.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

namespace detail {

inline RawData read_idx_pair(const IdxPairSpec& s) {
  const IdxArray images = read_idx(s.images_path);
  const IdxArray labels = read_idx(s.labels_path);
  if (images.dims.empty() || labels.dims.size() != 1) {
    throw FormatError("IDX pair: expected N x ... images and a 1-D label file");
  }
  const std::size_t n = images.dims[0];
  if (labels.dims[0] != n) throw FormatError("IDX pair: image and label counts differ");
  const std::size_t per = n == 0 ? 0 : images.data.size() / n;
  const std::size_t take = s.subset_size == 0 ? n : std::min(n, s.subset_size);
  RawData d;
  std::vector<std::string> raw;
  for (std::size_t i = 0; i < take; ++i) {
    Vec x(per);
    for (std::size_t k = 0; k < per; ++k) x[k] = images.data[i * per + k] / 255.0;
    d.x.push_back(std::move(x));
    raw.push_back(std::to_string(labels.data[i]));
  }
  d.label_names = label_order(raw);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < d.label_names.size(); ++i) index[d.label_names[i]] = i;
  for (const auto& l : raw) d.y.push_back(index.at(l));
  return d;
}

inline Batch to_batch(const RawData& d, const std::vector<std::size_t>& idx) {
  const std::size_t dim = d.x.empty() ? 0 : d.x.front().size();
  Batch b;
  b.inputs = Mat(idx.size(), dim);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(d.x[idx[r]].begin(), d.x[idx[r]].end(), b.inputs.row(r).begin());
    b.labels.push_back(d.y[idx[r]]);
  }
  return b;
}

}  // namespace detail

/// Per-column (mean, std) of a matrix; zero-variance columns get std 1.
inline std::pair<Vec, Vec> column_stats(const Mat& m) {
  Vec mu(m.cols, 0.0), sd(m.cols, 1.0);
  Vec col(m.rows);
  for (std::size_t c = 0; c < m.cols; ++c) {
    for (std::size_t r = 0; r < m.rows; ++r) col[r] = m(r, c);
    const auto [mean, std] = mean_std(col);
    mu[c] = mean;
    sd[c] = std > 0.0 ? std : 1.0;
  }
  return {mu, sd};
}

inline void standardize(Mat& m, const Vec& mu, const Vec& sd) {
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = (m(r, c) - mu[c]) / sd[c];
}

/// 80/20 train/validation split by seeded shuffle, then standardization
/// fitted on the train split only.
inline Dataset materialize(const DatasetSpec& spec) {
  detail::RawData raw;
  std::uint64_t split_seed = 0;
  if (const auto* b = std::get_if<BlobsSpec>(&spec)) {
    raw = detail::make_blobs(*b);
    split_seed = b->seed;
  } else if (const auto* m = std::get_if<TwoMoonsSpec>(&spec)) {
    raw = detail::make_two_moons(*m);
    split_seed = m->seed;
  } else if (const auto* c = std::get_if<CsvFileSpec>(&spec)) {
    raw = detail::read_csv(*c);
    split_seed = c->seed;
  } else {
    const auto& p = std::get<IdxPairSpec>(spec);
    raw = detail::read_idx_pair(p);
    split_seed = p.seed;
  }
  const std::size_t n = raw.x.size();
  if (n < 2) throw ConfigError("dataset needs at least 2 examples");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream(split_seed).fork(0x5EED).shuffle(order);
  const std::size_t n_train = std::clamp<std::size_t>((n * 4) / 5, 1, n - 1);
  const std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<long>(n_train));
  const std::vector<std::size_t> va(order.begin() + static_cast<long>(n_train), order.end());

  Dataset ds;
  ds.train = detail::to_batch(raw, tr);
  ds.validation = detail::to_batch(raw, va);
  std::tie(ds.feature_mean, ds.feature_std) = column_stats(ds.train.inputs);
  standardize(ds.train.inputs, ds.feature_mean, ds.feature_std);
  standardize(ds.validation.inputs, ds.feature_mean, ds.feature_std);
  ds.label_names = raw.label_names;
  ds.num_classes = raw.label_names.size();
  return ds;
}

}  // namespace normlab

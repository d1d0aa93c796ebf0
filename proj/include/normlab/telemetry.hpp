#pragma once

// Per-step, per-group training telemetry and its CSV / JSONL serialization.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "normlab/errors.hpp"
#include "normlab/linalg.hpp"
#include "normlab/reparam.hpp"

#ifndef NORMLAB_REVISION
#define NORMLAB_REVISION "unknown"
#endif

namespace normlab {

struct TelemetryRecord {
  std::size_t step = 0;
  std::string group_id;
  double norm = 0.0;
  double std = 0.0;
  double eff_lr = 0.0;
  double recip_max = 0.0;  // running max of the reciprocal over all groups
  double loss = 0.0;
  double train_acc = 0.0;
  bool overflow = false;

  friend bool operator==(const TelemetryRecord&, const TelemetryRecord&) = default;
};

/// Reciprocal magnitude that bounds the gradient scale: 1/std for WS groups,
/// 1/||w|| otherwise.
inline double reciprocal_magnitude(const WeightGroup& g) {
  if (g.kind.type == ReparamType::WS) return 1.0 / mean_std(g.w).std;
  return 1.0 / norm2(g.w);
}

class TelemetryRecorder {
 public:
  explicit TelemetryRecorder(std::size_t record_every = 1)
      : every_(std::max<std::size_t>(1, record_every)) {}

  /// Snapshot of one group after `step` updates. Reads only; never mutates training state.
  void record_step(std::size_t step, const WeightGroup& g, double eta_t, double loss,
                   double train_acc) {
    require_open();
    TelemetryRecord r;
    r.step = step;
    r.group_id = g.id;
    r.norm = norm2(g.w);
    r.std = mean_std(g.w).std;
    const double recip = reciprocal_magnitude(g);
    r.eff_lr = eta_t * recip;
    // Unnormalized groups have no 1/||w|| factor in their gradient.
    const bool monitored = g.kind.normalized();
    if (monitored) fold(g.id, recip);
    r.recip_max = recip_max_;
    r.loss = loss;
    r.train_acc = train_acc;
    r.overflow = !std::isfinite(r.norm) || !std::isfinite(loss) ||
                 (monitored && (!std::isfinite(recip) || !std::isfinite(r.eff_lr)));
    if (r.overflow) {
      terminated_ = true;
      records_.push_back(std::move(r));
    } else if (step % every_ == 0) {
      records_.push_back(std::move(r));
    }
  }

  /// Terminal record for an overflow raised by the optimizer at `step`.
  void record_overflow(std::size_t step, const WeightGroup& g, double loss, double train_acc) {
    require_open();
    TelemetryRecord r;
    r.step = step;
    r.group_id = g.id;
    r.norm = norm2(g.w);
    r.std = mean_std(g.w).std;
    if (g.kind.normalized()) fold(g.id, reciprocal_magnitude(g));
    r.eff_lr = std::numeric_limits<double>::infinity();
    r.recip_max = recip_max_;
    r.loss = loss;
    r.train_acc = train_acc;
    r.overflow = true;
    records_.push_back(std::move(r));
    terminated_ = true;
  }

  bool terminated() const { return terminated_; }
  double recip_max() const { return recip_max_; }
  const std::map<std::string, double>& recip_max_per_group() const { return per_group_; }
  const std::vector<TelemetryRecord>& records() const { return records_; }

 private:
  void require_open() const {
    if (terminated_) throw Error("telemetry: run already terminated by overflow");
  }

  void fold(const std::string& id, double recip) {
    // NaN compares false, so route it through as +inf to keep the max monotone.
    const double r = std::isnan(recip) ? std::numeric_limits<double>::infinity() : recip;
    recip_max_ = std::max(recip_max_, r);
    double& g = per_group_[id];
    g = std::max(g, r);
  }

  std::size_t every_;
  bool terminated_ = false;
  double recip_max_ = 0.0;
  std::map<std::string, double> per_group_;
  std::vector<TelemetryRecord> records_;
};

enum class TelemetryFormat { CSV, JSONL };

inline TelemetryFormat parse_telemetry_format(const std::string& s) {
  if (s == "csv") return TelemetryFormat::CSV;
  if (s == "jsonl") return TelemetryFormat::JSONL;
  throw ConfigError("unknown telemetry format '" + s + "'");
}

inline const char* kTelemetryCsvHeader =
    "step,group_id,norm,std,eff_lr,recip_max,loss,train_acc,overflow";

/// 17 significant digits, enough to round-trip any double.
inline std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_real(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ParseError(line, "not a number: '" + s + "'");
  }
  return v;
}

inline std::string to_csv(std::span<const TelemetryRecord> records) {
  std::string out = kTelemetryCsvHeader;
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.step) + ',' + r.group_id + ',' + format_real(r.norm) + ',' +
           format_real(r.std) + ',' + format_real(r.eff_lr) + ',' + format_real(r.recip_max) +
           ',' + format_real(r.loss) + ',' + format_real(r.train_acc) + ',' +
           (r.overflow ? "1" : "0") + '\n';
  }
  return out;
}

namespace detail {

// JSON has no inf/nan literals; non-finite values travel as strings.
inline std::string json_real(double x) {
  if (std::isfinite(x)) return format_real(x);
  return "\"" + format_real(x) + "\"";
}

inline double json_to_real(const nlohmann::json& j, std::size_t line) {
  if (j.is_string()) return parse_real(j.get<std::string>(), line);
  if (j.is_number()) return j.get<double>();
  throw ParseError(line, "expected a number");
}

}  // namespace detail

inline std::string to_jsonl(std::span<const TelemetryRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += "{\"step\":" + std::to_string(r.step) +
           ",\"group_id\":" + nlohmann::json(r.group_id).dump() +
           ",\"norm\":" + detail::json_real(r.norm) + ",\"std\":" + detail::json_real(r.std) +
           ",\"eff_lr\":" + detail::json_real(r.eff_lr) +
           ",\"recip_max\":" + detail::json_real(r.recip_max) +
           ",\"loss\":" + detail::json_real(r.loss) +
           ",\"train_acc\":" + detail::json_real(r.train_acc) +
           ",\"overflow\":" + (r.overflow ? "true" : "false") + "}\n";
  }
  return out;
}

inline std::vector<TelemetryRecord> parse_csv_telemetry(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<TelemetryRecord> out;
  if (!std::getline(in, line) || line != kTelemetryCsvHeader) {
    throw FormatError("telemetry CSV: missing or unexpected header");
  }
  ++lineno;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw ParseError(lineno, "expected 9 columns");
    TelemetryRecord r;
    r.step = static_cast<std::size_t>(parse_real(cells[0], lineno));
    r.group_id = cells[1];
    r.norm = parse_real(cells[2], lineno);
    r.std = parse_real(cells[3], lineno);
    r.eff_lr = parse_real(cells[4], lineno);
    r.recip_max = parse_real(cells[5], lineno);
    r.loss = parse_real(cells[6], lineno);
    r.train_acc = parse_real(cells[7], lineno);
    r.overflow = cells[8] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<TelemetryRecord> parse_jsonl_telemetry(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<TelemetryRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    TelemetryRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.group_id = j.at("group_id").get<std::string>();
    r.norm = detail::json_to_real(j.at("norm"), lineno);
    r.std = detail::json_to_real(j.at("std"), lineno);
    r.eff_lr = detail::json_to_real(j.at("eff_lr"), lineno);
    r.recip_max = detail::json_to_real(j.at("recip_max"), lineno);
    r.loss = detail::json_to_real(j.at("loss"), lineno);
    r.train_acc = detail::json_to_real(j.at("train_acc"), lineno);
    r.overflow = j.at("overflow").get<bool>();
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  f.flush();
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void export_telemetry(std::span<const TelemetryRecord> records, TelemetryFormat format,
                             const std::filesystem::path& path) {
  write_text_file(path, format == TelemetryFormat::CSV ? to_csv(records) : to_jsonl(records));
}

inline std::filesystem::path telemetry_path(const std::filesystem::path& dir,
                                            const std::string& run_id, TelemetryFormat format) {
  return dir / (run_id + ".telemetry." + (format == TelemetryFormat::CSV ? "csv" : "jsonl"));
}

inline std::filesystem::path manifest_path(const std::filesystem::path& dir,
                                           const std::string& run_id) {
  return dir / (run_id + ".manifest.json");
}

/// FNV-1a over the canonical (sorted-key, compact) JSON dump.
inline std::string config_digest(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

enum class RunStatus { Completed, Overflowed, Diverged };

struct RunOutcome {
  RunStatus status = RunStatus::Completed;
  std::size_t step = 0;  // meaningful for Overflowed

  friend bool operator==(const RunOutcome&, const RunOutcome&) = default;
};

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return "completed";
    case RunStatus::Overflowed: return "overflowed";
    case RunStatus::Diverged: return "diverged";
  }
  return "?";
}

class RunManifest {
 public:
  RunManifest(std::string run_id, std::uint64_t seed, std::string digest)
      : run_id_(std::move(run_id)),
        seed_(seed),
        digest_(std::move(digest)),
        start_time_(utc_timestamp()) {}

  void set_outcome(RunOutcome o) {
    if (outcome_) throw Error("run manifest outcome already recorded");
    outcome_ = o;
  }

  const std::optional<RunOutcome>& outcome() const { return outcome_; }
  const std::string& run_id() const { return run_id_; }

  /// Free-form fields (label remapping, warnings, per-group maxima, ...).
  nlohmann::json& extra() { return extra_; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["run_id"] = run_id_;
    j["seed"] = seed_;
    j["config_digest"] = digest_;
    j["start_time"] = start_time_;
    j["code_revision"] = NORMLAB_REVISION;
    if (outcome_) {
      j["outcome"] = {{"status", to_string(outcome_->status)}};
      if (outcome_->status == RunStatus::Overflowed) j["outcome"]["step"] = outcome_->step;
    } else {
      j["outcome"] = nullptr;
    }
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    return j;
  }

  void write(const std::filesystem::path& dir) const {
    write_text_file(manifest_path(dir, run_id_), to_json().dump(2) + "\n");
  }

 private:
  std::string run_id_;
  std::uint64_t seed_;
  std::string digest_;
  std::string start_time_;
  std::optional<RunOutcome> outcome_;
  nlohmann::json extra_ = nlohmann::json::object();
};

}  // namespace normlab

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pilotrep/errors.hpp"
#include "pilotrep/rrcf.hpp"
#include "pilotrep/trace.hpp"

namespace pilotrep {

struct FailurePoint {
  std::int64_t bin_start = 0;
  std::uint32_t count = 0;
};

// Counts terminations of the given classes in fixed-width wall-clock bins
// [k*w, (k+1)*w). Bins are floor-aligned so independently built streams line
// up; the series always spans every record's end time, giving explicit zero
// bins through quiet periods.
inline std::vector<FailurePoint> bin_failures(
    const TraceDataset& dataset, const std::set<TerminationClass>& classes,
    std::int64_t bin_width) {
  if (bin_width < 1) throw std::invalid_argument("bin_width must be >= 1");
  if (dataset.empty()) return {};
  auto bin_of = [bin_width](std::int64_t t) {
    std::int64_t b = t / bin_width;
    if (t < 0 && t % bin_width != 0) --b;  // floor toward -inf
    return b;
  };
  std::int64_t lo = bin_of(dataset.records.front().end_time);
  std::int64_t hi = lo;
  for (const auto& rec : dataset.records) {
    const std::int64_t b = bin_of(rec.end_time);
    lo = std::min(lo, b);
    hi = std::max(hi, b);
  }
  std::vector<FailurePoint> series(static_cast<std::size_t>(hi - lo + 1));
  for (std::size_t i = 0; i < series.size(); ++i) {
    series[i].bin_start = (lo + static_cast<std::int64_t>(i)) * bin_width;
  }
  for (const auto& rec : dataset.records) {
    if (classes.count(rec.termination_class)) {
      ++series[static_cast<std::size_t>(bin_of(rec.end_time) - lo)].count;
    }
  }
  return series;
}

struct DetectorConfig {
  int num_trees = 40;
  int window_size = 256;
  int shingle_size = 4;
  std::int64_t bin_width = 900;
  double threshold = 0.0;  // anomalous when score > threshold
  std::int64_t halt = 900;  // extra hold time appended to each flagged bin
  std::set<TerminationClass> classes = {TerminationClass::Network,
                                        TerminationClass::Preempted};
  std::uint64_t seed = 0;

  RrcfConfig forest_config() const {
    return RrcfConfig{num_trees, window_size, shingle_size, seed};
  }

  void validate() const {
    forest_config().validate();
    if (bin_width < 1) throw ConfigError("bin_width_s must be >= 1");
    if (threshold < 0.0) throw ConfigError("threshold must be >= 0");
    if (halt < 0) throw ConfigError("halt_s must be >= 0");
    if (classes.empty()) throw ConfigError("classes must be non-empty");
  }
};

inline DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig cfg;
  cfg.num_trees = j.value("num_trees", cfg.num_trees);
  cfg.window_size = j.value("window_size", cfg.window_size);
  cfg.shingle_size = j.value("shingle_size", cfg.shingle_size);
  cfg.bin_width = j.value("bin_width_s", cfg.bin_width);
  cfg.threshold = j.value("threshold", cfg.threshold);
  cfg.halt = j.value("halt_s", cfg.halt);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("classes")) {
    cfg.classes.clear();
    for (const auto& name : j.at("classes")) {
      const auto cls = termination_class_from_string(name.get<std::string>());
      if (!cls) {
        throw ParseError("unknown termination class '" + name.get<std::string>() + "'");
      }
      cfg.classes.insert(*cls);
    }
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::json detector_config_to_json(const DetectorConfig& cfg) {
  nlohmann::json j;
  j["num_trees"] = cfg.num_trees;
  j["window_size"] = cfg.window_size;
  j["shingle_size"] = cfg.shingle_size;
  j["bin_width_s"] = cfg.bin_width;
  j["threshold"] = cfg.threshold;
  j["halt_s"] = cfg.halt;
  auto names = nlohmann::json::array();
  for (auto c : cfg.classes) names.push_back(to_string(c));
  j["classes"] = names;
  j["seed"] = cfg.seed;
  return j;
}

inline DetectorConfig load_detector_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open detector config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    return detector_config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// Anomaly score per series position. The forest sees overlapping shingles of
// consecutive counts, so the first shingle_size-1 positions have no score and
// are reported as 0.
inline std::vector<double> score_stream(std::span<const FailurePoint> series,
                                        const DetectorConfig& config) {
  config.validate();
  std::vector<double> scores(series.size(), 0.0);
  if (series.size() < static_cast<std::size_t>(config.shingle_size)) return scores;
  RrcfForest forest(config.forest_config());
  const std::size_t k = static_cast<std::size_t>(config.shingle_size);
  std::vector<double> shingle(k);
  for (std::size_t i = k - 1; i < series.size(); ++i) {
    for (std::size_t d = 0; d < k; ++d) {
      shingle[d] = static_cast<double>(series[i + 1 - k + d].count);
    }
    scores[i] = forest.insert(shingle);
  }
  return scores;
}

struct HaltWindow {
  std::int64_t start = 0;
  std::int64_t end = 0;  // exclusive
};

inline bool operator==(const HaltWindow& a, const HaltWindow& b) {
  return a.start == b.start && a.end == b.end;
}

// Merged, disjoint, ascending hold-off windows during which task placement
// is suspended.
struct HaltSchedule {
  std::vector<HaltWindow> windows;

  bool contains(std::int64_t t) const {
    auto it = std::upper_bound(
        windows.begin(), windows.end(), t,
        [](std::int64_t v, const HaltWindow& w) { return v < w.start; });
    return it != windows.begin() && t < std::prev(it)->end;
  }

  // A plain list of [start, end) pairs.
  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& w : windows) arr.push_back({w.start, w.end});
    return arr;
  }

  static HaltSchedule from_json(const nlohmann::json& j) {
    HaltSchedule sched;
    if (!j.is_array()) throw ParseError("halt schedule must be a JSON array");
    for (const auto& pair : j) {
      if (!pair.is_array() || pair.size() != 2) {
        throw ParseError("halt window must be a [start, end] pair");
      }
      HaltWindow w{pair[0].get<std::int64_t>(), pair[1].get<std::int64_t>()};
      if (w.end <= w.start) throw ValidationError("halt window end <= start");
      if (!sched.windows.empty() && w.start < sched.windows.back().end) {
        throw ValidationError("halt windows must be disjoint and ascending");
      }
      sched.windows.push_back(w);
    }
    return sched;
  }
};

// Every bin whose score exceeds the threshold becomes a hold-off window
// [bin_start, bin_start + bin_width + halt); overlapping or touching windows
// merge.
inline HaltSchedule build_halt_schedule(std::span<const FailurePoint> series,
                                        std::span<const double> scores,
                                        const DetectorConfig& config) {
  HaltSchedule sched;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (scores[i] <= config.threshold) continue;
    HaltWindow w{series[i].bin_start,
                 series[i].bin_start + config.bin_width + config.halt};
    if (!sched.windows.empty() && w.start <= sched.windows.back().end) {
      sched.windows.back().end = std::max(sched.windows.back().end, w.end);
    } else {
      sched.windows.push_back(w);
    }
  }
  return sched;
}

inline HaltSchedule detect_anomalies(const TraceDataset& dataset,
                                     const DetectorConfig& config) {
  const auto series = bin_failures(dataset, config.classes, config.bin_width);
  const auto scores = score_stream(series, config);
  return build_halt_schedule(series, scores, config);
}

// Drops records whose termination falls inside a hold-off window, excising
// anomalous failures from model-fitting data.
inline TraceDataset filter_dataset(const TraceDataset& dataset,
                                   const HaltSchedule& schedule) {
  TraceDataset out;
  out.retire_time = dataset.retire_time;
  out.kill_time = dataset.kill_time;
  out.records.reserve(dataset.records.size());
  for (const auto& rec : dataset.records) {
    if (!schedule.contains(rec.end_time)) out.records.push_back(rec);
  }
  return out;
}

// Nearest-rank percentile (p in (0, 100]); with fewer than 1000 samples the
// 99.9th percentile is the maximum, which calibrates a threshold that flags
// nothing on the data it was drawn from.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  if (p <= 0.0 || p > 100.0) throw std::invalid_argument("p must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  return values[rank - 1];
}

}  // namespace pilotrep

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pilotrep/anomaly.hpp"
#include "pilotrep/errors.hpp"
#include "pilotrep/format.hpp"
#include "pilotrep/lifetime.hpp"
#include "pilotrep/rng.hpp"
#include "pilotrep/selection.hpp"
#include "pilotrep/trace.hpp"
#include "pilotrep/valleys.hpp"

namespace pilotrep {

enum class Algorithm { Random, Sorted, Valley, Spread };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Random: return "random";
    case Algorithm::Sorted: return "sorted";
    case Algorithm::Valley: return "valley";
    case Algorithm::Spread: return "spread";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& name) {
  if (name == "random") return Algorithm::Random;
  if (name == "sorted") return Algorithm::Sorted;
  if (name == "valley") return Algorithm::Valley;
  if (name == "spread") return Algorithm::Spread;
  throw ParseError("unknown algorithm '" + name + "'");
}

struct SimConfig {
  double train_fraction = 0.75;
  std::int64_t cadence = 6'000;  // seconds between task batches
  std::vector<double> availabilities = {0.90, 0.95, 0.99};
  std::vector<std::int64_t> leases = {3'600, 14'400, 25'200};
  std::vector<Algorithm> algorithms = {Algorithm::Random, Algorithm::Sorted,
                                       Algorithm::Valley, Algorithm::Spread};
  std::optional<int> redundancy_cap;
  std::optional<DetectorConfig> anomaly;
  std::uint64_t seed = 0;
  std::int64_t hist_bin = 60;  // lifetime histogram bin width
  CurveParams curve;
  int max_redundancy = 16;  // highest redundancy tried when building valleys
  bool record_tasks = false;
  // When non-empty these replace the tables built from the training trace;
  // every (availability, lease) pair must be covered.
  std::vector<ValleyTable> external_tables;

  void validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ConfigError("train_fraction must be in (0, 1)");
    }
    if (cadence < 1) throw ConfigError("cadence_s must be >= 1");
    if (availabilities.empty()) throw ConfigError("availabilities must be non-empty");
    for (const double a : availabilities) {
      if (!(a > 0.0 && a < 1.0)) throw ConfigError("availability must be in (0, 1)");
    }
    if (leases.empty()) throw ConfigError("leases_s must be non-empty");
    for (const std::int64_t l : leases) {
      if (l < 1) throw ConfigError("lease must be >= 1");
    }
    if (algorithms.empty()) throw ConfigError("algorithms must be non-empty");
    if (hist_bin < 1) throw ConfigError("hist_bin_s must be >= 1");
    if (max_redundancy < 1) throw ConfigError("max_redundancy must be >= 1");
    if (redundancy_cap && *redundancy_cap < 1) {
      throw ConfigError("redundancy_cap must be >= 1");
    }
    curve.validate();
    if (anomaly) anomaly->validate();
  }
};

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig cfg;
  try {
    cfg.train_fraction = j.value("train_fraction", cfg.train_fraction);
    cfg.cadence = j.value("cadence_s", cfg.cadence);
    if (j.contains("availabilities")) {
      cfg.availabilities = j.at("availabilities").get<std::vector<double>>();
    }
    if (j.contains("leases_s")) {
      cfg.leases = j.at("leases_s").get<std::vector<std::int64_t>>();
    }
    if (j.contains("algorithms")) {
      cfg.algorithms.clear();
      for (const auto& name : j.at("algorithms")) {
        cfg.algorithms.push_back(algorithm_from_string(name.get<std::string>()));
      }
    }
    if (j.contains("redundancy_cap") && !j.at("redundancy_cap").is_null()) {
      cfg.redundancy_cap = j.at("redundancy_cap").get<int>();
    }
    if (j.contains("anomaly") && !j.at("anomaly").is_null()) {
      cfg.anomaly = detector_config_from_json(j.at("anomaly"));
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.hist_bin = j.value("hist_bin_s", cfg.hist_bin);
    if (j.contains("curve")) {
      const auto& jc = j.at("curve");
      cfg.curve.interval_width = jc.value("interval_width_s", cfg.curve.interval_width);
      cfg.curve.cadence = jc.value("cadence_s", cfg.curve.cadence);
      cfg.curve.reps = jc.value("reps", cfg.curve.reps);
      cfg.curve.threads = jc.value("threads", cfg.curve.threads);
    }
    cfg.max_redundancy = j.value("max_redundancy", cfg.max_redundancy);
    cfg.record_tasks = j.value("record_tasks", cfg.record_tasks);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("simulation config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// Loads the config; "valley_tables" holds paths to table files, resolved
// relative to the config file's directory.
inline SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open simulation config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  SimConfig cfg = sim_config_from_json(j);
  if (j.contains("valley_tables")) {
    const auto base = std::filesystem::path(path).parent_path();
    for (const auto& entry : j.at("valley_tables")) {
      std::filesystem::path p(entry.get<std::string>());
      if (p.is_relative()) p = base / p;
      cfg.external_tables.push_back(load_table(p.string()));
    }
  }
  return cfg;
}

struct CellStats {
  double availability = 0.0;
  std::int64_t lease = 0;
  Algorithm algorithm = Algorithm::Random;
  std::uint64_t attempted = 0;
  std::uint64_t held = 0;
  std::uint64_t successes = 0;
  std::uint64_t failures = 0;
  std::uint64_t replica_sum = 0;  // over placed tasks
  double failure_rate = 0.0;      // failures / placed
  double mean_redundancy = 0.0;   // replica_sum / placed
  double utilization = 0.0;       // distinct selectable pilots / distinct pooled
  // diagnostic: selectable share of the pool at each sample, averaged
  double mean_sample_utilization = 0.0;
};

struct TaskLogEntry {
  std::int64_t sample_time = 0;
  double availability = 0.0;
  std::int64_t lease = 0;
  Algorithm algorithm = Algorithm::Random;
  SelectionResult::Status status = SelectionResult::Status::Held;
  std::vector<std::string> pilot_ids;
  std::optional<int> valley_used;
  bool success = false;
};

struct SimReport {
  std::vector<CellStats> cells;  // availability-major, then lease, then algorithm
  std::uint64_t samples_total = 0;
  std::uint64_t samples_halted = 0;
  std::uint64_t samples_empty = 0;
  std::uint64_t train_records_removed = 0;
  std::vector<ValleyTable> tables;  // one per (availability, lease) pair
  std::vector<TaskLogEntry> tasks;  // populated when record_tasks is set
};

// Pilots alive at t (start <= t < end) with their ages, in trace order.
struct PoolEntry {
  std::size_t record_index = 0;
  PilotCandidate candidate;
};

inline std::vector<PoolEntry> enumerate_pool(const TraceDataset& dataset,
                                             std::int64_t t) {
  std::vector<PoolEntry> pool;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& rec = dataset.records[i];
    if (rec.start_time > t) break;  // records sorted by start_time
    if (rec.end_time > t) {
      pool.push_back({i, {rec.pilot_id, rec.start_time, t - rec.start_time, {}}});
    }
  }
  return pool;
}

// A task placed at t0 succeeds when at least one replica's pilot survives the
// whole lease.
inline bool task_outcome(const TraceDataset& dataset,
                         std::span<const std::string> ids, std::int64_t t0,
                         std::int64_t lease) {
  for (const auto& rec : dataset.records) {
    if (rec.start_time > t0) break;
    if (rec.end_time <= t0) continue;
    if (rec.end_time < t0 + lease) continue;
    for (const auto& id : ids) {
      if (rec.pilot_id == id) return true;
    }
  }
  return false;
}

// Replays the test trace: every cadence seconds, one task per
// (availability, lease, algorithm) cell is placed on the then-alive pilots.
// The reliability model and valley tables come from the training trace only.
inline SimReport run_simulation(const TraceDataset& train_input,
                                const TraceDataset& test,
                                const SimConfig& config) {
  config.validate();
  auto availabilities = config.availabilities;
  std::sort(availabilities.begin(), availabilities.end());
  availabilities.erase(std::unique(availabilities.begin(), availabilities.end()),
                       availabilities.end());
  auto leases = config.leases;
  std::sort(leases.begin(), leases.end());
  leases.erase(std::unique(leases.begin(), leases.end()), leases.end());
  std::vector<Algorithm> algorithms;
  for (Algorithm a : {Algorithm::Random, Algorithm::Sorted, Algorithm::Valley,
                      Algorithm::Spread}) {
    if (std::find(config.algorithms.begin(), config.algorithms.end(), a) !=
        config.algorithms.end()) {
      algorithms.push_back(a);
    }
  }

  SimReport report;
  TraceDataset train = train_input;
  HaltSchedule test_halts;
  if (config.anomaly) {
    DetectorConfig detector = *config.anomaly;
    detector.seed = mix_seed({config.seed, 0x414e4f4dull});
    const auto train_halts = detect_anomalies(train, detector);
    train = filter_dataset(train, train_halts);
    report.train_records_removed = train_input.size() - train.size();
    test_halts = detect_anomalies(test, detector);
  }
  if (train.empty()) throw ConfigError("training trace is empty after filtering");
  if (test.empty()) throw ConfigError("test trace is empty");

  const auto dist = build_lifetime_dist(train, config.hist_bin);

  const bool needs_tables =
      std::find(algorithms.begin(), algorithms.end(), Algorithm::Valley) !=
          algorithms.end() ||
      std::find(algorithms.begin(), algorithms.end(), Algorithm::Spread) !=
          algorithms.end();
  const std::size_t num_pairs = availabilities.size() * leases.size();
  auto pair_index = [&](std::size_t ai, std::size_t li) {
    return ai * leases.size() + li;
  };
  std::vector<ValleyTable> tables(num_pairs);
  if (needs_tables) {
    if (!config.external_tables.empty()) {
      for (std::size_t ai = 0; ai < availabilities.size(); ++ai) {
        for (std::size_t li = 0; li < leases.size(); ++li) {
          const auto it = std::find_if(
              config.external_tables.begin(), config.external_tables.end(),
              [&](const ValleyTable& t) {
                return std::abs(t.availability - availabilities[ai]) < 1e-12 &&
                       t.lease == leases[li];
              });
          if (it == config.external_tables.end()) {
            throw ConfigError("no valley table for availability " +
                              format_double(availabilities[ai]) + ", lease " +
                              std::to_string(leases[li]));
          }
          tables[pair_index(ai, li)] = *it;
        }
      }
    } else {
      CurveParams params = config.curve;
      params.seed = mix_seed({config.seed, 0x43555256ull});
      for (std::size_t li = 0; li < leases.size(); ++li) {
        const auto family =
            compute_curve_family(train, leases[li], config.max_redundancy, params);
        for (std::size_t ai = 0; ai < availabilities.size(); ++ai) {
          tables[pair_index(ai, li)] = determine_valleys(family, availabilities[ai]);
        }
      }
    }
    if (config.redundancy_cap) {
      for (auto& table : tables) table = apply_cap(table, *config.redundancy_cap);
    }
    report.tables = tables;
  }

  struct Cell {
    double availability;
    std::int64_t lease;
    Algorithm algorithm;
    std::size_t pair;
  };
  std::vector<Cell> cells;
  for (std::size_t ai = 0; ai < availabilities.size(); ++ai) {
    for (std::size_t li = 0; li < leases.size(); ++li) {
      for (Algorithm a : algorithms) {
        cells.push_back({availabilities[ai], leases[li], a, pair_index(ai, li)});
      }
    }
  }
  std::vector<CellStats> stats(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    stats[i].availability = cells[i].availability;
    stats[i].lease = cells[i].lease;
    stats[i].algorithm = cells[i].algorithm;
  }

  std::vector<char> pooled(test.size(), 0);
  std::vector<std::vector<char>> selectable(num_pairs,
                                            std::vector<char>(test.size(), 0));
  std::vector<double> sample_util_sum(num_pairs, 0.0);
  std::uint64_t samples_scored = 0;

  std::uint64_t sample_idx = 0;
  std::unordered_map<std::string, std::int64_t> end_by_id;
  for (std::int64_t t = test.span_begin(); t < test.span_end();
       t += config.cadence, ++sample_idx) {
    ++report.samples_total;
    if (test_halts.contains(t)) {
      ++report.samples_halted;
      continue;
    }
    const auto pool_entries = enumerate_pool(test, t);
    if (pool_entries.empty()) {
      ++report.samples_empty;
      continue;
    }
    std::vector<PilotCandidate> pool;
    pool.reserve(pool_entries.size());
    end_by_id.clear();
    for (const auto& entry : pool_entries) {
      pool.push_back(entry.candidate);
      pooled[entry.record_index] = 1;
      auto& end = end_by_id[entry.candidate.pilot_id];
      end = std::max(end, test.records[entry.record_index].end_time);
    }
    ++samples_scored;
    if (needs_tables) {
      for (std::size_t p = 0; p < num_pairs; ++p) {
        std::size_t in_valley = 0;
        for (const auto& entry : pool_entries) {
          const std::int64_t age = entry.candidate.age;
          for (const Valley& v : tables[p].valleys) {
            if (age > v.lo && age <= v.hi) {
              selectable[p][entry.record_index] = 1;
              ++in_valley;
              break;
            }
          }
        }
        sample_util_sum[p] +=
            static_cast<double>(in_valley) / static_cast<double>(pool.size());
      }
    }
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      const Cell& cell = cells[ci];
      Rng rng = substream(config.seed, sample_idx, ci);
      SelectionResult res;
      switch (cell.algorithm) {
        case Algorithm::Random:
          res = select_random(pool, cell.availability, dist, cell.lease, rng);
          break;
        case Algorithm::Sorted:
          res = select_sorted(pool, cell.availability, dist, cell.lease);
          break;
        case Algorithm::Valley:
          res = select_valley(pool, tables[cell.pair], rng);
          break;
        case Algorithm::Spread:
          res = select_spread(pool, tables[cell.pair], rng);
          break;
      }
      CellStats& cs = stats[ci];
      ++cs.attempted;
      bool success = false;
      if (res.status == SelectionResult::Status::Selected) {
        const std::int64_t deadline = t + cell.lease;
        for (const auto& id : res.pilot_ids) {
          if (end_by_id.at(id) >= deadline) {
            success = true;
            break;
          }
        }
        if (success) ++cs.successes; else ++cs.failures;
        cs.replica_sum += res.pilot_ids.size();
      } else {
        ++cs.held;
      }
      if (config.record_tasks) {
        TaskLogEntry entry;
        entry.sample_time = t;
        entry.availability = cell.availability;
        entry.lease = cell.lease;
        entry.algorithm = cell.algorithm;
        entry.status = res.status == SelectionResult::Status::Selected
                           ? SelectionResult::Status::Selected
                           : SelectionResult::Status::Held;
        entry.pilot_ids = res.pilot_ids;
        entry.valley_used = res.valley_used;
        entry.success = success;
        report.tasks.push_back(std::move(entry));
      }
    }
  }

  const auto count_set = [](const std::vector<char>& bits) {
    return static_cast<std::uint64_t>(std::count(bits.begin(), bits.end(), 1));
  };
  const std::uint64_t pooled_count = count_set(pooled);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    CellStats& cs = stats[ci];
    const std::uint64_t placed = cs.successes + cs.failures;
    cs.failure_rate = placed ? static_cast<double>(cs.failures) / placed : 0.0;
    cs.mean_redundancy = placed ? static_cast<double>(cs.replica_sum) / placed : 0.0;
    if (cells[ci].algorithm == Algorithm::Random ||
        cells[ci].algorithm == Algorithm::Sorted) {
      cs.utilization = 1.0;
      cs.mean_sample_utilization = 1.0;
    } else {
      cs.utilization =
          pooled_count ? static_cast<double>(count_set(selectable[cells[ci].pair])) /
                             pooled_count
                       : 0.0;
      cs.mean_sample_utilization =
          samples_scored ? sample_util_sum[cells[ci].pair] /
                               static_cast<double>(samples_scored)
                         : 0.0;
    }
  }
  report.cells = std::move(stats);
  return report;
}

inline SimReport run_split_simulation(const TraceDataset& full,
                                      const SimConfig& config) {
  const auto [train, test] = split_dataset(full, config.train_fraction);
  if (train.empty() || test.empty()) {
    throw ConfigError("train/test split left one side empty");
  }
  return run_simulation(train, test, config);
}

inline constexpr const char* kReportCsvHeader =
    "availability,lease_s,algorithm,attempted,held,failure_rate,mean_redundancy,"
    "utilization";

inline void write_report_csv(const SimReport& report, std::ostream& out) {
  out << kReportCsvHeader << '\n';
  for (const auto& c : report.cells) {
    out << format_double(c.availability) << ',' << c.lease << ','
        << to_string(c.algorithm) << ',' << c.attempted << ',' << c.held << ','
        << format_double(c.failure_rate) << ',' << format_double(c.mean_redundancy)
        << ',' << format_double(c.utilization) << '\n';
  }
}

inline std::vector<CellStats> parse_report_csv(std::istream& in,
                                               const std::string& name) {
  std::vector<CellStats> cells;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      if (line != kReportCsvHeader) {
        throw ParseError(name + ":" + std::to_string(line_no) +
                         ": expected header '" + kReportCsvHeader + "'");
      }
      have_header = true;
      continue;
    }
    std::string_view rest(line);
    std::string_view fields[8];
    for (int f = 0; f < 8; ++f) {
      const auto comma = rest.find(',');
      if ((comma == std::string_view::npos) != (f == 7)) {
        throw ParseError(name + ":" + std::to_string(line_no) +
                         ": expected 8 fields");
      }
      fields[f] = rest.substr(0, comma);
      rest.remove_prefix(comma == std::string_view::npos ? rest.size() : comma + 1);
    }
    CellStats c;
    c.availability = parse_double(fields[0], "availability");
    c.lease = parse_int64(fields[1], "lease_s");
    c.algorithm = algorithm_from_string(std::string(fields[2]));
    c.attempted = parse_uint64(fields[3], "attempted");
    c.held = parse_uint64(fields[4], "held");
    c.failure_rate = parse_double(fields[5], "failure_rate");
    c.mean_redundancy = parse_double(fields[6], "mean_redundancy");
    c.utilization = parse_double(fields[7], "utilization");
    cells.push_back(c);
  }
  if (!have_header) throw ParseError(name + ": missing header");
  return cells;
}

inline std::vector<CellStats> load_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open report: " + path);
  return parse_report_csv(in, path);
}

inline nlohmann::json report_to_json(const SimReport& report) {
  nlohmann::json j;
  auto cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    nlohmann::json jc;
    jc["availability"] = c.availability;
    jc["lease_s"] = c.lease;
    jc["algorithm"] = to_string(c.algorithm);
    jc["attempted"] = c.attempted;
    jc["held"] = c.held;
    jc["successes"] = c.successes;
    jc["failures"] = c.failures;
    jc["failure_rate"] = c.failure_rate;
    jc["mean_redundancy"] = c.mean_redundancy;
    jc["utilization"] = c.utilization;
    jc["mean_sample_utilization"] = c.mean_sample_utilization;
    cells.push_back(std::move(jc));
  }
  j["cells"] = std::move(cells);
  j["samples_total"] = report.samples_total;
  j["samples_halted"] = report.samples_halted;
  j["samples_empty"] = report.samples_empty;
  j["train_records_removed"] = report.train_records_removed;
  auto tables = nlohmann::json::array();
  for (const auto& t : report.tables) {
    tables.push_back(nlohmann::json::parse(serialize_table(t)));
  }
  j["tables"] = std::move(tables);
  if (!report.tasks.empty()) {
    auto tasks = nlohmann::json::array();
    for (const auto& task : report.tasks) {
      nlohmann::json jt;
      jt["sample_time"] = task.sample_time;
      jt["availability"] = task.availability;
      jt["lease_s"] = task.lease;
      jt["algorithm"] = to_string(task.algorithm);
      jt["held"] = task.status != SelectionResult::Status::Selected;
      jt["pilot_ids"] = task.pilot_ids;
      if (task.valley_used) jt["valley_r"] = *task.valley_used;
      jt["success"] = task.success;
      tasks.push_back(std::move(jt));
    }
    j["tasks"] = std::move(tasks);
  }
  return j;
}

}  // namespace pilotrep

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pilotrep/errors.hpp"
#include "pilotrep/format.hpp"
#include "pilotrep/rng.hpp"
#include "pilotrep/trace.hpp"

namespace pilotrep {

// One age interval (age_lo, age_hi] of a failure-rate curve. trials == 0
// means no sample time ever had enough pilots of that age to run a trial.
struct CurvePoint {
  std::int64_t age_lo = 0;
  std::int64_t age_hi = 0;
  double failure_rate = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t trials = 0;

  bool defined() const { return trials > 0; }
};

// Estimated probability that r pilots drawn from a given age interval all
// terminate before a lease expires, as a function of pilot age.
struct FailureRateCurve {
  std::int64_t lease = 0;
  int redundancy = 1;
  std::int64_t interval_width = 0;
  std::vector<CurvePoint> points;
};

struct CurveFamily {
  std::int64_t lease = 0;
  std::int64_t interval_width = 0;
  std::int64_t retire_time = kDefaultRetireTime;
  std::vector<FailureRateCurve> curves;  // redundancy 1..curves.size()
};

struct CurveParams {
  std::int64_t interval_width = 12'000;  // 200 minutes
  std::int64_t cadence = 6'000;          // 100 minutes between sample times
  int reps = 10;                         // trials per sample time and interval
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (interval_width < 1) throw ConfigError("interval_width must be >= 1");
    if (cadence < 1) throw ConfigError("cadence must be >= 1");
    if (reps < 1) throw ConfigError("reps must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

namespace detail {

// Termination times of alive pilots, bucketed by sample time and age
// interval. A pilot is alive at t when start <= t < end; its age t - start
// selects the interval ((i)*w, (i+1)*w], so age 0 falls in no interval.
struct CurveWorkspace {
  std::int64_t interval_width = 0;
  std::int64_t cadence = 0;
  std::int64_t first_sample = 0;
  std::size_t num_samples = 0;
  std::size_t num_intervals = 0;
  std::vector<std::vector<std::vector<std::int64_t>>> pools;  // [interval][sample]
};

inline CurveWorkspace build_curve_workspace(const TraceDataset& dataset,
                                            const CurveParams& params) {
  params.validate();
  if (dataset.empty()) throw ValidationError("cannot build curves from an empty trace");
  CurveWorkspace ws;
  ws.interval_width = params.interval_width;
  ws.cadence = params.cadence;
  ws.first_sample = dataset.span_begin();
  ws.num_samples = static_cast<std::size_t>(
                       (dataset.span_end() - 1 - ws.first_sample) / ws.cadence) +
                   1;
  const std::int64_t max_age = dataset.max_lifetime() - 1;
  ws.num_intervals =
      max_age >= 1
          ? static_cast<std::size_t>((max_age - 1) / ws.interval_width) + 1
          : 0;
  ws.pools.assign(ws.num_intervals, {});
  for (auto& per_interval : ws.pools) per_interval.resize(ws.num_samples);
  for (const auto& rec : dataset.records) {
    // sample indices with start < t < end (age >= 1)
    const std::int64_t k_lo =
        (rec.start_time + 1 - ws.first_sample + ws.cadence - 1) / ws.cadence;
    const std::int64_t k_hi = (rec.end_time - 1 - ws.first_sample) / ws.cadence;
    for (std::int64_t k = k_lo; k <= k_hi; ++k) {
      const std::int64_t t = ws.first_sample + k * ws.cadence;
      const std::int64_t age = t - rec.start_time;
      const auto interval = static_cast<std::size_t>((age - 1) / ws.interval_width);
      ws.pools[interval][static_cast<std::size_t>(k)].push_back(rec.end_time);
    }
  }
  return ws;
}

// Monte-Carlo estimate for one redundancy level: at every sample time with at
// least r pilots in the interval, run reps trials, each drawing r distinct
// pilots and failing when all of them terminate before the lease deadline.
// Every (interval, sample, redundancy) cell uses its own RNG substream, so
// the curve is identical whether computed alone or as part of a family.
inline FailureRateCurve score_curve(const CurveWorkspace& ws, std::int64_t lease,
                                    int redundancy, const CurveParams& params) {
  if (lease < 1) throw ConfigError("lease must be >= 1");
  if (redundancy < 1) throw ConfigError("redundancy must be >= 1");
  FailureRateCurve curve;
  curve.lease = lease;
  curve.redundancy = redundancy;
  curve.interval_width = ws.interval_width;
  curve.points.resize(ws.num_intervals);

  const auto r = static_cast<std::size_t>(redundancy);
  auto score_interval = [&](std::size_t i) {
    CurvePoint& pt = curve.points[i];
    pt.age_lo = static_cast<std::int64_t>(i) * ws.interval_width;
    pt.age_hi = pt.age_lo + ws.interval_width;
    std::uint64_t failures = 0;
    std::uint64_t trials = 0;
    std::vector<std::int64_t> scratch;
    for (std::size_t k = 0; k < ws.num_samples; ++k) {
      const auto& pool = ws.pools[i][k];
      if (pool.size() < r) continue;
      Rng rng = substream(params.seed, i, k, r);
      scratch = pool;
      const std::int64_t deadline =
          ws.first_sample + static_cast<std::int64_t>(k) * ws.cadence + lease;
      for (int rep = 0; rep < params.reps; ++rep) {
        bool all_fail = true;
        for (std::size_t j = 0; j < r; ++j) {
          const std::size_t pick =
              j + static_cast<std::size_t>(rng.uniform_u64(scratch.size() - j));
          std::swap(scratch[j], scratch[pick]);
          if (scratch[j] >= deadline) all_fail = false;
        }
        failures += all_fail ? 1 : 0;
      }
      trials += static_cast<std::uint64_t>(params.reps);
    }
    pt.trials = trials;
    if (trials > 0) {
      pt.failure_rate =
          static_cast<double>(failures) / static_cast<double>(trials);
    }
  };

  if (params.threads == 1 || ws.num_intervals <= 1) {
    for (std::size_t i = 0; i < ws.num_intervals; ++i) score_interval(i);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= ws.num_intervals) return;
        score_interval(i);
      }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(params.threads),
                                         ws.num_intervals);
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return curve;
}

}  // namespace detail

inline FailureRateCurve compute_failure_curve(const TraceDataset& dataset,
                                              std::int64_t lease, int redundancy,
                                              const CurveParams& params) {
  const auto ws = detail::build_curve_workspace(dataset, params);
  return detail::score_curve(ws, lease, redundancy, params);
}

inline CurveFamily compute_curve_family(const TraceDataset& dataset,
                                        std::int64_t lease, int max_redundancy,
                                        const CurveParams& params) {
  if (max_redundancy < 1) throw ConfigError("max redundancy must be >= 1");
  const auto ws = detail::build_curve_workspace(dataset, params);
  CurveFamily family;
  family.lease = lease;
  family.interval_width = params.interval_width;
  family.retire_time = dataset.retire_time;
  family.curves.reserve(static_cast<std::size_t>(max_redundancy));
  for (int r = 1; r <= max_redundancy; ++r) {
    family.curves.push_back(detail::score_curve(ws, lease, r, params));
  }
  return family;
}

struct Valley {
  int redundancy = 1;
  std::int64_t lo = 0;  // exclusive age bound
  std::int64_t hi = 0;  // inclusive age bound
  bool widened = false;  // stretched to contain the previous valley
};

inline bool operator==(const Valley& a, const Valley& b) {
  return a.redundancy == b.redundancy && a.lo == b.lo && a.hi == b.hi &&
         a.widened == b.widened;
}

struct ValleyTable {
  double availability = 0.0;
  std::int64_t lease = 0;
  std::vector<Valley> valleys;  // ascending redundancy, nested by widening
};

// Valleys must be usable as a fallback chain: each higher-redundancy valley
// has to contain every lower one.
inline bool check_nesting(const ValleyTable& table) {
  for (std::size_t i = 1; i < table.valleys.size(); ++i) {
    if (table.valleys[i].lo > table.valleys[i - 1].lo) return false;
    if (table.valleys[i].hi < table.valleys[i - 1].hi) return false;
  }
  return true;
}

// For each redundancy level in turn, the valley is the longest contiguous run
// of defined intervals with failure rate <= 1 - availability (earliest run on
// ties), widened if needed to contain the previous level's valley. Stops once
// a valley covers every age up to min(retire_time, last age with data).
inline ValleyTable determine_valleys(std::span<const FailureRateCurve> curves,
                                     double availability,
                                     std::int64_t retire_time) {
  if (!(availability > 0.0 && availability < 1.0)) {
    throw ConfigError("availability must be in (0, 1)");
  }
  ValleyTable table;
  table.availability = availability;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    if (curves[i].redundancy != static_cast<int>(i) + 1) {
      throw ConfigError("curves must cover redundancy 1..N in order");
    }
    if (curves[i].lease != curves[0].lease ||
        curves[i].interval_width != curves[0].interval_width) {
      throw ConfigError("curves in a family must share lease and interval width");
    }
  }
  if (curves.empty()) return table;
  table.lease = curves[0].lease;

  std::int64_t max_defined_hi = 0;
  for (const auto& curve : curves) {
    for (const auto& pt : curve.points) {
      if (pt.defined()) max_defined_hi = std::max(max_defined_hi, pt.age_hi);
    }
  }
  if (max_defined_hi == 0) return table;
  const std::int64_t coverage_target = std::min(retire_time, max_defined_hi);
  const double threshold = 1.0 - availability;

  for (const auto& curve : curves) {
    std::size_t best_begin = 0, best_len = 0;
    std::size_t run_begin = 0, run_len = 0;
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
      const auto& pt = curve.points[i];
      if (pt.defined() && pt.failure_rate <= threshold) {
        if (run_len == 0) run_begin = i;
        ++run_len;
        if (run_len > best_len) {
          best_len = run_len;
          best_begin = run_begin;
        }
      } else {
        run_len = 0;
      }
    }
    if (best_len == 0) continue;
    Valley v;
    v.redundancy = curve.redundancy;
    v.lo = curve.points[best_begin].age_lo;
    v.hi = curve.points[best_begin + best_len - 1].age_hi;
    if (!table.valleys.empty()) {
      const Valley& prev = table.valleys.back();
      if (v.lo > prev.lo) {
        v.lo = prev.lo;
        v.widened = true;
      }
      if (v.hi < prev.hi) {
        v.hi = prev.hi;
        v.widened = true;
      }
    }
    table.valleys.push_back(v);
    if (v.lo == 0 && v.hi >= coverage_target) break;
  }
  return table;
}

inline ValleyTable determine_valleys(const CurveFamily& family,
                                     double availability) {
  return determine_valleys(family.curves, availability, family.retire_time);
}

inline std::string serialize_table(const ValleyTable& table) {
  nlohmann::ordered_json j;
  j["availability"] = table.availability;
  j["lease_s"] = table.lease;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& v : table.valleys) {
    nlohmann::ordered_json jv;
    jv["r"] = v.redundancy;
    jv["lo_s"] = v.lo;
    jv["hi_s"] = v.hi;
    jv["widened"] = v.widened;
    arr.push_back(std::move(jv));
  }
  j["valleys"] = std::move(arr);
  return j.dump();
}

inline ValleyTable parse_table(const nlohmann::json& j) {
  ValleyTable table;
  try {
    table.availability = j.at("availability").get<double>();
    table.lease = j.at("lease_s").get<std::int64_t>();
    for (const auto& jv : j.at("valleys")) {
      Valley v;
      v.redundancy = jv.at("r").get<int>();
      v.lo = jv.at("lo_s").get<std::int64_t>();
      v.hi = jv.at("hi_s").get<std::int64_t>();
      v.widened = jv.at("widened").get<bool>();
      table.valleys.push_back(v);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("valley table: ") + e.what());
  }
  if (!(table.availability > 0.0 && table.availability < 1.0)) {
    throw ValidationError("valley table availability must be in (0, 1)");
  }
  if (table.lease < 1) throw ValidationError("valley table lease must be >= 1");
  for (std::size_t i = 0; i < table.valleys.size(); ++i) {
    const Valley& v = table.valleys[i];
    if (v.redundancy < 1) throw ValidationError("valley redundancy must be >= 1");
    if (v.lo < 0 || v.hi <= v.lo) throw ValidationError("valley needs 0 <= lo < hi");
    if (i > 0 && v.redundancy <= table.valleys[i - 1].redundancy) {
      throw ValidationError("valley redundancies must be strictly ascending");
    }
  }
  return table;
}

inline ValleyTable load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open valley table: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return parse_table(j);
}

inline constexpr const char* kCurveCsvHeader = "age_lo_s,age_hi_s,failure_rate,trials";
inline constexpr const char* kFamilyCsvHeader = "r,age_lo_s,age_hi_s,failure_rate,trials";

inline void write_curve_csv(const FailureRateCurve& curve, std::ostream& out) {
  out << kCurveCsvHeader << '\n';
  for (const auto& pt : curve.points) {
    out << pt.age_lo << ',' << pt.age_hi << ',' << format_double(pt.failure_rate)
        << ',' << pt.trials << '\n';
  }
}

inline void write_family_csv(const CurveFamily& family, std::ostream& out) {
  out << "# lease_s=" << family.lease << " interval_width_s=" << family.interval_width
      << " retire_s=" << family.retire_time << '\n';
  out << kFamilyCsvHeader << '\n';
  for (const auto& curve : family.curves) {
    for (const auto& pt : curve.points) {
      out << curve.redundancy << ',' << pt.age_lo << ',' << pt.age_hi << ','
          << format_double(pt.failure_rate) << ',' << pt.trials << '\n';
    }
  }
}

inline CurveFamily parse_family_csv(std::istream& in, const std::string& name) {
  CurveFamily family;
  bool have_meta = false, have_header = false;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError(name + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string_view rest(line);
      rest.remove_prefix(1);
      std::int64_t seen = 0;
      while (!rest.empty()) {
        const auto ws = rest.find_first_not_of(' ');
        if (ws == std::string_view::npos) break;
        rest.remove_prefix(ws);
        const auto end = rest.find(' ');
        const auto token = rest.substr(0, end);
        rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
        const auto eq = token.find('=');
        if (eq == std::string_view::npos) fail("expected key=value in metadata");
        const auto key = token.substr(0, eq);
        const auto value = token.substr(eq + 1);
        if (key == "lease_s") family.lease = parse_int64(value, "lease_s");
        else if (key == "interval_width_s") family.interval_width = parse_int64(value, "interval_width_s");
        else if (key == "retire_s") family.retire_time = parse_int64(value, "retire_s");
        else fail("unknown metadata key '" + std::string(key) + "'");
        ++seen;
      }
      if (seen > 0) have_meta = true;
      continue;
    }
    if (!have_header) {
      if (line != kFamilyCsvHeader) fail("expected header '" + std::string(kFamilyCsvHeader) + "'");
      have_header = true;
      continue;
    }
    std::string_view rest(line);
    std::string_view fields[5];
    for (int f = 0; f < 5; ++f) {
      const auto comma = rest.find(',');
      if ((comma == std::string_view::npos) != (f == 4)) fail("expected 5 fields");
      fields[f] = rest.substr(0, comma);
      rest.remove_prefix(comma == std::string_view::npos ? rest.size() : comma + 1);
    }
    const auto r = parse_int64(fields[0], "r");
    if (r < 1) fail("r must be >= 1");
    CurvePoint pt;
    pt.age_lo = parse_int64(fields[1], "age_lo_s");
    pt.age_hi = parse_int64(fields[2], "age_hi_s");
    pt.failure_rate = parse_double(fields[3], "failure_rate");
    pt.trials = parse_uint64(fields[4], "trials");
    if (pt.age_hi <= pt.age_lo) fail("age_hi_s must exceed age_lo_s");
    if (r == static_cast<std::int64_t>(family.curves.size()) + 1) {
      FailureRateCurve curve;
      curve.lease = family.lease;
      curve.redundancy = static_cast<int>(r);
      curve.interval_width = family.interval_width;
      family.curves.push_back(std::move(curve));
    } else if (r != static_cast<std::int64_t>(family.curves.size())) {
      fail("curves must appear in redundancy order 1..N");
    }
    auto& points = family.curves.back().points;
    if (!points.empty() && pt.age_lo != points.back().age_hi) {
      fail("age intervals must be contiguous and ascending");
    }
    if (points.empty() && pt.age_lo != 0) fail("first interval must start at age 0");
    points.push_back(pt);
  }
  if (!have_header) throw ParseError(name + ": missing header");
  if (!have_meta) throw ParseError(name + ": missing metadata comment");
  if (family.lease < 1 || family.interval_width < 1) {
    throw ValidationError(name + ": metadata must set lease_s and interval_width_s");
  }
  return family;
}

inline CurveFamily load_family_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open curve file: " + path);
  return parse_family_csv(in, path);
}

}  // namespace pilotrep

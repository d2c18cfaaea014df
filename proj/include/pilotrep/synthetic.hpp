#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pilotrep/errors.hpp"
#include "pilotrep/rng.hpp"
#include "pilotrep/trace.hpp"

namespace pilotrep {

// One bounded-support lifetime component. "johnson_sb" maps a standard normal
// through the logistic transform onto (location, location+scale];
// "uniform" draws integer seconds uniformly from the same range.
struct LifetimeComponent {
  std::string family = "johnson_sb";
  double weight = 1.0;
  double location = 0.0;  // seconds, lower support bound
  double scale = 1.0;     // seconds, support width
  double gamma = 0.0;     // johnson_sb shape
  double delta = 1.0;     // johnson_sb shape, > 0
};

struct LocalityGroups {
  int group_size = 1;
  double group_fraction = 0.0;  // fraction of pilots created in groups
};

struct AnomalyBurst {
  std::int64_t at = 0;          // epoch seconds
  int extra_failures = 0;
  std::int64_t burst_lifetime = 0;
};

struct SyntheticTraceSpec {
  std::size_t count = 0;
  double arrival_rate_per_hour = 60.0;  // Poisson arrival events
  std::vector<LifetimeComponent> mixture;
  LocalityGroups locality;
  std::vector<AnomalyBurst> bursts;
  std::uint64_t seed = 0;
  std::int64_t retire_time = kDefaultRetireTime;
  std::int64_t kill_time = kDefaultKillTime;
  int sites = 4;
  std::int64_t start_epoch = 0;
};

inline SyntheticTraceSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticTraceSpec spec;
  try {
    spec.count = j.at("count").get<std::size_t>();
    spec.arrival_rate_per_hour =
        j.value("arrival", nlohmann::json::object()).value("rate", 60.0);
    for (const auto& c : j.at("mixture")) {
      LifetimeComponent comp;
      comp.family = c.value("family", std::string("johnson_sb"));
      comp.weight = c.at("weight").get<double>();
      comp.location = c.at("location").get<double>();
      comp.scale = c.at("scale").get<double>();
      comp.gamma = c.value("gamma", 0.0);
      comp.delta = c.value("delta", 1.0);
      spec.mixture.push_back(comp);
    }
    if (j.contains("locality_groups")) {
      spec.locality.group_size = j["locality_groups"].value("group_size", 1);
      spec.locality.group_fraction =
          j["locality_groups"].value("group_fraction", 0.0);
    }
    if (j.contains("anomaly_bursts")) {
      for (const auto& b : j["anomaly_bursts"]) {
        AnomalyBurst burst;
        burst.at = b.at("at").get<std::int64_t>();
        burst.extra_failures = b.at("extra_failures").get<int>();
        burst.burst_lifetime = b.at("burst_lifetime").get<std::int64_t>();
        spec.bursts.push_back(burst);
      }
    }
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.retire_time = j.value("retire_time", kDefaultRetireTime);
    spec.kill_time = j.value("kill_time", kDefaultKillTime);
    spec.sites = j.value("sites", 4);
    spec.start_epoch = j.value("start_epoch", std::int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synthetic spec: ") + e.what());
  }
  return spec;
}

inline SyntheticTraceSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open spec file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return synthetic_spec_from_json(j);
}

namespace detail {

inline void validate_spec(const SyntheticTraceSpec& spec) {
  if (spec.mixture.empty() && spec.count > 0) {
    throw ValidationError("synthetic spec: mixture must not be empty");
  }
  double wsum = 0.0;
  for (const auto& c : spec.mixture) {
    if (c.weight < 0.0) throw ValidationError("synthetic spec: negative weight");
    if (c.scale <= 0.0) throw ValidationError("synthetic spec: scale must be > 0");
    if (c.family == "johnson_sb" && c.delta <= 0.0) {
      throw ValidationError("synthetic spec: delta must be > 0");
    }
    if (c.family != "johnson_sb" && c.family != "uniform") {
      throw ValidationError("synthetic spec: unknown family '" + c.family + "'");
    }
    wsum += c.weight;
  }
  if (spec.count > 0 && std::abs(wsum - 1.0) > 1e-9) {
    throw ValidationError("synthetic spec: weights must sum to 1");
  }
  if (spec.locality.group_fraction < 0.0 || spec.locality.group_fraction > 1.0) {
    throw ValidationError("synthetic spec: group_fraction must be in [0,1]");
  }
  if (spec.locality.group_fraction > 0.0 && spec.locality.group_size < 2) {
    throw ValidationError("synthetic spec: group_size must be >= 2");
  }
  if (spec.retire_time >= spec.kill_time) {
    throw ValidationError("synthetic spec: retire_time must be below kill_time");
  }
  if (spec.arrival_rate_per_hour <= 0.0 && spec.count > 0) {
    throw ValidationError("synthetic spec: arrival rate must be > 0");
  }
  if (spec.sites < 1) throw ValidationError("synthetic spec: sites must be >= 1");
}

inline std::int64_t draw_lifetime(const SyntheticTraceSpec& spec, Rng& rng) {
  // pick mixture component by weight
  double u = rng.uniform01();
  const LifetimeComponent* comp = &spec.mixture.back();
  for (const auto& c : spec.mixture) {
    if (u < c.weight) {
      comp = &c;
      break;
    }
    u -= c.weight;
  }
  double x;
  if (comp->family == "uniform") {
    const auto lo = static_cast<std::int64_t>(comp->location);
    const auto width = static_cast<std::int64_t>(comp->scale);
    x = static_cast<double>(lo + rng.uniform_i64(1, width));
  } else {  // johnson_sb
    const double z = rng.normal();
    const double y = 1.0 / (1.0 + std::exp(-(z - comp->gamma) / comp->delta));
    x = comp->location + comp->scale * y;
  }
  auto lifetime = static_cast<std::int64_t>(std::llround(x));
  return std::clamp<std::int64_t>(lifetime, 1, spec.kill_time);
}

inline TerminationClass class_for_lifetime(const SyntheticTraceSpec& spec,
                                           std::int64_t lifetime) {
  if (lifetime >= spec.kill_time) return TerminationClass::Killed;
  if (lifetime >= spec.retire_time) return TerminationClass::Retired;
  return TerminationClass::Preempted;
}

}  // namespace detail

// Deterministic for a fixed seed. Pilots arrive as a Poisson process; a
// configured fraction arrives in locality groups whose members share one
// start time and one drawn lifetime. Anomaly bursts append extra network
// failures ending within 60 s after each burst timestamp.
inline TraceDataset generate_synthetic(const SyntheticTraceSpec& spec) {
  detail::validate_spec(spec);
  TraceDataset ds;
  ds.retire_time = spec.retire_time;
  ds.kill_time = spec.kill_time;
  if (spec.count == 0 && spec.bursts.empty()) return ds;

  Rng rng(mix_seed({spec.seed, 0x5054524143454e47ULL}));

  const int group_size = std::max(1, spec.locality.group_size);
  const std::size_t grouped =
      group_size < 2
          ? 0
          : (static_cast<std::size_t>(
                 static_cast<double>(spec.count) * spec.locality.group_fraction) /
             group_size) *
                group_size;
  const std::size_t n_groups = group_size < 2 ? 0 : grouped / group_size;
  const std::size_t n_singles = spec.count - grouped;
  const std::size_t n_events = n_groups + n_singles;

  // Event arrivals are Poisson with the rate scaled so the *pilot* rate
  // matches the configured pilots-per-hour.
  const double event_rate_per_s =
      spec.count == 0 ? 0.0
                      : spec.arrival_rate_per_hour / 3600.0 *
                            (static_cast<double>(n_events) /
                             static_cast<double>(spec.count));

  // Interleave group events uniformly among the singles.
  std::vector<bool> is_group(n_events, false);
  {
    std::size_t placed = 0;
    for (std::size_t i = 0; i < n_events && placed < n_groups; ++i) {
      const std::size_t remaining = n_events - i;
      if (rng.uniform_u64(remaining) < n_groups - placed) {
        is_group[i] = true;
        ++placed;
      }
    }
  }

  double t = static_cast<double>(spec.start_epoch);
  std::size_t pilot_no = 0;
  char idbuf[16];
  const auto next_id = [&]() {
    std::snprintf(idbuf, sizeof(idbuf), "p%07zu", pilot_no++);
    return std::string(idbuf);
  };

  ds.records.reserve(spec.count);
  for (std::size_t ev = 0; ev < n_events; ++ev) {
    t += -std::log(rng.uniform_open01()) / event_rate_per_s;
    const auto start = static_cast<std::int64_t>(std::llround(t));
    const std::string site =
        "s" + std::to_string(rng.uniform_u64(static_cast<std::uint64_t>(spec.sites)));
    const std::size_t members = is_group[ev] ? group_size : 1;
    const std::int64_t lifetime = detail::draw_lifetime(spec, rng);
    for (std::size_t m = 0; m < members; ++m) {
      PilotRecord rec;
      rec.pilot_id = next_id();
      rec.site_id = site;
      rec.start_time = start;
      rec.end_time = start + lifetime;
      rec.termination_class = detail::class_for_lifetime(spec, lifetime);
      ds.records.push_back(std::move(rec));
    }
  }

  for (const auto& burst : spec.bursts) {
    const std::int64_t lifetime = std::clamp<std::int64_t>(
        burst.burst_lifetime, 1, spec.kill_time);
    for (int i = 0; i < burst.extra_failures; ++i) {
      PilotRecord rec;
      rec.pilot_id = next_id();
      rec.site_id =
          "s" + std::to_string(rng.uniform_u64(static_cast<std::uint64_t>(spec.sites)));
      rec.end_time = burst.at + rng.uniform_i64(0, 59);
      rec.start_time = rec.end_time - lifetime;
      rec.termination_class = TerminationClass::Network;
      ds.records.push_back(std::move(rec));
    }
  }

  ds.sort_records();
  return ds;
}

}  // namespace pilotrep

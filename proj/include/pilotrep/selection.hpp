#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pilotrep/errors.hpp"
#include "pilotrep/lifetime.hpp"
#include "pilotrep/rng.hpp"
#include "pilotrep/valleys.hpp"

namespace pilotrep {

struct PilotCandidate {
  std::string pilot_id;
  std::int64_t start_time = 0;
  std::int64_t age = 0;
  // Set to override the rate derived from the lifetime distribution.
  std::optional<double> failure_rate;
};

struct SelectionResult {
  enum class Status { Selected, NoSolution, Held };
  Status status = Status::NoSolution;
  std::vector<std::string> pilot_ids;
  std::optional<int> valley_used;
  std::optional<double> predicted_failure;
};

// Per-candidate probability of terminating within the lease. Ages past the
// observed distribution carry no evidence of survival and count as certain
// failures.
inline std::vector<double> candidate_failure_rates(
    std::span<const PilotCandidate> pool, const EmpiricalLifetimeDist& dist,
    std::int64_t lease) {
  std::vector<double> rates;
  rates.reserve(pool.size());
  for (const auto& c : pool) {
    if (c.failure_rate) {
      rates.push_back(*c.failure_rate);
      continue;
    }
    try {
      rates.push_back(conditional_failure_prob(dist, c.age, lease).value);
    } catch (const NoSurvivorsError&) {
      rates.push_back(1.0);
    }
  }
  return rates;
}

namespace detail {

inline void require_availability(double availability) {
  if (!(availability > 0.0 && availability < 1.0)) {
    throw ConfigError("availability must be in (0, 1)");
  }
}

}  // namespace detail

// Draws pilots uniformly without replacement until the joint failure
// probability drops to 1 - availability. Exhausting the pool without reaching
// the target reports NoSolution with the full-pool product.
inline SelectionResult select_random(std::span<const PilotCandidate> pool,
                                     double availability,
                                     const EmpiricalLifetimeDist& dist,
                                     std::int64_t lease, Rng& rng) {
  detail::require_availability(availability);
  const double target = 1.0 - availability;
  const auto rates = candidate_failure_rates(pool, dist, lease);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  SelectionResult result;
  double product = 1.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t pick =
        i + static_cast<std::size_t>(rng.uniform_u64(order.size() - i));
    std::swap(order[i], order[pick]);
    product *= rates[order[i]];
    result.pilot_ids.push_back(pool[order[i]].pilot_id);
    if (product <= target) {
      result.status = SelectionResult::Status::Selected;
      break;
    }
  }
  result.predicted_failure = product;
  return result;
}

// Like select_random but takes pilots in ascending order of failure
// probability, which yields the fewest replicas any subset can achieve.
inline SelectionResult select_sorted(std::span<const PilotCandidate> pool,
                                     double availability,
                                     const EmpiricalLifetimeDist& dist,
                                     std::int64_t lease) {
  detail::require_availability(availability);
  const double target = 1.0 - availability;
  const auto rates = candidate_failure_rates(pool, dist, lease);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rates[a] != rates[b]) return rates[a] < rates[b];
    if (pool[a].start_time != pool[b].start_time) {
      return pool[a].start_time < pool[b].start_time;
    }
    return pool[a].pilot_id < pool[b].pilot_id;
  });
  SelectionResult result;
  double product = 1.0;
  for (const std::size_t idx : order) {
    product *= rates[idx];
    result.pilot_ids.push_back(pool[idx].pilot_id);
    if (product <= target) {
      result.status = SelectionResult::Status::Selected;
      break;
    }
  }
  result.predicted_failure = product;
  return result;
}

namespace detail {

inline std::vector<std::size_t> valley_members(std::span<const PilotCandidate> pool,
                                               const Valley& valley) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].age > valley.lo && pool[i].age <= valley.hi) members.push_back(i);
  }
  return members;
}

}  // namespace detail

// Walks the table's valleys in ascending redundancy and serves the task from
// the first one holding at least r candidates, drawn uniformly.
inline SelectionResult select_valley(std::span<const PilotCandidate> pool,
                                     const ValleyTable& table, Rng& rng) {
  SelectionResult result;
  for (const Valley& valley : table.valleys) {
    auto members = detail::valley_members(pool, valley);
    const auto r = static_cast<std::size_t>(valley.redundancy);
    if (members.size() < r) continue;
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t pick =
          i + static_cast<std::size_t>(rng.uniform_u64(members.size() - i));
      std::swap(members[i], members[pick]);
      result.pilot_ids.push_back(pool[members[i]].pilot_id);
    }
    result.status = SelectionResult::Status::Selected;
    result.valley_used = valley.redundancy;
    return result;
  }
  return result;
}

// Picks r pilots spread across the range of start times: the range is split
// into r equal sub-intervals (the last one closed), and picks cycle through
// the sub-intervals round-robin, skipping empty ones, drawing uniformly
// within each.
inline std::vector<std::size_t> spread_select(int redundancy,
                                              std::span<const PilotCandidate> pool,
                                              Rng& rng) {
  const auto r = static_cast<std::size_t>(redundancy);
  if (redundancy < 1) throw std::invalid_argument("redundancy must be >= 1");
  if (pool.size() < r) throw std::invalid_argument("fewer pilots than replicas");
  auto [lo_it, hi_it] = std::minmax_element(
      pool.begin(), pool.end(), [](const PilotCandidate& a, const PilotCandidate& b) {
        return a.start_time < b.start_time;
      });
  const std::int64_t t_min = lo_it->start_time;
  const std::int64_t span = hi_it->start_time - t_min;
  std::vector<std::vector<std::size_t>> buckets(r);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    std::size_t b = 0;
    if (span > 0) {
      b = std::min<std::size_t>(
          r - 1, static_cast<std::size_t>((pool[i].start_time - t_min) *
                                          static_cast<std::int64_t>(r) / span));
    }
    buckets[b].push_back(i);
  }
  std::vector<std::size_t> selected;
  selected.reserve(r);
  std::size_t idx = 0;
  while (selected.size() < r) {
    auto& bucket = buckets[idx];
    if (!bucket.empty()) {
      const std::size_t pick = static_cast<std::size_t>(rng.uniform_u64(bucket.size()));
      selected.push_back(bucket[pick]);
      bucket[pick] = bucket.back();
      bucket.pop_back();
    }
    idx = (idx + 1) % r;
  }
  return selected;
}

// Valley selection with the uniform draw replaced by the start-time spread.
inline SelectionResult select_spread(std::span<const PilotCandidate> pool,
                                     const ValleyTable& table, Rng& rng) {
  SelectionResult result;
  for (const Valley& valley : table.valleys) {
    const auto member_idx = detail::valley_members(pool, valley);
    const auto r = static_cast<std::size_t>(valley.redundancy);
    if (member_idx.size() < r) continue;
    std::vector<PilotCandidate> members;
    members.reserve(member_idx.size());
    for (const std::size_t i : member_idx) members.push_back(pool[i]);
    for (const std::size_t i : spread_select(valley.redundancy, members, rng)) {
      result.pilot_ids.push_back(members[i].pilot_id);
    }
    result.status = SelectionResult::Status::Selected;
    result.valley_used = valley.redundancy;
    return result;
  }
  return result;
}

// Drops valleys whose redundancy exceeds the cap. Tasks that no remaining
// valley can serve are held rather than given extra replicas.
inline ValleyTable apply_cap(const ValleyTable& table, int cap) {
  if (cap < 1) throw ConfigError("redundancy cap must be >= 1");
  ValleyTable out;
  out.availability = table.availability;
  out.lease = table.lease;
  for (const Valley& v : table.valleys) {
    if (v.redundancy <= cap) out.valleys.push_back(v);
  }
  return out;
}

}  // namespace pilotrep

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "pilotrep/errors.hpp"
#include "pilotrep/trace.hpp"

namespace pilotrep {

// Probability that a task fails within its lease, in [0,1].
struct FailureRate {
  double value = 0.0;

  FailureRate() = default;
  explicit FailureRate(double v) : value(v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("failure rate must be in [0,1]");
    }
  }
};

struct TaskRequest {
  double availability = 0.0;  // in (0,1)
  std::int64_t lease = 0;     // seconds, > 0
  std::optional<int> redundancy_cap;

  void validate() const {
    if (!(availability > 0.0 && availability < 1.0)) {
      throw std::invalid_argument("availability must be in (0,1)");
    }
    if (lease <= 0) throw std::invalid_argument("lease must be > 0");
    if (redundancy_cap && *redundancy_cap < 1) {
      throw std::invalid_argument("redundancy cap must be >= 1");
    }
  }
};

// Binned empirical lifetime histogram. Bin i covers lifetimes in
// (i*bin_width, (i+1)*bin_width]; a lifetime landing exactly on a boundary
// falls in the lower bin.
struct EmpiricalLifetimeDist {
  std::int64_t bin_width = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  // prefix[i] = sum of counts[0..i-1]
  std::vector<std::uint64_t> prefix;

  void rebuild_prefix() {
    prefix.assign(counts.size() + 1, 0);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      prefix[i + 1] = prefix[i] + counts[i];
    }
    total = prefix.back();
  }

  // Count in bins [lo_bin, hi_bin), clamped to the histogram range.
  std::uint64_t count_bins(std::int64_t lo_bin, std::int64_t hi_bin) const {
    const auto n = static_cast<std::int64_t>(counts.size());
    lo_bin = std::clamp<std::int64_t>(lo_bin, 0, n);
    hi_bin = std::clamp<std::int64_t>(hi_bin, 0, n);
    if (hi_bin <= lo_bin) return 0;
    return prefix[static_cast<std::size_t>(hi_bin)] -
           prefix[static_cast<std::size_t>(lo_bin)];
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["bin_width"] = bin_width;
    j["counts"] = counts;
    return j;
  }
};

inline EmpiricalLifetimeDist build_lifetime_dist(const TraceDataset& dataset,
                                                 std::int64_t bin_width) {
  if (dataset.records.empty()) {
    throw ValidationError("cannot build lifetime distribution from empty dataset");
  }
  if (bin_width <= 0) throw std::invalid_argument("bin_width must be > 0");
  EmpiricalLifetimeDist dist;
  dist.bin_width = bin_width;
  const std::int64_t max_life = dataset.max_lifetime();
  dist.counts.assign(static_cast<std::size_t>((max_life - 1) / bin_width + 1), 0);
  for (const auto& r : dataset.records) {
    const std::int64_t idx = (r.lifetime() - 1) / bin_width;
    ++dist.counts[static_cast<std::size_t>(idx)];
  }
  dist.rebuild_prefix();
  return dist;
}

// P(fail within `lease` | alive at `age`) from the binned histogram: the mass
// of bins fully contained in (age, age+lease] over the mass of bins at or
// beyond `age`. With bin_width 1 and integer times this is exact; otherwise
// the two bins straddling the interval ends bound the quantization error.
inline FailureRate conditional_failure_prob(const EmpiricalLifetimeDist& dist,
                                            std::int64_t age,
                                            std::int64_t lease) {
  if (age < 0) throw std::invalid_argument("age must be >= 0");
  if (lease < 0) throw std::invalid_argument("lease must be >= 0");
  const std::int64_t w = dist.bin_width;
  const std::int64_t first_tail_bin = (age + w - 1) / w;  // lowest bin with lo >= age
  const std::uint64_t survivors =
      dist.count_bins(first_tail_bin, static_cast<std::int64_t>(dist.counts.size()));
  if (survivors == 0) {
    throw NoSurvivorsError("no observed lifetime beyond age " + std::to_string(age));
  }
  const std::int64_t end_bin = (age + lease) / w;  // bins with hi <= age+lease
  const std::uint64_t failures = dist.count_bins(first_tail_bin, end_bin);
  return FailureRate(static_cast<double>(failures) /
                     static_cast<double>(survivors));
}

// Probability that every replica fails: the product of the per-replica rates.
// An empty replica set fails with certainty.
inline FailureRate combined_failure(std::span<const FailureRate> rates) {
  double product = 1.0;
  for (const FailureRate& r : rates) product *= r.value;
  return FailureRate(product);
}

// Smallest m with f^m <= 1 - availability.
inline int min_replicas(FailureRate f, double availability) {
  if (!(availability > 0.0 && availability < 1.0)) {
    throw std::invalid_argument("availability must be in (0,1)");
  }
  if (f.value == 0.0) return 1;
  if (f.value >= 1.0) {
    throw UnsatisfiableError("per-replica failure rate 1 cannot reach any target");
  }
  const double target = 1.0 - availability;
  int m = std::max(1, static_cast<int>(std::ceil(std::log(target) /
                                                 std::log(f.value))));
  while (m > 1 && std::pow(f.value, m - 1) <= target) --m;
  while (std::pow(f.value, m) > target) ++m;
  return m;
}

}  // namespace pilotrep

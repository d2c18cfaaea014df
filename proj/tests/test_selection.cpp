#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "pilotrep/selection.hpp"

using namespace pilotrep;

namespace {

PilotCandidate cand(const std::string& id, std::int64_t start, std::int64_t age,
                    std::optional<double> rate = std::nullopt) {
  PilotCandidate c;
  c.pilot_id = id;
  c.start_time = start;
  c.age = age;
  c.failure_rate = rate;
  return c;
}

std::vector<PilotCandidate> uniform_pool(std::size_t n, double rate) {
  std::vector<PilotCandidate> pool;
  for (std::size_t i = 0; i < n; ++i) {
    pool.push_back(cand("p" + std::to_string(i), static_cast<std::int64_t>(i),
                        100, rate));
  }
  return pool;
}

// rates in these tests come from candidate overrides, never from the histogram
EmpiricalLifetimeDist dummy_dist() {
  EmpiricalLifetimeDist dist;
  dist.bin_width = 1;
  dist.counts = {1};
  dist.rebuild_prefix();
  return dist;
}

bool all_distinct(const std::vector<std::string>& ids) {
  const std::set<std::string> s(ids.begin(), ids.end());
  return s.size() == ids.size();
}

ValleyTable two_valley_table() {
  ValleyTable table;
  table.availability = 0.95;
  table.lease = 14'400;
  table.valleys = {{2, 1'000, 2'000, false}, {3, 500, 3'000, false}};
  return table;
}

}  // namespace

TEST_CASE("random selection stops once the product reaches the target") {
  const auto dist = dummy_dist();
  Rng rng(1);

  const auto one = std::vector{cand("a", 0, 10, 0.0)};
  auto res = select_random(one, 0.99, dist, 100, rng);
  CHECK(res.status == SelectionResult::Status::Selected);
  CHECK(res.pilot_ids == std::vector<std::string>{"a"});
  CHECK(*res.predicted_failure == 0.0);

  const auto doomed = uniform_pool(4, 1.0);
  res = select_random(doomed, 0.5, dist, 100, rng);
  CHECK(res.status == SelectionResult::Status::NoSolution);
  CHECK(res.pilot_ids.size() == 4);
  CHECK(*res.predicted_failure == 1.0);

  // 0.1^3 = 0.001 <= 1 - 0.999 exactly, regardless of draw order
  const auto even = uniform_pool(5, 0.1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r2(seed);
    res = select_random(even, 0.999, dist, 100, r2);
    CHECK(res.status == SelectionResult::Status::Selected);
    CHECK(res.pilot_ids.size() == 3);
    CHECK(all_distinct(res.pilot_ids));
    CHECK(*res.predicted_failure == Catch::Approx(0.001));
  }
}

TEST_CASE("random selection is deterministic in the seed") {
  const auto dist = dummy_dist();
  std::vector<PilotCandidate> pool;
  Rng mk(3);
  for (int i = 0; i < 30; ++i) {
    pool.push_back(cand("p" + std::to_string(i), i, 50, 0.3 + 0.6 * mk.uniform01()));
  }
  Rng a(7), b(7), c(8);
  const auto ra = select_random(pool, 0.99, dist, 100, a);
  const auto rb = select_random(pool, 0.99, dist, 100, b);
  const auto rc = select_random(pool, 0.99, dist, 100, c);
  CHECK(ra.pilot_ids == rb.pilot_ids);
  CHECK(ra.pilot_ids != rc.pilot_ids);
}

TEST_CASE("sorted selection takes the most reliable pilots first") {
  const auto dist = dummy_dist();

  const auto two = std::vector{cand("bad", 0, 10, 0.5), cand("good", 5, 10, 0.01)};
  auto res = select_sorted(two, 0.95, dist, 100);
  CHECK(res.status == SelectionResult::Status::Selected);
  CHECK(res.pilot_ids == std::vector<std::string>{"good"});

  const auto triple = uniform_pool(3, 0.3);
  res = select_sorted(triple, 0.99, dist, 100);
  CHECK(res.status == SelectionResult::Status::NoSolution);
  CHECK(res.pilot_ids.size() == 3);
  CHECK(*res.predicted_failure == Catch::Approx(0.027));

  res = select_sorted({}, 0.9, dist, 100);
  CHECK(res.status == SelectionResult::Status::NoSolution);
  CHECK(res.pilot_ids.empty());
  CHECK(*res.predicted_failure == 1.0);
}

TEST_CASE("sorted ties break by start time then pilot id") {
  const auto dist = dummy_dist();
  const auto pool = std::vector{cand("z", 100, 10, 0.4), cand("a", 100, 10, 0.4),
                                cand("m", 50, 10, 0.4)};
  const auto res = select_sorted(pool, 0.999, dist, 100);
  REQUIRE(res.pilot_ids.size() == 3);  // 0.4^3 = 0.064 > 0.001 -> NoSolution
  CHECK(res.pilot_ids == std::vector<std::string>{"m", "a", "z"});
}

TEST_CASE("sorted count never exceeds random count when both succeed") {
  const auto dist = dummy_dist();
  Rng mk(11);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<PilotCandidate> pool;
    const std::size_t n = 2 + mk.uniform_u64(12);
    for (std::size_t i = 0; i < n; ++i) {
      pool.push_back(cand("p" + std::to_string(i),
                          static_cast<std::int64_t>(i), 10, mk.uniform01()));
    }
    const double availability = 0.5 + 0.49 * mk.uniform01();
    Rng rsel(mk.next_u64());
    const auto random_res = select_random(pool, availability, dist, 100, rsel);
    const auto sorted_res = select_sorted(pool, availability, dist, 100);
    if (random_res.status == SelectionResult::Status::Selected) {
      // sorted succeeds whenever random does, with no more replicas
      REQUIRE(sorted_res.status == SelectionResult::Status::Selected);
      CHECK(sorted_res.pilot_ids.size() <= random_res.pilot_ids.size());
    }
    for (const auto* res : {&random_res, &sorted_res}) {
      CHECK(all_distinct(res->pilot_ids));
      if (res->status == SelectionResult::Status::Selected) {
        CHECK(*res->predicted_failure <= 1.0 - availability);
      }
    }
  }
}

TEST_CASE("candidate rates fall back to the distribution and to certain failure") {
  EmpiricalLifetimeDist dist;
  dist.bin_width = 1;
  dist.counts.assign(100, 1);  // uniform over (0,100]
  dist.rebuild_prefix();
  const auto pool = std::vector{
      cand("override", 0, 10, 0.25),
      cand("derived", 0, 0),    // P(L <= 50) = 0.5
      cand("ancient", 0, 200),  // beyond every observed lifetime
  };
  const auto rates = candidate_failure_rates(pool, dist, 50);
  REQUIRE(rates.size() == 3);
  CHECK(rates[0] == 0.25);
  CHECK(rates[1] == 0.5);
  CHECK(rates[2] == 1.0);
}

TEST_CASE("valley selection serves from the first valley with enough pilots") {
  Rng rng(2);
  const auto table = two_valley_table();

  std::vector<PilotCandidate> pool;
  for (int i = 0; i < 5; ++i) {
    pool.push_back(cand("v1_" + std::to_string(i), 0, 1'500));
  }
  auto res = select_valley(pool, table, rng);
  CHECK(res.status == SelectionResult::Status::Selected);
  CHECK(res.valley_used == 2);
  REQUIRE(res.pilot_ids.size() == 2);
  CHECK(all_distinct(res.pilot_ids));

  // only one candidate in the first valley, three in the second
  pool = {cand("a", 0, 1'500), cand("b", 0, 700), cand("c", 0, 2'500),
          cand("d", 0, 2'800)};
  res = select_valley(pool, table, rng);
  CHECK(res.status == SelectionResult::Status::Selected);
  CHECK(res.valley_used == 3);
  REQUIRE(res.pilot_ids.size() == 3);
  CHECK(all_distinct(res.pilot_ids));

  // all pilots older than every valley
  pool = {cand("x", 0, 5'000), cand("y", 0, 6'000), cand("z", 0, 7'000)};
  res = select_valley(pool, table, rng);
  CHECK(res.status == SelectionResult::Status::NoSolution);
  CHECK(res.pilot_ids.empty());
  CHECK_FALSE(res.valley_used.has_value());
}

TEST_CASE("valley membership bounds are lo-exclusive hi-inclusive") {
  Rng rng(3);
  ValleyTable table;
  table.availability = 0.9;
  table.lease = 100;
  table.valleys = {{1, 1'000, 2'000, false}};

  auto res = select_valley(std::vector{cand("at_lo", 0, 1'000)}, table, rng);
  CHECK(res.status == SelectionResult::Status::NoSolution);

  res = select_valley(std::vector{cand("past_lo", 0, 1'001)}, table, rng);
  CHECK(res.status == SelectionResult::Status::Selected);

  res = select_valley(std::vector{cand("at_hi", 0, 2'000)}, table, rng);
  CHECK(res.status == SelectionResult::Status::Selected);

  res = select_valley(std::vector{cand("past_hi", 0, 2'001)}, table, rng);
  CHECK(res.status == SelectionResult::Status::NoSolution);
}

TEST_CASE("spread selection honors its documented shapes") {
  Rng rng(4);

  // r=1: one pick from anywhere
  auto pool = std::vector{cand("a", 0, 1), cand("b", 900, 1)};
  auto picked = spread_select(1, pool, rng);
  CHECK(picked.size() == 1);

  // r=2 with two start-time clusters: one pilot from each
  pool = {cand("e1", 0, 1), cand("e2", 10, 1), cand("l1", 1'000, 1),
          cand("l2", 1'010, 1)};
  for (int trial = 0; trial < 25; ++trial) {
    picked = spread_select(2, pool, rng);
    REQUIRE(picked.size() == 2);
    std::set<bool> sides;
    for (const auto i : picked) sides.insert(pool[i].start_time >= 500);
    CHECK(sides.size() == 2);
  }

  // degenerate span: everyone shares one start time, still r distinct picks
  pool = {cand("s1", 42, 1), cand("s2", 42, 1), cand("s3", 42, 1),
          cand("s4", 42, 1)};
  picked = spread_select(3, pool, rng);
  REQUIRE(picked.size() == 3);
  CHECK(std::set<std::size_t>(picked.begin(), picked.end()).size() == 3);

  CHECK_THROWS_AS(spread_select(5, pool, rng), std::invalid_argument);
  CHECK_THROWS_AS(spread_select(0, pool, rng), std::invalid_argument);
}

TEST_CASE("spread picks one per sub-interval when all are occupied") {
  Rng rng(5);
  // starts 0,100,...,900 over span (0,900]; r=5 buckets of 180 hold 2 each
  std::vector<PilotCandidate> pool;
  for (int i = 0; i < 10; ++i) {
    pool.push_back(cand("p" + std::to_string(i), i * 100, 1));
  }
  for (int trial = 0; trial < 25; ++trial) {
    const auto picked = spread_select(5, pool, rng);
    REQUIRE(picked.size() == 5);
    std::set<std::size_t> buckets;
    for (const auto i : picked) {
      buckets.insert(static_cast<std::size_t>(
          std::min<std::int64_t>(4, pool[i].start_time * 5 / 900)));
    }
    CHECK(buckets.size() == 5);
  }
}

TEST_CASE("spread-valley selection mirrors valley selection") {
  Rng rng(6);
  const auto table = two_valley_table();

  std::vector<PilotCandidate> pool;
  for (int i = 0; i < 6; ++i) {
    pool.push_back(cand("p" + std::to_string(i), i * 500, 1'200 + i * 100));
  }
  auto res = select_spread(pool, table, rng);
  CHECK(res.status == SelectionResult::Status::Selected);
  CHECK(res.valley_used == 2);
  REQUIRE(res.pilot_ids.size() == 2);
  CHECK(all_distinct(res.pilot_ids));
  for (const auto& id : res.pilot_ids) {
    const auto it = std::find_if(pool.begin(), pool.end(), [&](const auto& c) {
      return c.pilot_id == id;
    });
    REQUIRE(it != pool.end());
    CHECK(it->age > 1'000);
    CHECK(it->age <= 2'000);
  }

  res = select_spread(std::vector{cand("old", 0, 9'000)}, table, rng);
  CHECK(res.status == SelectionResult::Status::NoSolution);
}

TEST_CASE("redundancy caps drop the deeper valleys") {
  ValleyTable table;
  table.availability = 0.99;
  table.lease = 25'200;
  table.valleys = {{4, 111'000, 117'000, false}, {6, 84'000, 117'000, false},
                   {8, 66'000, 120'000, false},  {9, 21'000, 120'000, false},
                   {10, 9'000, 120'000, false},  {12, 0, 123'000, false}};

  const auto capped = apply_cap(table, 6);
  REQUIRE(capped.valleys.size() == 2);
  CHECK(capped.valleys[0].redundancy == 4);
  CHECK(capped.valleys[1].redundancy == 6);
  CHECK(capped.availability == table.availability);
  CHECK(capped.lease == table.lease);

  CHECK(apply_cap(table, 12).valleys.size() == 6);
  CHECK(apply_cap(table, 100).valleys.size() == 6);
  CHECK(apply_cap(table, 1).valleys.empty());
  CHECK_THROWS_AS(apply_cap(table, 0), ConfigError);

  // an emptied table can serve nothing; callers report Held
  Rng rng(9);
  const auto res =
      select_valley(std::vector{cand("a", 0, 100'000)}, apply_cap(table, 1), rng);
  CHECK(res.status == SelectionResult::Status::NoSolution);
}

TEST_CASE("selectors validate the availability target") {
  const auto dist = dummy_dist();
  Rng rng(1);
  const auto pool = uniform_pool(3, 0.5);
  CHECK_THROWS_AS(select_random(pool, 1.0, dist, 100, rng), ConfigError);
  CHECK_THROWS_AS(select_sorted(pool, 0.0, dist, 100), ConfigError);
}

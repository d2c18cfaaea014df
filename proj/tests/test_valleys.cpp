#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "pilotrep/rng.hpp"
#include "pilotrep/synthetic.hpp"
#include "pilotrep/valleys.hpp"

using namespace pilotrep;

namespace {

TraceDataset fixed_lifetime_trace(std::size_t n, std::int64_t lifetime) {
  TraceDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    PilotRecord rec;
    rec.pilot_id = "p" + std::to_string(i);
    rec.site_id = "s0";
    rec.start_time = 0;
    rec.end_time = lifetime;
    ds.records.push_back(rec);
  }
  ds.sort_records();
  return ds;
}

// rates.size() intervals of the given width; NaN marks an undefined interval
FailureRateCurve curve_from_rates(int redundancy,
                                  const std::vector<double>& rates,
                                  std::int64_t width = 100) {
  FailureRateCurve curve;
  curve.lease = 1'000;
  curve.redundancy = redundancy;
  curve.interval_width = width;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    CurvePoint pt;
    pt.age_lo = static_cast<std::int64_t>(i) * width;
    pt.age_hi = pt.age_lo + width;
    if (std::isnan(rates[i])) {
      pt.trials = 0;
    } else {
      pt.trials = 100;
      pt.failure_rate = rates[i];
    }
    curve.points.push_back(pt);
  }
  return curve;
}

bool points_equal(const CurvePoint& a, const CurvePoint& b) {
  if (a.age_lo != b.age_lo || a.age_hi != b.age_hi || a.trials != b.trials) {
    return false;
  }
  if (a.defined() != b.defined()) return false;
  return !a.defined() || a.failure_rate == b.failure_rate;
}

const double nan_ = std::numeric_limits<double>::quiet_NaN();

}  // namespace

TEST_CASE("pilots that outlive the lease give a zero failure rate") {
  const auto ds = fixed_lifetime_trace(50, 10'000);
  CurveParams params;
  params.interval_width = 8'000;
  params.cadence = 500;
  params.seed = 1;
  const auto curve = compute_failure_curve(ds, 1'000, 1, params);
  REQUIRE(curve.points.size() == 2);
  CHECK(curve.points[0].age_lo == 0);
  CHECK(curve.points[0].age_hi == 8'000);
  REQUIRE(curve.points[0].defined());
  CHECK(curve.points[0].failure_rate == 0.0);
}

TEST_CASE("pilots that die within the lease give a unit failure rate") {
  const auto ds = fixed_lifetime_trace(50, 10'000);
  CurveParams params;
  params.interval_width = 500;
  params.cadence = 100;
  params.seed = 1;
  const auto curve = compute_failure_curve(ds, 1'000, 1, params);
  REQUIRE(curve.points.size() == 20);
  const auto& last = curve.points[19];
  CHECK(last.age_lo == 9'500);
  CHECK(last.age_hi == 10'000);
  REQUIRE(last.defined());
  CHECK(last.failure_rate == 1.0);
}

TEST_CASE("alive pools use strict age and end bounds") {
  TraceDataset ds;
  PilotRecord rec;
  rec.pilot_id = "p0";
  rec.site_id = "s0";
  rec.start_time = 100;
  rec.end_time = 200;
  ds.records.push_back(rec);
  CurveParams params;
  params.interval_width = 60;
  params.cadence = 50;
  const auto ws = detail::build_curve_workspace(ds, params);
  REQUIRE(ws.num_samples == 2);  // t = 100, 150
  REQUIRE(ws.num_intervals == 2);
  // at t=100 the pilot has age 0 (no interval); at t=150 age 50 -> (0,60]
  CHECK(ws.pools[0][0].empty());
  REQUIRE(ws.pools[0][1].size() == 1);
  CHECK(ws.pools[0][1][0] == 200);
  CHECK(ws.pools[1][0].empty());
  CHECK(ws.pools[1][1].empty());
}

TEST_CASE("empty dataset and bad parameters are rejected") {
  CurveParams params;
  CHECK_THROWS_AS(compute_failure_curve(TraceDataset{}, 100, 1, params),
                  ValidationError);
  const auto ds = fixed_lifetime_trace(3, 1'000);
  params.cadence = 0;
  CHECK_THROWS_AS(compute_failure_curve(ds, 100, 1, params), ConfigError);
  params.cadence = 100;
  CHECK_THROWS_AS(compute_failure_curve(ds, 0, 1, params), ConfigError);
  CHECK_THROWS_AS(compute_failure_curve(ds, 100, 0, params), ConfigError);
  CHECK_THROWS_AS(compute_curve_family(ds, 100, 0, params), ConfigError);
}

TEST_CASE("higher redundancy never raises the curve beyond noise") {
  SyntheticTraceSpec spec;
  spec.count = 5'000;
  spec.seed = 31;
  spec.mixture.push_back({"johnson_sb", 0.45, 0.0, 30'000.0, 1.2, 1.1});
  spec.mixture.push_back({"johnson_sb", 0.55, 136'800.0, 7'200.0, 0.0, 1.0});
  const auto ds = generate_synthetic(spec);
  CurveParams params;
  params.seed = 13;
  const auto family = compute_curve_family(ds, 14'400, 3, params);
  REQUIRE(family.curves.size() == 3);
  for (std::size_t r = 1; r < family.curves.size(); ++r) {
    const auto& lower = family.curves[r - 1];
    const auto& higher = family.curves[r];
    for (std::size_t i = 0; i < lower.points.size(); ++i) {
      if (!lower.points[i].defined() || !higher.points[i].defined()) continue;
      const double tol =
          3.0 * std::sqrt(0.25 / static_cast<double>(
                                     std::min(lower.points[i].trials,
                                              higher.points[i].trials)));
      CHECK(higher.points[i].failure_rate <=
            lower.points[i].failure_rate + tol);
    }
  }
}

TEST_CASE("a curve is identical alone or inside a family") {
  const auto ds = fixed_lifetime_trace(40, 9'000);
  CurveParams params;
  params.interval_width = 2'000;
  params.cadence = 700;
  params.seed = 99;
  const auto family = compute_curve_family(ds, 3'000, 3, params);
  const auto alone = compute_failure_curve(ds, 3'000, 2, params);
  REQUIRE(family.curves[1].points.size() == alone.points.size());
  for (std::size_t i = 0; i < alone.points.size(); ++i) {
    CHECK(points_equal(family.curves[1].points[i], alone.points[i]));
  }
}

TEST_CASE("multithreaded curve computation matches single-threaded") {
  const auto ds = fixed_lifetime_trace(60, 20'000);
  CurveParams params;
  params.interval_width = 1'000;
  params.cadence = 300;
  params.seed = 7;
  const auto single = compute_failure_curve(ds, 2'000, 2, params);
  params.threads = 4;
  const auto multi = compute_failure_curve(ds, 2'000, 2, params);
  REQUIRE(single.points.size() == multi.points.size());
  for (std::size_t i = 0; i < single.points.size(); ++i) {
    CHECK(points_equal(single.points[i], multi.points[i]));
  }
}

TEST_CASE("an everywhere-good curve yields one full-range valley") {
  const auto curve = curve_from_rates(1, std::vector<double>(8, 0.0));
  const auto table =
      determine_valleys(std::vector<FailureRateCurve>{curve}, 0.95, 136'800);
  REQUIRE(table.valleys.size() == 1);
  CHECK(table.valleys[0] == Valley{1, 0, 800, false});
  CHECK(table.lease == 1'000);
  CHECK(table.availability == 0.95);
}

TEST_CASE("valley picks the longest run, earliest on ties") {
  // threshold 0.05: runs {1,2} and {4,5} tie, earliest wins
  const auto tie = curve_from_rates(1, {0.9, 0.0, 0.01, 0.9, 0.0, 0.02, 0.9});
  auto table = determine_valleys(std::vector{tie}, 0.95, 136'800);
  REQUIRE(table.valleys.size() == 1);
  CHECK(table.valleys[0] == Valley{1, 100, 300, false});

  // later but longer run wins
  const auto longer = curve_from_rates(1, {0.0, 0.9, 0.0, 0.0, 0.0, 0.9});
  table = determine_valleys(std::vector{longer}, 0.95, 136'800);
  REQUIRE(table.valleys.size() == 1);
  CHECK(table.valleys[0] == Valley{1, 200, 500, false});

  // undefined intervals break runs
  const auto gap = curve_from_rates(1, {0.0, nan_, 0.0});
  table = determine_valleys(std::vector{gap}, 0.95, 136'800);
  REQUIRE(table.valleys.size() == 1);
  CHECK(table.valleys[0] == Valley{1, 0, 100, false});

  // boundary: rate exactly 1 - availability qualifies
  const auto boundary = curve_from_rates(1, {0.9, 0.05, 0.9});
  table = determine_valleys(std::vector{boundary}, 0.95, 136'800);
  REQUIRE(table.valleys.size() == 1);
  CHECK(table.valleys[0] == Valley{1, 100, 200, false});
}

TEST_CASE("valleys widen to contain every lower level") {
  const auto r1 = curve_from_rates(1, {0.9, 0.9, 0.0, 0.9, 0.9, 0.9});
  const auto r2 = curve_from_rates(2, {0.9, 0.9, 0.9, 0.0, 0.0, 0.9});
  const auto table = determine_valleys(std::vector{r1, r2}, 0.95, 136'800);
  REQUIRE(table.valleys.size() == 2);
  CHECK(table.valleys[0] == Valley{1, 200, 300, false});
  // natural run (300,500] widens left to contain (200,300]
  CHECK(table.valleys[1] == Valley{2, 200, 500, true});
  CHECK(check_nesting(table));
}

TEST_CASE("construction stops once a valley reaches full coverage") {
  const auto r1 = curve_from_rates(1, {0.0, 0.0, 0.0, 0.0});
  const auto r2 = curve_from_rates(2, {0.0, 0.0, 0.0, 0.0});
  // retire time inside the defined range caps the coverage target
  const auto table = determine_valleys(std::vector{r1, r2}, 0.9, 350);
  REQUIRE(table.valleys.size() == 1);
  CHECK(table.valleys[0].redundancy == 1);
}

TEST_CASE("levels without qualifying intervals are skipped") {
  const auto r1 = curve_from_rates(1, {0.9, 0.9, 0.9});
  const auto r2 = curve_from_rates(2, {0.9, 0.0, 0.9});
  const auto table = determine_valleys(std::vector{r1, r2}, 0.95, 136'800);
  REQUIRE(table.valleys.size() == 1);
  CHECK(table.valleys[0].redundancy == 2);
  CHECK(table.valleys[0] == Valley{2, 100, 200, false});

  const auto none = determine_valleys(std::vector{r1}, 0.95, 136'800);
  CHECK(none.valleys.empty());
  CHECK(determine_valleys(std::vector<FailureRateCurve>{}, 0.5, 100)
            .valleys.empty());
}

TEST_CASE("valley construction validates its inputs") {
  const auto r1 = curve_from_rates(1, {0.0});
  CHECK_THROWS_AS(determine_valleys(std::vector{r1}, 0.0, 100), ConfigError);
  CHECK_THROWS_AS(determine_valleys(std::vector{r1}, 1.0, 100), ConfigError);

  auto r2 = curve_from_rates(2, {0.0});
  CHECK_THROWS_AS(determine_valleys(std::vector{r2}, 0.9, 100), ConfigError);

  auto mismatched = curve_from_rates(2, {0.0}, 200);
  CHECK_THROWS_AS(determine_valleys(std::vector{r1, mismatched}, 0.9, 100),
                  ConfigError);
}

TEST_CASE("table serialization is byte-stable") {
  ValleyTable table;
  table.availability = 0.95;
  table.lease = 14'400;
  table.valleys = {{1, 120'000, 123'000, false},
                   {2, 33'000, 126'000, false},
                   {3, 3'000, 126'000, false},
                   {4, 0, 126'000, false}};
  const std::string expected =
      R"({"availability":0.95,"lease_s":14400,"valleys":[)"
      R"({"r":1,"lo_s":120000,"hi_s":123000,"widened":false},)"
      R"({"r":2,"lo_s":33000,"hi_s":126000,"widened":false},)"
      R"({"r":3,"lo_s":3000,"hi_s":126000,"widened":false},)"
      R"({"r":4,"lo_s":0,"hi_s":126000,"widened":false}]})";
  CHECK(serialize_table(table) == expected);
  CHECK(check_nesting(table));

  const auto back = parse_table(nlohmann::json::parse(serialize_table(table)));
  CHECK(serialize_table(back) == expected);

  ValleyTable empty;
  empty.availability = 0.5;
  empty.lease = 60;
  CHECK(serialize_table(empty) ==
        R"({"availability":0.5,"lease_s":60,"valleys":[]})");
}

TEST_CASE("random tables round-trip through json") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    ValleyTable table;
    table.availability = 0.5 + 0.49 * rng.uniform01();
    table.lease = rng.uniform_i64(1, 30'000);
    int r = 0;
    const int n = static_cast<int>(rng.uniform_u64(5));
    for (int v = 0; v < n; ++v) {
      r += 1 + static_cast<int>(rng.uniform_u64(3));
      const std::int64_t lo = rng.uniform_i64(0, 100'000);
      table.valleys.push_back(
          {r, lo, lo + rng.uniform_i64(1, 50'000), rng.uniform01() < 0.5});
    }
    const auto back = parse_table(nlohmann::json::parse(serialize_table(table)));
    CHECK(back.availability == table.availability);
    CHECK(back.lease == table.lease);
    CHECK(back.valleys == table.valleys);
  }
}

TEST_CASE("malformed tables are rejected") {
  CHECK_THROWS_AS(parse_table(nlohmann::json::parse(R"({"lease_s":1})")),
                  ParseError);
  CHECK_THROWS_AS(parse_table(nlohmann::json::parse(
                      R"({"availability":1.5,"lease_s":1,"valleys":[]})")),
                  ValidationError);
  CHECK_THROWS_AS(parse_table(nlohmann::json::parse(
                      R"({"availability":0.9,"lease_s":0,"valleys":[]})")),
                  ValidationError);
  CHECK_THROWS_AS(
      parse_table(nlohmann::json::parse(
          R"({"availability":0.9,"lease_s":1,"valleys":[)"
          R"({"r":1,"lo_s":5,"hi_s":5,"widened":false}]})")),
      ValidationError);
  CHECK_THROWS_AS(
      parse_table(nlohmann::json::parse(
          R"({"availability":0.9,"lease_s":1,"valleys":[)"
          R"({"r":2,"lo_s":0,"hi_s":5,"widened":false},)"
          R"({"r":2,"lo_s":0,"hi_s":9,"widened":false}]})")),
      ValidationError);
}

TEST_CASE("curve csv lists one interval per row") {
  auto curve = curve_from_rates(1, {0.25, nan_});
  curve.points[0].trials = 40;
  std::ostringstream out;
  write_curve_csv(curve, out);
  CHECK(out.str() ==
        "age_lo_s,age_hi_s,failure_rate,trials\n"
        "0,100,0.25,40\n"
        "100,200,nan,0\n");
}

TEST_CASE("family csv round-trips losslessly") {
  const auto ds = fixed_lifetime_trace(30, 7'000);
  CurveParams params;
  params.interval_width = 1'500;
  params.cadence = 400;
  params.seed = 3;
  auto family = compute_curve_family(ds, 2'000, 3, params);
  family.retire_time = 6'000;

  std::ostringstream out;
  write_family_csv(family, out);
  std::istringstream in(out.str());
  const auto back = parse_family_csv(in, "mem");

  CHECK(back.lease == family.lease);
  CHECK(back.interval_width == family.interval_width);
  CHECK(back.retire_time == family.retire_time);
  REQUIRE(back.curves.size() == family.curves.size());
  for (std::size_t r = 0; r < family.curves.size(); ++r) {
    CHECK(back.curves[r].redundancy == family.curves[r].redundancy);
    CHECK(back.curves[r].lease == family.lease);
    REQUIRE(back.curves[r].points.size() == family.curves[r].points.size());
    for (std::size_t i = 0; i < family.curves[r].points.size(); ++i) {
      CHECK(points_equal(back.curves[r].points[i], family.curves[r].points[i]));
    }
  }
}

TEST_CASE("family csv parser rejects malformed files") {
  const std::string meta = "# lease_s=100 interval_width_s=50 retire_s=900\n";
  const std::string header = "r,age_lo_s,age_hi_s,failure_rate,trials\n";

  const auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_family_csv(in, "mem");
  };

  CHECK_THROWS_AS(parse(header + "1,0,50,0.5,10\n"), ParseError);  // no metadata
  CHECK_THROWS_AS(parse(meta + "1,0,50,0.5,10\n"), ParseError);    // no header
  CHECK_THROWS_AS(parse(meta + header + "1,0,50,0.5\n"), ParseError);
  CHECK_THROWS_AS(parse(meta + header + "1,50,100,0.5,10\n"),
                  ParseError);  // first interval must start at 0
  CHECK_THROWS_AS(parse(meta + header + "1,0,50,0.5,10\n1,100,150,0.5,10\n"),
                  ParseError);  // gap
  CHECK_THROWS_AS(parse(meta + header + "2,0,50,0.5,10\n"),
                  ParseError);  // starts at r=2
  CHECK_THROWS_AS(parse(meta + header + "1,0,50,0.5,10\n3,0,50,0.5,10\n"),
                  ParseError);  // skips r=2
  CHECK_NOTHROW(parse(meta + header + "1,0,50,0.5,10\n2,0,50,0.4,10\n"));
}

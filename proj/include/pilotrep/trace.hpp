#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "pilotrep/errors.hpp"

namespace pilotrep {

// Soft and hard pilot deadlines, seconds. A pilot past the retire time keeps
// running its current task; at the kill time it is terminated unconditionally.
inline constexpr std::int64_t kDefaultRetireTime = 136'800;  // 38 h
inline constexpr std::int64_t kDefaultKillTime = 144'000;    // 40 h

enum class TerminationClass { Retired, Killed, Preempted, Network, Idle, Other };

inline constexpr const char* to_string(TerminationClass c) {
  switch (c) {
    case TerminationClass::Retired:   return "retired";
    case TerminationClass::Killed:    return "killed";
    case TerminationClass::Preempted: return "preempted";
    case TerminationClass::Network:   return "network";
    case TerminationClass::Idle:      return "idle";
    case TerminationClass::Other:     return "other";
  }
  return "other";
}

inline std::optional<TerminationClass> termination_class_from_string(
    std::string_view s) {
  if (s == "retired")   return TerminationClass::Retired;
  if (s == "killed")    return TerminationClass::Killed;
  if (s == "preempted") return TerminationClass::Preempted;
  if (s == "network")   return TerminationClass::Network;
  if (s == "idle")      return TerminationClass::Idle;
  if (s == "other")     return TerminationClass::Other;
  return std::nullopt;
}

struct PilotRecord {
  std::string pilot_id;
  std::string site_id;
  std::int64_t start_time = 0;  // epoch seconds
  std::int64_t end_time = 0;    // epoch seconds, > start_time
  TerminationClass termination_class = TerminationClass::Other;

  std::int64_t lifetime() const { return end_time - start_time; }

  bool operator==(const PilotRecord&) const = default;
};

// Immutable after construction; records sorted by (start_time, pilot_id).
struct TraceDataset {
  std::vector<PilotRecord> records;
  std::int64_t retire_time = kDefaultRetireTime;
  std::int64_t kill_time = kDefaultKillTime;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }

  std::int64_t span_begin() const {
    return records.empty() ? 0 : records.front().start_time;
  }
  std::int64_t span_end() const {
    std::int64_t e = 0;
    for (const auto& r : records) e = std::max(e, r.end_time);
    return e;
  }
  std::int64_t max_lifetime() const {
    std::int64_t m = 0;
    for (const auto& r : records) m = std::max(m, r.lifetime());
    return m;
  }

  void sort_records() {
    std::sort(records.begin(), records.end(),
              [](const PilotRecord& a, const PilotRecord& b) {
                if (a.start_time != b.start_time) return a.start_time < b.start_time;
                return a.pilot_id < b.pilot_id;
              });
  }
};

enum class Expectation { Expected, Unexpected };

// A pilot that reaches the retire time terminated through its normal life
// cycle; anything shorter died of an unexpected failure. The boundary
// lifetime == retire_time counts as expected.
inline Expectation classify_expected(const PilotRecord& record,
                                     std::int64_t retire_time) {
  return record.lifetime() >= retire_time ? Expectation::Expected
                                          : Expectation::Unexpected;
}

namespace detail {

inline std::int64_t parse_int64(std::string_view field, std::size_t line_no,
                                const char* what) {
  std::int64_t value = 0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what +
                     " '" + std::string(field) + "'");
  }
  return value;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

// `# retire_time=<s> kill_time=<s>` comment; unknown keys ignored.
inline void parse_header_comment(std::string_view line, TraceDataset& ds,
                                 std::size_t line_no) {
  std::size_t pos = 1;  // skip '#'
  while (pos < line.size()) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    const std::size_t end = line.find(' ', pos);
    const std::string_view token =
        line.substr(pos, end == std::string_view::npos ? end : end - pos);
    if (token.empty()) break;
    const std::size_t eq = token.find('=');
    if (eq != std::string_view::npos) {
      const std::string_view key = token.substr(0, eq);
      const std::string_view val = token.substr(eq + 1);
      if (key == "retire_time") ds.retire_time = parse_int64(val, line_no, "retire_time");
      if (key == "kill_time") ds.kill_time = parse_int64(val, line_no, "kill_time");
    }
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
}

}  // namespace detail

inline constexpr std::string_view kTraceCsvHeader =
    "pilot_id,site_id,start_time,end_time,termination_class";

inline TraceDataset parse_trace(std::istream& in,
                                std::string_view name = "<stream>") {
  TraceDataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      detail::parse_header_comment(line, ds, line_no);
      continue;
    }
    if (!saw_header) {
      if (line != kTraceCsvHeader) {
        throw ParseError(std::string(name) + " line " + std::to_string(line_no) +
                         ": expected header '" + std::string(kTraceCsvHeader) +
                         "'");
      }
      saw_header = true;
      continue;
    }
    const auto fields = detail::split_csv(line);
    if (fields.size() != 5) {
      throw ParseError(std::string(name) + " line " + std::to_string(line_no) +
                       ": expected 5 fields, got " +
                       std::to_string(fields.size()));
    }
    PilotRecord rec;
    rec.pilot_id = std::string(fields[0]);
    rec.site_id = std::string(fields[1]);
    rec.start_time = detail::parse_int64(fields[2], line_no, "start_time");
    rec.end_time = detail::parse_int64(fields[3], line_no, "end_time");
    const auto cls = termination_class_from_string(fields[4]);
    if (!cls) {
      throw ParseError(std::string(name) + " line " + std::to_string(line_no) +
                       ": unknown termination_class '" + std::string(fields[4]) +
                       "'");
    }
    rec.termination_class = *cls;
    if (rec.end_time <= rec.start_time) {
      throw ValidationError("pilot '" + rec.pilot_id +
                            "': end_time must exceed start_time");
    }
    ds.records.push_back(std::move(rec));
  }
  if (!saw_header) {
    throw ParseError(std::string(name) + ": missing header line");
  }
  if (ds.retire_time >= ds.kill_time) {
    throw ValidationError(std::string(name) +
                          ": retire_time must be below kill_time");
  }
  ds.sort_records();
  return ds;
}

inline TraceDataset parse_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace file '" + path.string() + "'");
  return parse_trace(in, path.string());
}

inline void serialize_trace(const TraceDataset& ds, std::ostream& out) {
  out << "# retire_time=" << ds.retire_time << " kill_time=" << ds.kill_time
      << "\n";
  out << kTraceCsvHeader << "\n";
  for (const auto& r : ds.records) {
    out << r.pilot_id << ',' << r.site_id << ',' << r.start_time << ','
        << r.end_time << ',' << to_string(r.termination_class) << "\n";
  }
}

inline void serialize_trace(const TraceDataset& ds,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write trace file '" + path.string() + "'");
  serialize_trace(ds, out);
}

// Chronological split at the given fraction of the start-time span: records
// starting before the boundary form the training set, the rest the test set.
inline std::pair<TraceDataset, TraceDataset> split_dataset(
    const TraceDataset& ds, double train_fraction) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw std::invalid_argument("train_fraction must be in (0,1)");
  }
  TraceDataset train, test;
  train.retire_time = test.retire_time = ds.retire_time;
  train.kill_time = test.kill_time = ds.kill_time;
  if (ds.records.empty()) return {train, test};
  const std::int64_t first = ds.records.front().start_time;
  const std::int64_t last = ds.records.back().start_time;
  const std::int64_t boundary =
      first + static_cast<std::int64_t>(train_fraction *
                                        static_cast<double>(last - first));
  for (const auto& r : ds.records) {
    (r.start_time < boundary ? train : test).records.push_back(r);
  }
  return {train, test};
}

}  // namespace pilotrep

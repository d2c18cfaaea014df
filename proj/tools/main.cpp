#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pilotrep/pilotrep.hpp"

namespace {

using namespace pilotrep;

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write to '" + path + "'");
  return out;
}

int cmd_gen(const std::string& spec_path, const std::string& out_path,
            std::optional<std::uint64_t> seed) {
  SyntheticTraceSpec spec = load_synthetic_spec(spec_path);
  if (seed) spec.seed = *seed;
  const TraceDataset ds = generate_synthetic(spec);
  serialize_trace(ds, out_path);
  std::cerr << "wrote " << ds.size() << " records to " << out_path << "\n";
  return 0;
}

int cmd_ingest(const std::string& trace_path, const std::string& out_path) {
  const TraceDataset ds = parse_trace(trace_path);
  nlohmann::json classes = nlohmann::json::object();
  std::uint64_t expected = 0;
  for (const auto& rec : ds.records) {
    const std::string key = to_string(rec.termination_class);
    classes[key] = classes.value(key, std::uint64_t{0}) + 1;
    if (classify_expected(rec, ds.retire_time) == Expectation::Expected) {
      ++expected;
    }
  }
  nlohmann::json j;
  j["records"] = ds.size();
  j["span_begin"] = ds.span_begin();
  j["span_end"] = ds.span_end();
  j["retire_time"] = ds.retire_time;
  j["kill_time"] = ds.kill_time;
  j["max_lifetime"] = ds.max_lifetime();
  j["classes"] = classes;
  j["expected"] = expected;
  j["unexpected"] = ds.size() - expected;
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    open_output(out_path) << j.dump(2) << "\n";
    std::cerr << "wrote summary to " << out_path << "\n";
  }
  return 0;
}

int cmd_detect(const std::string& trace_path, const std::string& config_path,
               const std::string& halts_path, const std::string& filtered_path,
               std::optional<std::uint64_t> seed,
               std::optional<double> calibrate_percentile,
               const std::string& calibrate_trace_path) {
  const TraceDataset ds = parse_trace(trace_path);
  DetectorConfig cfg = load_detector_config(config_path);
  if (seed) cfg.seed = *seed;
  if (calibrate_percentile) {
    const TraceDataset reference = calibrate_trace_path.empty()
                                       ? ds
                                       : parse_trace(calibrate_trace_path);
    const auto series = bin_failures(reference, cfg.classes, cfg.bin_width);
    const auto scores = score_stream(series, cfg);
    const std::size_t skip =
        std::min(scores.size(), static_cast<std::size_t>(cfg.shingle_size) - 1);
    std::vector<double> defined(scores.begin() + skip, scores.end());
    if (defined.empty()) throw ConfigError("stream too short to calibrate");
    cfg.threshold = percentile(defined, *calibrate_percentile);
    std::cerr << "calibrated threshold " << format_double(cfg.threshold) << "\n";
  }
  const HaltSchedule halts = detect_anomalies(ds, cfg);
  open_output(halts_path) << halts.to_json().dump() << "\n";
  std::cerr << halts.windows.size() << " halt window(s)\n";
  if (!filtered_path.empty()) {
    const TraceDataset filtered = filter_dataset(ds, halts);
    serialize_trace(filtered, filtered_path);
    std::cerr << "removed " << ds.size() - filtered.size() << " of " << ds.size()
              << " records\n";
  }
  return 0;
}

int cmd_curves(const std::string& trace_path, std::int64_t lease, int max_r,
               const CurveParams& params, const std::string& out_path) {
  const TraceDataset ds = parse_trace(trace_path);
  const CurveFamily family = compute_curve_family(ds, lease, max_r, params);
  auto out = open_output(out_path);
  write_family_csv(family, out);
  std::cerr << "wrote " << family.curves.size() << " curve(s) to " << out_path
            << "\n";
  return 0;
}

int cmd_valleys(const std::string& curves_path, double availability,
                std::optional<int> cap, const std::string& out_path) {
  const CurveFamily family = load_family_csv(curves_path);
  ValleyTable table = determine_valleys(family, availability);
  if (cap) table = apply_cap(table, *cap);
  open_output(out_path) << serialize_table(table) << "\n";
  std::cerr << table.valleys.size() << " valley(s)";
  if (!table.valleys.empty()) {
    const Valley& top = table.valleys.back();
    std::cerr << ", widest (" << top.lo << ", " << top.hi << "] at r="
              << top.redundancy;
  }
  std::cerr << "\n";
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& trace_path,
                 const std::string& out_path, const std::string& json_path,
                 std::optional<std::uint64_t> seed, std::optional<int> threads) {
  SimConfig cfg = load_sim_config(config_path);
  if (seed) cfg.seed = *seed;
  if (threads) cfg.curve.threads = *threads;
  const TraceDataset ds = parse_trace(trace_path);
  const SimReport report = run_split_simulation(ds, cfg);
  auto out = open_output(out_path);
  write_report_csv(report, out);
  if (!json_path.empty()) {
    open_output(json_path) << report_to_json(report).dump(2) << "\n";
  }
  std::cerr << report.cells.size() << " cell(s) over " << report.samples_total
            << " sample time(s), " << report.samples_halted << " halted\n";
  return 0;
}

int cmd_report(const std::string& report_path, bool strict) {
  const auto cells = load_report_csv(report_path);
  std::printf("%-6s %8s %-7s %9s %6s %9s %7s %6s  %s\n", "target", "lease_s",
              "algo", "attempted", "held", "achieved", "mean_r", "util",
              "verdict");
  std::size_t misses = 0;
  for (const auto& c : cells) {
    const double achieved = 1.0 - c.failure_rate;
    const bool ok = achieved >= c.availability;
    if (!ok) ++misses;
    std::printf("%-6g %8lld %-7s %9llu %6llu %9.4f %7.2f %6.3f  %s\n",
                c.availability, static_cast<long long>(c.lease),
                to_string(c.algorithm),
                static_cast<unsigned long long>(c.attempted),
                static_cast<unsigned long long>(c.held), achieved,
                c.mean_redundancy, c.utilization, ok ? "ok" : "miss");
  }
  std::printf("%zu of %zu cell(s) met their availability target\n",
              cells.size() - misses, cells.size());
  return strict && misses > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pilot reliability modeling and task replication toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic pilot trace");
  std::string gen_spec, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec, "generator spec (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output trace CSV")->required();
  gen->add_option("--seed", gen_seed, "override the spec's seed");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "validate a trace and summarize it");
  std::string ingest_trace, ingest_out;
  ingest->add_option("--trace", ingest_trace, "trace CSV")
      ->required()
      ->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "summary JSON (default: stdout)");

  // detect
  auto* detect = app.add_subcommand("detect", "flag anomalous failure bursts");
  std::string det_trace, det_config, det_halts, det_filtered, det_cal_trace;
  std::optional<std::uint64_t> det_seed;
  std::optional<double> det_cal_pct;
  detect->add_option("--trace", det_trace, "trace CSV")
      ->required()
      ->check(CLI::ExistingFile);
  detect->add_option("--config", det_config, "detector config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  detect->add_option("--halts", det_halts, "output halt schedule JSON")->required();
  detect->add_option("--filtered", det_filtered, "output trace with flagged records removed");
  detect->add_option("--seed", det_seed, "override the config's seed");
  detect->add_option("--calibrate-percentile", det_cal_pct,
                     "set threshold to this score percentile instead of the config value")
      ->check(CLI::Range(0.0, 100.0));
  detect->add_option("--calibrate-trace", det_cal_trace,
                     "calibrate on this trace (default: --trace)")
      ->check(CLI::ExistingFile);

  // curves
  auto* curves = app.add_subcommand("curves", "estimate failure-rate curves by pilot age");
  std::string cur_trace, cur_out;
  std::int64_t cur_lease = 14'400;
  int cur_max_r = 16;
  CurveParams cur_params;
  curves->add_option("--trace", cur_trace, "trace CSV")
      ->required()
      ->check(CLI::ExistingFile);
  curves->add_option("--lease", cur_lease, "task lease in seconds")->required();
  curves->add_option("--max-r", cur_max_r, "highest redundancy level");
  curves->add_option("--interval-width", cur_params.interval_width,
                     "age interval width in seconds");
  curves->add_option("--cadence", cur_params.cadence,
                     "seconds between sample times");
  curves->add_option("--reps", cur_params.reps, "trials per sample time");
  curves->add_option("--seed", cur_params.seed, "RNG seed");
  curves->add_option("--threads", cur_params.threads, "worker threads");
  curves->add_option("--out", cur_out, "output curve CSV")->required();

  // valleys
  auto* valleys = app.add_subcommand("valleys", "derive an availability valley table");
  std::string val_curves, val_out;
  double val_availability = 0.95;
  std::optional<int> val_cap;
  valleys->add_option("--curves", val_curves, "curve CSV from 'curves'")
      ->required()
      ->check(CLI::ExistingFile);
  valleys->add_option("--availability", val_availability, "availability target in (0,1)")
      ->required();
  valleys->add_option("--cap", val_cap, "drop valleys above this redundancy");
  valleys->add_option("--out", val_out, "output valley table JSON")->required();

  // simulate
  auto* simulate = app.add_subcommand("simulate", "replay a trace under the selection algorithms");
  std::string sim_config, sim_trace, sim_out, sim_json;
  std::optional<std::uint64_t> sim_seed;
  std::optional<int> sim_threads;
  simulate->add_option("--config", sim_config, "simulation config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  simulate->add_option("--trace", sim_trace, "trace CSV")
      ->required()
      ->check(CLI::ExistingFile);
  simulate->add_option("--out", sim_out, "output report CSV")->required();
  simulate->add_option("--json", sim_json, "detailed report JSON");
  simulate->add_option("--seed", sim_seed, "override the config's seed");
  simulate->add_option("--threads", sim_threads, "worker threads for curve building");

  // report
  auto* report = app.add_subcommand("report", "pretty-print a simulation report");
  std::string rep_path;
  bool rep_strict = false;
  report->add_option("--report", rep_path, "report CSV from 'simulate'")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_flag("--strict", rep_strict, "exit 1 when a cell misses its target");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_spec, gen_out, gen_seed);
    if (ingest->parsed()) return cmd_ingest(ingest_trace, ingest_out);
    if (detect->parsed()) {
      return cmd_detect(det_trace, det_config, det_halts, det_filtered, det_seed,
                        det_cal_pct, det_cal_trace);
    }
    if (curves->parsed()) {
      return cmd_curves(cur_trace, cur_lease, cur_max_r, cur_params, cur_out);
    }
    if (valleys->parsed()) {
      return cmd_valleys(val_curves, val_availability, val_cap, val_out);
    }
    if (simulate->parsed()) {
      return cmd_simulate(sim_config, sim_trace, sim_out, sim_json, sim_seed,
                          sim_threads);
    }
    if (report->parsed()) return cmd_report(rep_path, rep_strict);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modsel/profile.hpp"
#include "modsel/workload.hpp"

namespace modsel {

enum class Outcome { completed, late, dropped };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::completed: return "completed";
    case Outcome::late: return "late";
    case Outcome::dropped: return "dropped";
  }
  return "?";
}

inline Outcome parse_outcome(std::string_view s) {
  if (s == "completed") return Outcome::completed;
  if (s == "late") return Outcome::late;
  if (s == "dropped") return Outcome::dropped;
  throw Error("unknown job outcome '" + std::string(s) + "'");
}

struct JobRecord {
  std::int64_t id = 0;
  int size = 0;
  double accuracy_slo = 0.0;
  std::optional<double> accuracy;  // achieved effective accuracy; empty when dropped
  std::int64_t credit = 0;         // sum(acc * batch) in 1e-4 units; 0 when dropped
  Micros arrival{0};
  Micros end{0};  // completion or drop time
  Outcome outcome = Outcome::dropped;
  std::optional<Micros> predicted_end;  // scheduler estimate at dispatch

  bool violated() const { return outcome != Outcome::completed; }
  bool finished() const { return outcome != Outcome::dropped; }
  std::optional<Micros> jct() const {
    if (!finished()) return std::nullopt;
    return end - arrival;
  }
};

struct WindowSample {
  std::int64_t index = 0;
  std::size_t queue_depth = 0;
  double feedback_factor = 1.0;
};

/// Append-only record of one simulation run.
struct MetricsLog {
  Micros window{4'000'000};
  std::vector<JobRecord> jobs;
  std::vector<WindowSample> samples;
  std::uint64_t events_processed = 0;
};

struct WindowStat {
  std::int64_t index = 0;
  std::int64_t completed = 0;  // requests finishing in the window
  std::int64_t violated = 0;   // violated requests among those arriving in the window
  std::int64_t total = 0;      // requests arriving in the window

  double throughput() const { return static_cast<double>(completed); }
  double violation_ratio() const {
    return total == 0 ? 0.0 : static_cast<double>(violated) / static_cast<double>(total);
  }
};

/// Throughput counts requests completing in the window (late ones included);
/// the violation ratio charges dropped and late requests to their arrival
/// window.
inline std::vector<WindowStat> window_stats(const MetricsLog& log) {
  if (log.window.count() <= 0) throw Error("metrics window must be positive");
  const auto idx = [&](Micros t) { return t.count() / log.window.count(); };
  std::int64_t n = 0;
  for (const auto& j : log.jobs) {
    n = std::max(n, idx(j.arrival) + 1);
    if (j.finished()) n = std::max(n, idx(j.end) + 1);
  }
  std::vector<WindowStat> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i].index = i;
  for (const auto& j : log.jobs) {
    auto& a = out[idx(j.arrival)];
    a.total += j.size;
    if (j.violated()) a.violated += j.size;
    if (j.finished()) out[idx(j.end)].completed += j.size;
  }
  return out;
}

inline std::vector<double> throughput_series(const std::vector<WindowStat>& w) {
  std::vector<double> v;
  for (const auto& s : w) v.push_back(s.throughput());
  return v;
}

inline std::vector<double> violation_series(const std::vector<WindowStat>& w) {
  std::vector<double> v;
  for (const auto& s : w) v.push_back(s.violation_ratio());
  return v;
}

struct Summary {
  std::size_t count = 0;
  double min = 0, q25 = 0, median = 0, mean = 0, q75 = 0, max = 0;
  bool operator==(const Summary&) const = default;
};

/// Quantiles by linear interpolation between order statistics.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline Summary summarize(std::span<const double> series) {
  if (series.empty()) throw Error("cannot summarize an empty series");
  std::vector<double> s(series.begin(), series.end());
  std::sort(s.begin(), s.end());
  Summary out;
  out.count = s.size();
  out.min = s.front();
  out.max = s.back();
  out.q25 = quantile_sorted(s, 0.25);
  out.median = quantile_sorted(s, 0.5);
  out.q75 = quantile_sorted(s, 0.75);
  out.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  return out;
}

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  double mean = 0.0;
};

/// Achieved accuracy of every finished job, bucketed over [lo, hi].
inline Histogram accuracy_histogram(const MetricsLog& log, int bins, double lo = 0.0, double hi = 1.0) {
  if (bins < 1 || !(hi > lo)) throw Error("histogram needs bins >= 1 and hi > lo");
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0), 0, 0.0};
  double sum = 0.0;
  for (const auto& j : log.jobs) {
    if (!j.accuracy) continue;
    const double a = *j.accuracy;
    auto b = static_cast<int>(std::floor((a - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[b];
    ++h.total;
    sum += a;
  }
  h.mean = h.total ? sum / static_cast<double>(h.total) : 0.0;
  return h;
}

struct RunSummary {
  std::size_t jobs = 0;
  std::int64_t requests = 0;
  std::size_t completed = 0;  // on time
  std::size_t late = 0;
  std::size_t dropped = 0;
  std::int64_t violated_requests = 0;
  double violation_ratio = 0.0;  // over the whole run
  Summary throughput;            // per window
  Summary window_violation;
  double mean_accuracy = 0.0;    // finished jobs
  double mean_jct_ms = 0.0;      // finished jobs
};

inline RunSummary run_summary(const MetricsLog& log) {
  RunSummary r;
  double jct = 0.0;
  for (const auto& j : log.jobs) {
    ++r.jobs;
    r.requests += j.size;
    if (j.violated()) r.violated_requests += j.size;
    switch (j.outcome) {
      case Outcome::completed: ++r.completed; break;
      case Outcome::late: ++r.late; break;
      case Outcome::dropped: ++r.dropped; break;
    }
    if (const auto t = j.jct()) jct += to_ms(*t);
  }
  if (r.requests > 0) {
    r.violation_ratio = static_cast<double>(r.violated_requests) / static_cast<double>(r.requests);
  }
  const auto windows = window_stats(log);
  if (!windows.empty()) {
    r.throughput = summarize(throughput_series(windows));
    r.window_violation = summarize(violation_series(windows));
  }
  const auto finished = r.completed + r.late;
  r.mean_accuracy = accuracy_histogram(log, 1).mean;
  r.mean_jct_ms = finished ? jct / static_cast<double>(finished) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Export
//
// windows CSV (schema v1): window,throughput,violation_ratio
// jobs CSV (schema v1):    id,size,accuracy_slo,accuracy,arrival_ms,end_ms,outcome,jct_ms
//   accuracy and jct_ms are empty for dropped jobs.
// JSON: {"schema": "modsel-metrics", "version": 1, "window_ms", "events_processed",
//        "windows": [{window, throughput, violation_ratio, completed, violated, total}],
//        "jobs": [{id, size, accuracy_slo, accuracy|null, arrival_ms, end_ms, outcome,
//                  jct_ms|null}]}

inline constexpr int kMetricsSchemaVersion = 1;

inline std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buf, ptr);
}

inline std::string windows_csv(const MetricsLog& log) {
  std::string out = "window,throughput,violation_ratio\n";
  for (const auto& w : window_stats(log)) {
    out += std::to_string(w.index) + "," + format_number(w.throughput()) + "," +
           format_number(w.violation_ratio()) + "\n";
  }
  return out;
}

inline std::string jobs_csv(const MetricsLog& log) {
  std::string out = "id,size,accuracy_slo,accuracy,arrival_ms,end_ms,outcome,jct_ms\n";
  for (const auto& j : log.jobs) {
    out += std::to_string(j.id) + "," + std::to_string(j.size) + "," + format_number(j.accuracy_slo) +
           "," + (j.accuracy ? format_number(*j.accuracy) : "") + "," + format_number(to_ms(j.arrival)) +
           "," + format_number(to_ms(j.end)) + "," + std::string(to_string(j.outcome)) + "," +
           (j.jct() ? format_number(to_ms(*j.jct())) : "") + "\n";
  }
  return out;
}

inline nlohmann::json metrics_to_json(const MetricsLog& log) {
  nlohmann::json doc;
  doc["schema"] = "modsel-metrics";
  doc["version"] = kMetricsSchemaVersion;
  doc["window_ms"] = to_ms(log.window);
  doc["events_processed"] = log.events_processed;
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : window_stats(log)) {
    windows.push_back({{"window", w.index},
                       {"throughput", w.throughput()},
                       {"violation_ratio", w.violation_ratio()},
                       {"completed", w.completed},
                       {"violated", w.violated},
                       {"total", w.total}});
  }
  nlohmann::json jobs = nlohmann::json::array();
  for (const auto& j : log.jobs) {
    jobs.push_back({{"id", j.id},
                    {"size", j.size},
                    {"accuracy_slo", j.accuracy_slo},
                    {"accuracy", j.accuracy ? nlohmann::json(*j.accuracy) : nlohmann::json()},
                    {"arrival_ms", to_ms(j.arrival)},
                    {"end_ms", to_ms(j.end)},
                    {"outcome", to_string(j.outcome)},
                    {"jct_ms", j.jct() ? nlohmann::json(to_ms(*j.jct())) : nlohmann::json()}});
  }
  doc["windows"] = std::move(windows);
  doc["jobs"] = std::move(jobs);
  return doc;
}

enum class ExportFormat { csv, json };

/// CSV writes `<prefix>windows.csv` and `<prefix>jobs.csv`; JSON writes
/// `<prefix>metrics.json`. `prefix` usually ends in a path separator.
inline std::vector<std::string> export_metrics(const MetricsLog& log, const std::string& prefix,
                                               ExportFormat format) {
  if (format == ExportFormat::csv) {
    detail::write_file(prefix + "windows.csv", windows_csv(log));
    detail::write_file(prefix + "jobs.csv", jobs_csv(log));
    return {prefix + "windows.csv", prefix + "jobs.csv"};
  }
  detail::write_file(prefix + "metrics.json", metrics_to_json(log).dump(1) + "\n");
  return {prefix + "metrics.json"};
}

struct WindowRow {
  std::int64_t window = 0;
  double throughput = 0.0;
  double violation_ratio = 0.0;
};

inline std::vector<WindowRow> parse_windows_csv(const std::string& text) {
  std::vector<WindowRow> rows;
  const auto lines = detail::data_lines(text);
  if (lines.empty() || lines.front().second != "window,throughput,violation_ratio") {
    throw Error("windows CSV: missing header 'window,throughput,violation_ratio'");
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = "windows CSV line " + std::to_string(lines[i].first);
    const auto cells = detail::split_csv(lines[i].second);
    if (cells.size() != 3) throw Error(where + ": expected 3 fields");
    rows.push_back({detail::parse_number<std::int64_t>(cells[0], where),
                    detail::parse_number<double>(cells[1], where),
                    detail::parse_number<double>(cells[2], where)});
  }
  return rows;
}

inline std::vector<JobRecord> parse_jobs_csv(const std::string& text) {
  std::vector<JobRecord> rows;
  std::stringstream ss(text);
  std::string line;
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    if (n == 1) {
      if (line != "id,size,accuracy_slo,accuracy,arrival_ms,end_ms,outcome,jct_ms") {
        throw Error("jobs CSV: unexpected header");
      }
      continue;
    }
    if (line.empty()) continue;
    const std::string where = "jobs CSV line " + std::to_string(n);
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() == 7) cells.emplace_back();  // trailing empty jct
    if (cells.size() != 8) throw Error(where + ": expected 8 fields");
    JobRecord r;
    r.id = detail::parse_number<std::int64_t>(cells[0], where);
    r.size = detail::parse_number<int>(cells[1], where);
    r.accuracy_slo = detail::parse_number<double>(cells[2], where);
    if (!cells[3].empty()) r.accuracy = detail::parse_number<double>(cells[3], where);
    r.arrival = from_ms(detail::parse_number<double>(cells[4], where));
    r.end = from_ms(detail::parse_number<double>(cells[5], where));
    r.outcome = parse_outcome(cells[6]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace modsel

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "modsel/profile.hpp"

namespace modsel {

class WorkloadError : public Error {
 public:
  using Error::Error;
};

/// A job before admission: what the client asked for.
struct JobTemplate {
  std::int64_t id = 0;
  Micros arrival{0};
  int size = 1;
  double accuracy_slo = 0.0;
  Micros deadline{0};

  bool operator==(const JobTemplate&) const = default;
};

struct TraceRecord {
  std::int64_t epoch_seconds = 0;
  double count = 0.0;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  return out;
}

template <typename T>
T parse_number(const std::string& s, const std::string& where) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw WorkloadError(where + ": cannot parse '" + s + "'");
  }
  return value;
}

// Non-empty, non-comment lines with their 1-based line numbers.
inline std::vector<std::pair<int, std::string>> data_lines(const std::string& text) {
  std::vector<std::pair<int, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (!line.empty()) out.emplace_back(n, line);
  }
  return out;
}

}  // namespace detail

/// Trace text: one `epoch_seconds,count` record per line, `#` comments.
inline std::vector<TraceRecord> parse_trace(const std::string& text) {
  std::vector<TraceRecord> out;
  for (const auto& [n, line] : detail::data_lines(text)) {
    const std::string where = "trace line " + std::to_string(n);
    const auto cells = detail::split_csv(line);
    if (cells.size() != 2) throw WorkloadError(where + ": expected 'epoch_seconds,count'");
    TraceRecord r{detail::parse_number<std::int64_t>(cells[0], where),
                  detail::parse_number<double>(cells[1], where)};
    if (r.count < 0) throw WorkloadError(where + ": negative count");
    if (!out.empty() && r.epoch_seconds <= out.back().epoch_seconds) {
      throw WorkloadError(where + ": timestamps must be strictly increasing");
    }
    out.push_back(r);
  }
  if (out.empty()) throw WorkloadError("trace is empty");
  return out;
}

inline std::vector<TraceRecord> load_trace(const std::string& path) {
  return parse_trace(detail::read_file(path));
}

/// Per-second counts, linearly interpolated between trace records.
inline std::vector<double> resample_per_second(const std::vector<TraceRecord>& trace) {
  if (trace.empty()) throw WorkloadError("trace is empty");
  std::vector<double> out;
  const std::int64_t t0 = trace.front().epoch_seconds;
  const std::int64_t t1 = trace.back().epoch_seconds;
  std::size_t seg = 0;
  for (std::int64_t t = t0; t <= t1; ++t) {
    while (seg + 1 < trace.size() && trace[seg + 1].epoch_seconds <= t) ++seg;
    if (seg + 1 == trace.size()) {
      out.push_back(trace[seg].count);
    } else {
      const auto& a = trace[seg];
      const auto& b = trace[seg + 1];
      const double w = static_cast<double>(t - a.epoch_seconds) /
                       static_cast<double>(b.epoch_seconds - a.epoch_seconds);
      out.push_back(a.count + w * (b.count - a.count));
    }
  }
  return out;
}

/// Affine map of trace counts onto [min_qps, max_qps]; a constant trace maps
/// to min_qps.
inline std::vector<int> map_trace_to_qps(const std::vector<double>& counts, double min_qps,
                                         double max_qps) {
  if (counts.empty()) throw WorkloadError("trace is empty");
  if (min_qps < 0 || max_qps < min_qps) throw WorkloadError("need 0 <= min_qps <= max_qps");
  const auto [lo_it, hi_it] = std::minmax_element(counts.begin(), counts.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<int> qps;
  qps.reserve(counts.size());
  for (double c : counts) {
    if (c < 0) throw WorkloadError("negative trace count");
    const double q = hi > lo ? min_qps + (c - lo) * (max_qps - min_qps) / (hi - lo) : min_qps;
    qps.push_back(static_cast<int>(std::lround(q)));
  }
  return qps;
}

/// Job sizes: round(max(1, Normal(mean, sd))).
class JobSizeSampler {
 public:
  JobSizeSampler(double mean = 1.0, double sd = 6.0) : dist_(mean, sd) {
    if (!(sd > 0.0)) throw WorkloadError("job size sd must be positive");
  }

  template <typename Rng>
  double draw_raw(Rng& rng) {
    return dist_(rng);
  }

  template <typename Rng>
  int draw(Rng& rng) {
    return static_cast<int>(std::lround(std::max(1.0, draw_raw(rng))));
  }

 private:
  std::normal_distribution<double> dist_;
};

enum class WorkloadKind { constant, trace };

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::constant;
  double qps = 10.0;               // constant kind
  std::vector<double> trace_counts;  // trace kind, one value per second
  double min_qps = 5.0;
  double max_qps = 60.0;
  double duration_s = 60.0;        // trace kind: capped at the trace length
  double size_mean = 1.0;
  double size_sd = 6.0;
  double deadline_offset_ms = 1000.0;
  std::uint64_t seed = 1;
};

inline void validate(const WorkloadSpec& spec) {
  if (!(spec.duration_s > 0)) throw WorkloadError("duration must be positive");
  if (!(spec.deadline_offset_ms > 0)) throw WorkloadError("deadline offset must be positive");
  if (spec.min_qps < 0 || spec.max_qps < spec.min_qps) {
    throw WorkloadError("need 0 <= min_qps <= max_qps");
  }
  if (spec.kind == WorkloadKind::constant && spec.qps < 0) throw WorkloadError("qps must be >= 0");
  if (spec.kind == WorkloadKind::trace && spec.trace_counts.empty()) {
    throw WorkloadError("trace workload without trace counts");
  }
}

/// Target request count for each one-second interval.
inline std::vector<int> interval_targets(const WorkloadSpec& spec) {
  validate(spec);
  const auto seconds = static_cast<std::size_t>(std::ceil(spec.duration_s));
  if (spec.kind == WorkloadKind::constant) {
    return std::vector<int>(seconds, static_cast<int>(std::lround(spec.qps)));
  }
  auto qps = map_trace_to_qps(spec.trace_counts, spec.min_qps, spec.max_qps);
  if (qps.size() > seconds) qps.resize(seconds);
  return qps;
}

/// Deterministic job stream. Each one-second interval draws job sizes until
/// the interval's request target is reached exactly (the last job is cut
/// short), gives every job an accuracy SLO uniform over
/// [accuracy_min, accuracy_max], and spreads arrivals uniformly over the
/// interval. Deadlines are arrival + the deadline offset.
inline std::vector<JobTemplate> generate_jobs(const WorkloadSpec& spec, double accuracy_min,
                                              double accuracy_max) {
  if (accuracy_max < accuracy_min) throw WorkloadError("accuracy range is inverted");
  const auto targets = interval_targets(spec);
  std::mt19937_64 rng(spec.seed);
  JobSizeSampler sizes(spec.size_mean, spec.size_sd);
  std::uniform_real_distribution<double> slo(accuracy_min, accuracy_max);
  std::uniform_int_distribution<std::int64_t> offset(0, 999'999);
  const Micros deadline_offset = from_ms(spec.deadline_offset_ms);

  std::vector<JobTemplate> jobs;
  std::int64_t next_id = 1;
  for (std::size_t sec = 0; sec < targets.size(); ++sec) {
    std::vector<JobTemplate> batch;
    for (int left = targets[sec]; left > 0;) {
      JobTemplate j;
      j.size = std::min(left, sizes.draw(rng));
      // SLOs sit on the 1e-4 accuracy grid.
      j.accuracy_slo = std::clamp(std::round(slo(rng) * kAccuracyScale) / kAccuracyScale,
                                  accuracy_min, accuracy_max);
      left -= j.size;
      batch.push_back(j);
    }
    std::vector<std::int64_t> offsets;
    for (std::size_t i = 0; i < batch.size(); ++i) offsets.push_back(offset(rng));
    std::sort(offsets.begin(), offsets.end());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i].id = next_id++;
      batch[i].arrival = Micros{static_cast<std::int64_t>(sec) * 1'000'000 + offsets[i]};
      batch[i].deadline = batch[i].arrival + deadline_offset;
      jobs.push_back(batch[i]);
    }
  }
  return jobs;
}

inline std::vector<JobTemplate> generate_jobs(const WorkloadSpec& spec, const ModelProfile& profile) {
  return generate_jobs(spec, from_accuracy_units(profile.min_accuracy_units()),
                       from_accuracy_units(profile.max_accuracy_units()));
}

/// Scenario text: one job per line, `arrival_ms,size,accuracy_slo,deadline_ms`,
/// `#` comments. An optional header line starting with `arrival_ms` is skipped.
inline std::vector<JobTemplate> parse_scenario(const std::string& text) {
  std::vector<JobTemplate> jobs;
  for (const auto& [n, line] : detail::data_lines(text)) {
    if (jobs.empty() && line.rfind("arrival_ms", 0) == 0) continue;
    const std::string where = "scenario line " + std::to_string(n);
    const auto cells = detail::split_csv(line);
    if (cells.size() != 4) {
      throw WorkloadError(where + ": expected 'arrival_ms,size,accuracy_slo,deadline_ms'");
    }
    JobTemplate j;
    j.id = static_cast<std::int64_t>(jobs.size()) + 1;
    j.arrival = from_ms(detail::parse_number<double>(cells[0], where));
    j.size = detail::parse_number<int>(cells[1], where);
    j.accuracy_slo = detail::parse_number<double>(cells[2], where);
    j.deadline = from_ms(detail::parse_number<double>(cells[3], where));
    if (j.size < 1) throw WorkloadError(where + ": size must be >= 1");
    if (!(j.accuracy_slo >= 0.0 && j.accuracy_slo <= 1.0)) {
      throw WorkloadError(where + ": accuracy_slo must be in [0, 1]");
    }
    if (j.deadline <= j.arrival) throw WorkloadError(where + ": deadline must follow arrival");
    if (j.arrival.count() < 0) throw WorkloadError(where + ": negative arrival");
    jobs.push_back(j);
  }
  std::stable_sort(jobs.begin(), jobs.end(),
                   [](const JobTemplate& a, const JobTemplate& b) { return a.arrival < b.arrival; });
  return jobs;
}

inline std::vector<JobTemplate> load_scenario(const std::string& path) {
  return parse_scenario(detail::read_file(path));
}

}  // namespace modsel

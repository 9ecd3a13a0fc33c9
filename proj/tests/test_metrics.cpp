#include <filesystem>

#include <gtest/gtest.h>

#include "modsel/sim.hpp"

using namespace modsel;

namespace {

JobRecord job(std::int64_t id, int size, double arrival_ms, double end_ms, Outcome o, double acc = 0.8) {
  JobRecord r;
  r.id = id;
  r.size = size;
  r.accuracy_slo = 0.7;
  r.arrival = from_ms(arrival_ms);
  r.end = from_ms(end_ms);
  r.outcome = o;
  if (o != Outcome::dropped) {
    r.accuracy = acc;
    r.credit = to_accuracy_units(acc) * size;
  }
  return r;
}

MetricsLog overload_log(Policy p, std::uint64_t seed = 1) {
  static const auto profile = desk_profile();
  static const auto matrix = build_matrix(profile, size_range(1, 64), default_alpha_grid(profile));
  WorkloadSpec ws;
  ws.qps = 33;
  ws.duration_s = 60;
  ws.seed = seed;
  SimConfig cfg{profile, matrix, p};
  cfg.seed = seed;
  return simulate(cfg, generate_jobs(ws, profile));
}

std::string tmp_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("modsel_test_metrics_" + name);
  std::filesystem::create_directories(d);
  return (d / "").string();
}

}  // namespace

TEST(Windows, Definitions) {
  MetricsLog log;
  for (int i = 0; i < 40; ++i) log.jobs.push_back(job(i, 1, 100.0 * i / 40, 200 + i, Outcome::completed));
  auto w = window_stats(log);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_DOUBLE_EQ(w[0].throughput(), 40);
  EXPECT_DOUBLE_EQ(w[0].violation_ratio(), 0.0);

  for (int i = 30; i < 40; ++i) log.jobs[i] = job(i, 1, 10, 50, Outcome::dropped);
  w = window_stats(log);
  EXPECT_DOUBLE_EQ(w[0].throughput(), 30);
  EXPECT_DOUBLE_EQ(w[0].violation_ratio(), 0.25);
}

TEST(Windows, LateCountsAsViolatedAndCompleted) {
  MetricsLog log;
  log.jobs.push_back(job(1, 3, 100, 5000, Outcome::late));
  log.jobs.push_back(job(2, 1, 200, 300, Outcome::completed));
  const auto w = window_stats(log);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].total, 4);
  EXPECT_EQ(w[0].violated, 3);
  EXPECT_EQ(w[0].completed, 1);
  EXPECT_EQ(w[1].completed, 3);
  EXPECT_EQ(w[1].total, 0);
  EXPECT_DOUBLE_EQ(w[1].violation_ratio(), 0.0);
}

TEST(Summary, Quartiles) {
  const std::vector<double> a = {4, 1, 3, 2};
  const auto s = summarize(a);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.q25, 1.75);
  EXPECT_DOUBLE_EQ(s.q75, 3.25);
  EXPECT_DOUBLE_EQ(s.min, 1);
  EXPECT_DOUBLE_EQ(s.max, 4);

  const std::vector<double> c(7, 3.5);
  const auto k = summarize(c);
  EXPECT_EQ(k.min, 3.5);
  EXPECT_EQ(k.q25, 3.5);
  EXPECT_EQ(k.median, 3.5);
  EXPECT_EQ(k.q75, 3.5);
  EXPECT_EQ(k.max, 3.5);
  EXPECT_THROW(summarize(std::vector<double>{}), Error);
}

TEST(Histogram, Buckets) {
  MetricsLog log;
  for (int i = 0; i < 5; ++i) log.jobs.push_back(job(i, 2, 0, 10, Outcome::completed, 0.80));
  log.jobs.push_back(job(9, 2, 0, 10, Outcome::dropped));
  const auto h = accuracy_histogram(log, 10);
  EXPECT_EQ(h.total, 5u);
  EXPECT_EQ(std::count_if(h.counts.begin(), h.counts.end(), [](std::size_t c) { return c > 0; }), 1);
  EXPECT_EQ(h.counts[8], 5u);
  EXPECT_DOUBLE_EQ(h.mean, 0.80);
  EXPECT_THROW(accuracy_histogram(log, 0), Error);
}

TEST(Histogram, DeskGoldenRun) {
  const auto profile = desk_profile();
  const auto matrix = build_matrix(profile, size_range(1, 8), default_alpha_grid(profile));
  SimConfig cfg{profile, matrix, Policy::optimized};
  cfg.optimizer_overhead = Micros{0};
  auto log = simulate(cfg, parse_scenario("0,1,0.67,20\n10,2,0.71,140\n20,2,0.65,150\n"));
  // job 1 is the audio-only opener; the reassigned pair is jobs 2 and 3
  std::erase_if(log.jobs, [](const JobRecord& j) { return j.id == 1; });
  const auto h = accuracy_histogram(log, 20, 0.6, 0.8);
  EXPECT_EQ(h.total, 2u);
  EXPECT_NEAR(h.mean, 0.71, 1e-12);
  EXPECT_EQ(h.counts[std::size_t((0.735 - 0.6) / 0.01)], 1u);
  EXPECT_EQ(h.counts[std::size_t((0.685 - 0.6) / 0.01)], 1u);
}

TEST(Export, CsvRoundTrip) {
  const auto log = overload_log(Policy::optimized);
  const auto dir = tmp_dir("csv");
  const auto files = export_metrics(log, dir, ExportFormat::csv);
  ASSERT_EQ(files.size(), 2u);

  const auto text = detail::read_file(dir + "windows.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "window,throughput,violation_ratio");
  const auto rows = parse_windows_csv(text);
  const auto w = window_stats(log);
  ASSERT_EQ(rows.size(), w.size());
  std::vector<double> thr, vr;
  for (const auto& r : rows) {
    thr.push_back(r.throughput);
    vr.push_back(r.violation_ratio);
  }
  EXPECT_EQ(summarize(thr), summarize(throughput_series(w)));
  EXPECT_EQ(summarize(vr), summarize(violation_series(w)));

  const auto jobs = parse_jobs_csv(detail::read_file(dir + "jobs.csv"));
  ASSERT_EQ(jobs.size(), log.jobs.size());
  MetricsLog back;
  back.window = log.window;
  back.jobs = jobs;
  EXPECT_EQ(window_stats(back).size(), w.size());
  EXPECT_EQ(summarize(throughput_series(window_stats(back))), summarize(throughput_series(w)));
  EXPECT_EQ(accuracy_histogram(back, 10).counts, accuracy_histogram(log, 10).counts);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    EXPECT_EQ(jobs[i].id, log.jobs[i].id);
    EXPECT_EQ(jobs[i].outcome, log.jobs[i].outcome);
    EXPECT_EQ(jobs[i].accuracy, log.jobs[i].accuracy);
    EXPECT_EQ(jobs[i].arrival, log.jobs[i].arrival);
    EXPECT_EQ(jobs[i].end, log.jobs[i].end);
  }
  std::filesystem::remove_all(dir);
}

TEST(Export, Json) {
  const auto log = overload_log(Policy::random, 2);
  const auto dir = tmp_dir("json");
  export_metrics(log, dir, ExportFormat::json);
  const auto doc = nlohmann::json::parse(detail::read_file(dir + "metrics.json"));
  EXPECT_EQ(doc["schema"], "modsel-metrics");
  EXPECT_EQ(doc["version"], kMetricsSchemaVersion);
  EXPECT_EQ(doc["jobs"].size(), log.jobs.size());
  std::vector<double> thr;
  for (const auto& w : doc["windows"]) thr.push_back(w["throughput"].get<double>());
  EXPECT_EQ(summarize(thr), summarize(throughput_series(window_stats(log))));
  std::filesystem::remove_all(dir);
}

TEST(Export, UnwritablePath) {
  MetricsLog log;
  log.jobs.push_back(job(1, 1, 0, 10, Outcome::completed));
  EXPECT_THROW(export_metrics(log, "/nonexistent-dir/x/", ExportFormat::csv), IoError);
}

TEST(Export, RejectsBadCsv) {
  EXPECT_THROW(parse_windows_csv("w,t,v\n0,1,0\n"), Error);
  EXPECT_THROW(parse_windows_csv("window,throughput,violation_ratio\n0,1\n"), Error);
  EXPECT_THROW(parse_jobs_csv("id\n"), Error);
}

TEST(Properties, NoWindowLeakage) {
  for (const Policy p : kAllPolicies) {
    const auto log = overload_log(p);
    std::int64_t completed = 0, windowed = 0, total = 0, arrived = 0;
    for (const auto& j : log.jobs) {
      if (j.finished()) completed += j.size;
      arrived += j.size;
    }
    for (const auto& w : window_stats(log)) {
      windowed += w.completed;
      total += w.total;
      EXPECT_GE(w.violation_ratio(), 0.0);
      EXPECT_LE(w.violation_ratio(), 1.0);
    }
    EXPECT_EQ(windowed, completed);
    EXPECT_EQ(total, arrived);
  }
}

TEST(Properties, NoViolationsWithAmpleSlack) {
  const auto profile = desk_profile();
  const auto matrix = build_matrix(profile, size_range(1, 64), default_alpha_grid(profile));
  WorkloadSpec ws;
  ws.qps = 4;
  ws.duration_s = 30;
  ws.deadline_offset_ms = 60'000;
  ws.seed = 3;
  for (const Policy p : kAllPolicies) {
    SimConfig cfg{profile, matrix, p};
    const auto log = simulate(cfg, generate_jobs(ws, profile));
    for (const auto& w : window_stats(log)) EXPECT_EQ(w.violation_ratio(), 0.0) << to_string(p);
  }
}

TEST(Properties, NoneViolatesMoreInMostWindows) {
  const auto none = window_stats(overload_log(Policy::none));
  const auto opt = window_stats(overload_log(Policy::optimized));
  const std::size_t n = std::min(none.size(), opt.size());
  std::size_t above = 0, counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (none[i].total == 0) continue;
    ++counted;
    above += none[i].violation_ratio() > opt[i].violation_ratio();
  }
  EXPECT_GE(static_cast<double>(above), 0.8 * static_cast<double>(counted)) << above << "/" << counted;
}

TEST(Properties, SummaryStableAcrossRuns) {
  const auto a = run_summary(overload_log(Policy::optimized, 5));
  const auto b = run_summary(overload_log(Policy::optimized, 5));
  EXPECT_EQ(a.throughput, b.throughput);
  EXPECT_EQ(a.window_violation, b.window_violation);
  EXPECT_EQ(windows_csv(overload_log(Policy::aggressive, 5)), windows_csv(overload_log(Policy::aggressive, 5)));
}

#include <gtest/gtest.h>

#include "modsel/sim.hpp"

using namespace modsel;

namespace {

struct Desk {
  ModelProfile profile = desk_profile();
  StrategyMatrix matrix = build_matrix(profile, size_range(1, 64), default_alpha_grid(profile));

  SimConfig config(Policy p) const { return SimConfig{profile, matrix, p}; }
};

const Desk& desk() {
  static const Desk d;
  return d;
}

std::vector<JobTemplate> desk_jobs() {
  return parse_scenario("arrival_ms,size,accuracy_slo,deadline_ms\n0,1,0.67,20\n10,2,0.71,140\n20,2,0.65,150\n");
}

std::vector<JobTemplate> overload_jobs(std::uint64_t seed, double seconds = 60) {
  WorkloadSpec ws;
  ws.qps = 33;  // all-modalities capacity is 1000 / 60 requests per second
  ws.duration_s = seconds;
  ws.seed = seed;
  return generate_jobs(ws, desk().profile);
}

const JobRecord& rec(const MetricsLog& log, std::int64_t id) {
  for (const auto& j : log.jobs) {
    if (j.id == id) return j;
  }
  throw std::runtime_error("no record");
}

}  // namespace

TEST(Sim, DeskOptimized) {
  auto cfg = desk().config(Policy::optimized);
  cfg.optimizer_overhead = Micros{0};
  const auto log = simulate(cfg, desk_jobs());
  ASSERT_EQ(log.jobs.size(), 3u);
  EXPECT_EQ(rec(log, 1).end, from_ms(20));
  EXPECT_EQ(rec(log, 2).end, from_ms(100));
  EXPECT_DOUBLE_EQ(*rec(log, 2).accuracy, 0.735);
  EXPECT_EQ(rec(log, 3).end, from_ms(150));
  EXPECT_DOUBLE_EQ(*rec(log, 3).accuracy, 0.685);
  for (const auto& j : log.jobs) EXPECT_EQ(j.outcome, Outcome::completed);
}

TEST(Sim, DeskNone) {
  auto cfg = desk().config(Policy::none);
  cfg.optimizer_overhead = Micros{0};
  const auto log = simulate(cfg, desk_jobs());
  EXPECT_TRUE(rec(log, 3).violated());
  EXPECT_EQ(rec(log, 2).end, from_ms(130));
  EXPECT_DOUBLE_EQ(*rec(log, 2).accuracy, 0.80);
  EXPECT_EQ(rec(log, 1).outcome, Outcome::dropped);
}

TEST(Sim, DeskOtherPolicies) {
  for (const Policy p : {Policy::random, Policy::aggressive}) {
    auto cfg = desk().config(p);
    cfg.optimizer_overhead = Micros{0};
    const auto log = simulate(cfg, desk_jobs());
    for (const auto& j : log.jobs) {
      EXPECT_EQ(j.outcome, Outcome::completed) << to_string(p);
      EXPECT_TRUE(meets_accuracy(j.credit, j.size, j.accuracy_slo)) << to_string(p);
    }
    // random may instead land on (90 ms, .75) + (40 ms, .67), equally on time
    if (p == Policy::aggressive) {
      EXPECT_DOUBLE_EQ(*rec(log, 2).accuracy, 0.735);
    }
  }
}

TEST(Sim, EmptyWorkload) {
  const auto log = simulate(desk().config(Policy::optimized), {});
  EXPECT_TRUE(log.jobs.empty());
  EXPECT_TRUE(log.samples.empty());
  EXPECT_EQ(log.events_processed, 0u);
}

TEST(Sim, PredictionsExactWithoutDiscrepancy) {
  for (const Policy p : kAllPolicies) {
    auto cfg = desk().config(p);
    cfg.optimizer_overhead = Micros{0};
    const auto log = simulate(cfg, overload_jobs(3, 20));
    std::size_t finished = 0;
    for (const auto& j : log.jobs) {
      if (!j.finished()) continue;
      ++finished;
      ASSERT_TRUE(j.predicted_end);
      EXPECT_EQ(*j.predicted_end, j.end) << to_string(p) << " job " << j.id;
    }
    EXPECT_GT(finished, 0u);
  }
}

TEST(Sim, ConservationAndSlo) {
  for (const Policy p : kAllPolicies) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto jobs = overload_jobs(seed, 20);
      auto cfg = desk().config(p);
      cfg.seed = seed;
      const auto log = simulate(cfg, jobs);
      ASSERT_EQ(log.jobs.size(), jobs.size());
      std::int64_t generated = 0, finished = 0, dropped = 0;
      for (const auto& j : jobs) generated += j.size;
      for (const auto& j : log.jobs) {
        (j.finished() ? finished : dropped) += j.size;
        if (j.finished()) {
          EXPECT_GE(j.end, j.arrival);
          EXPECT_TRUE(meets_accuracy(j.credit, j.size, j.accuracy_slo)) << to_string(p) << " " << j.id;
          EXPECT_GE(*j.accuracy + 1e-12, j.accuracy_slo);
        }
      }
      EXPECT_EQ(finished + dropped, generated);
      for (std::size_t i = 1; i < log.jobs.size(); ++i) EXPECT_LT(log.jobs[i - 1].id, log.jobs[i].id);
    }
  }
}

TEST(Sim, Deterministic) {
  for (const Policy p : kAllPolicies) {
    auto cfg = desk().config(p);
    cfg.discrepancy = 1.3;
    cfg.discrepancy_jitter = 0.2;
    const auto a = simulate(cfg, overload_jobs(4, 20));
    const auto b = simulate(cfg, overload_jobs(4, 20));
    EXPECT_EQ(jobs_csv(a), jobs_csv(b));
    EXPECT_EQ(windows_csv(a), windows_csv(b));
    EXPECT_EQ(a.events_processed, b.events_processed);
  }
}

TEST(Sim, OverloadDominance) {
  const auto jobs = overload_jobs(1);
  std::map<Policy, MetricsLog> logs;
  for (const Policy p : kAllPolicies) logs[p] = simulate(desk().config(p), jobs);
  const auto none = run_summary(logs[Policy::none]);
  for (const Policy p : {Policy::optimized, Policy::random, Policy::aggressive}) {
    const auto r = run_summary(logs[p]);
    EXPECT_LT(r.window_violation.mean, none.window_violation.mean) << to_string(p);
    EXPECT_LT(r.violation_ratio, none.violation_ratio) << to_string(p);
    EXPECT_GT(r.throughput.mean, none.throughput.mean) << to_string(p);
  }
  EXPECT_GE(run_summary(logs[Policy::optimized]).mean_accuracy,
            run_summary(logs[Policy::aggressive]).mean_accuracy);
}

TEST(Sim, DiscrepancyDirection) {
  const auto jobs = overload_jobs(1);
  auto thr = [&](double d) {
    auto cfg = desk().config(Policy::optimized);
    cfg.discrepancy = d;
    return run_summary(simulate(cfg, jobs)).throughput.mean;
  };
  const double t1 = thr(1.0);
  EXPECT_LT(thr(2.5), t1);
  EXPECT_LE(t1, thr(0.5));
}

TEST(Sim, FeedbackTracksDiscrepancy) {
  auto cfg = desk().config(Policy::optimized);
  cfg.discrepancy = 2.0;
  const auto log = simulate(cfg, overload_jobs(2, 20));
  ASSERT_FALSE(log.samples.empty());
  EXPECT_NEAR(log.samples.back().feedback_factor, 2.0, 1e-6);
}

TEST(Sim, ConfigValidation) {
  auto cfg = desk().config(Policy::optimized);
  cfg.profile = scale_latency(cfg.profile, 2.0);
  EXPECT_THROW(simulate(cfg, desk_jobs()), MatrixError);

  auto small = desk().config(Policy::optimized);
  small.matrix = build_matrix(small.profile, size_range(1, 4), default_alpha_grid(small.profile));
  std::vector<JobTemplate> big = {{1, Micros{0}, 5, 0.7, from_ms(1000)}};
  EXPECT_THROW(simulate(small, big), MatrixError);

  for (double d : {0.1, 2.6}) {
    auto bad = desk().config(Policy::optimized);
    bad.discrepancy = d;
    EXPECT_THROW(simulate(bad, desk_jobs()), Error);
  }
  auto bad = desk().config(Policy::optimized);
  bad.watermark = 0;
  EXPECT_THROW(simulate(bad, desk_jobs()), Error);
  bad = desk().config(Policy::optimized);
  bad.optimizer_overhead = Micros{-1};
  EXPECT_THROW(simulate(bad, desk_jobs()), Error);
}

TEST(Sim, WatermarkBuffersWhileBusy) {
  // With a huge watermark, passes only start when the worker goes idle.
  auto cfg = desk().config(Policy::optimized);
  cfg.watermark = 1000;
  cfg.optimizer_overhead = Micros{0};
  const auto log = simulate(cfg, overload_jobs(5, 10));
  std::int64_t finished = 0;
  for (const auto& j : log.jobs) finished += j.finished();
  EXPECT_GT(finished, 0);
}

TEST(Events, OrderedByTimeThenKind) {
  EventQueue q;
  q.push(Micros{20}, EventKind::batch_complete);
  q.push(Micros{20}, EventKind::job_arrival, 7);
  q.push(Micros{10}, EventKind::metrics_tick);
  q.push(Micros{20}, EventKind::optimize_done);
  q.push(Micros{20}, EventKind::job_arrival, 8);
  std::vector<std::pair<EventKind, std::size_t>> got;
  std::vector<Micros> times;
  while (!q.empty()) {
    const auto e = q.pop();
    got.emplace_back(e.kind, e.job);
    times.push_back(e.time);
  }
  EXPECT_TRUE(std::is_sorted(times.begin(), times.end()));
  EXPECT_EQ(got[0].first, EventKind::metrics_tick);
  EXPECT_EQ(got[1], std::make_pair(EventKind::job_arrival, std::size_t{7}));
  EXPECT_EQ(got[2], std::make_pair(EventKind::job_arrival, std::size_t{8}));
  EXPECT_EQ(got[3].first, EventKind::optimize_done);
  EXPECT_EQ(got[4].first, EventKind::batch_complete);
}

TEST(Workload, TraceMapping) {
  EXPECT_EQ(map_trace_to_qps({0, 100}, 5, 60), (std::vector<int>{5, 60}));
  EXPECT_EQ(map_trace_to_qps({50}, 5, 60), (std::vector<int>{5}));
  EXPECT_EQ(map_trace_to_qps({0, 50, 100}, 5, 45), (std::vector<int>{5, 25, 45}));
  EXPECT_THROW(map_trace_to_qps({}, 5, 60), WorkloadError);
  EXPECT_THROW(map_trace_to_qps({1, 2}, 10, 5), WorkloadError);
}

TEST(Workload, TraceParsing) {
  const auto t = parse_trace("# header\n100,10\n102,30\n\n103,0 # dip\n");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(resample_per_second(t), (std::vector<double>{10, 20, 30, 0}));
  EXPECT_THROW(parse_trace("100,1\n99,2\n"), WorkloadError);
  EXPECT_THROW(parse_trace("100;1\n"), WorkloadError);
  EXPECT_THROW(parse_trace("100,-1\n"), WorkloadError);
  EXPECT_THROW(parse_trace("# nothing\n"), WorkloadError);
}

TEST(Workload, ExactRequestTargets) {
  WorkloadSpec ws;
  ws.qps = 10;
  ws.duration_s = 30;
  ws.seed = 9;
  const auto jobs = generate_jobs(ws, 0.67, 0.80);
  std::vector<int> per_second(30, 0);
  for (const auto& j : jobs) {
    per_second[j.arrival.count() / 1'000'000] += j.size;
    EXPECT_GE(j.size, 1);
    EXPECT_GE(j.accuracy_slo, 0.67);
    EXPECT_LE(j.accuracy_slo, 0.80);
    EXPECT_EQ(j.deadline - j.arrival, from_ms(1000));
  }
  for (int s : per_second) EXPECT_EQ(s, 10);
  EXPECT_TRUE(std::is_sorted(jobs.begin(), jobs.end(),
                             [](const JobTemplate& a, const JobTemplate& b) { return a.arrival < b.arrival; }));
  EXPECT_EQ(jobs, generate_jobs(ws, 0.67, 0.80));
  ws.seed = 10;
  EXPECT_NE(jobs, generate_jobs(ws, 0.67, 0.80));
}

TEST(Workload, TraceKindFollowsTrace) {
  WorkloadSpec ws;
  ws.kind = WorkloadKind::trace;
  ws.trace_counts = {0, 100, 50};
  ws.duration_s = 10;
  const auto jobs = generate_jobs(ws, 0.5, 0.9);
  std::vector<int> per_second(3, 0);
  for (const auto& j : jobs) per_second.at(j.arrival.count() / 1'000'000) += j.size;
  EXPECT_EQ(per_second, (std::vector<int>{5, 60, 33}));
}

TEST(Workload, SizeDistribution) {
  std::mt19937_64 rng(1);
  JobSizeSampler s;
  const int n = 100'000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = s.draw_raw(rng);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 1.0, 0.1);
  EXPECT_NEAR(sd, 6.0, 0.3);
  for (int i = 0; i < 1000; ++i) EXPECT_GE(s.draw(rng), 1);
}

TEST(Workload, SpecValidation) {
  WorkloadSpec ws;
  ws.duration_s = 0;
  EXPECT_THROW(generate_jobs(ws, 0.5, 0.9), WorkloadError);
  ws = {};
  ws.deadline_offset_ms = 0;
  EXPECT_THROW(generate_jobs(ws, 0.5, 0.9), WorkloadError);
  ws = {};
  ws.min_qps = 10;
  ws.max_qps = 5;
  EXPECT_THROW(generate_jobs(ws, 0.5, 0.9), WorkloadError);
}

TEST(Workload, Scenario) {
  const auto jobs = parse_scenario("# c\n20,2,0.65,150\n0,1,0.67,20\n");
  ASSERT_EQ(jobs.size(), 2u);
  EXPECT_EQ(jobs[0].arrival, Micros{0});
  EXPECT_EQ(jobs[0].id, 2);
  EXPECT_EQ(jobs[1].deadline, from_ms(150));
  EXPECT_THROW(parse_scenario("0,1,0.67\n"), WorkloadError);
  EXPECT_THROW(parse_scenario("10,1,0.67,5\n"), WorkloadError);
  EXPECT_THROW(parse_scenario("0,0,0.67,5\n"), WorkloadError);
  EXPECT_THROW(parse_scenario("0,1,1.5,5\n"), WorkloadError);
}

#pragma once

#include <algorithm>
#include <queue>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "modsel/metrics.hpp"
#include "modsel/scheduler.hpp"
#include "modsel/workload.hpp"

namespace modsel {

struct SimConfig {
  ModelProfile profile;
  StrategyMatrix matrix;
  Policy policy = Policy::optimized;
  Micros optimizer_overhead{70'000};
  double discrepancy = 1.0;         // actual / profiled latency, in [0.2, 2.5]
  double discrepancy_jitter = 0.0;  // per-batch uniform +- around discrepancy
  int watermark = 2;                // pending arrivals that trigger a pass
  Micros window{4'000'000};
  std::uint64_t seed = 1;
  double feedback_weight = 0.2;
};

inline void validate(const SimConfig& cfg, std::span<const JobTemplate> jobs = {}) {
  if (cfg.matrix.profile_hash() != profile_hash(cfg.profile)) {
    throw MatrixError("strategy matrix was built for a different profile (matrix hash " +
                      detail::hex64(cfg.matrix.profile_hash()) + ", profile hash " +
                      detail::hex64(profile_hash(cfg.profile)) + ")");
  }
  if (cfg.optimizer_overhead.count() < 0) throw Error("optimizer overhead must be >= 0");
  if (!(cfg.discrepancy >= 0.2 && cfg.discrepancy <= 2.5)) {
    throw Error("discrepancy must be in [0.2, 2.5]");
  }
  if (!(cfg.discrepancy_jitter >= 0.0) || cfg.discrepancy - cfg.discrepancy_jitter <= 0.0) {
    throw Error("discrepancy jitter must be >= 0 and smaller than the discrepancy");
  }
  if (cfg.watermark < 1) throw Error("watermark must be >= 1");
  if (cfg.window.count() <= 0) throw Error("metrics window must be positive");
  if (!(cfg.feedback_weight > 0.0 && cfg.feedback_weight <= 1.0)) {
    throw Error("feedback weight must be in (0, 1]");
  }
  if (cfg.policy != Policy::none && !jobs.empty() && !cfg.matrix.sizes().empty()) {
    int largest = 0;
    for (const auto& j : jobs) largest = std::max(largest, j.size);
    if (largest > cfg.matrix.sizes().back()) {
      throw MatrixError("workload has a job of size " + std::to_string(largest) +
                        " but the matrix covers sizes up to " +
                        std::to_string(cfg.matrix.sizes().back()) +
                        "; rebuild the strategy matrix with larger sizes");
    }
  }
}

enum class EventKind { job_arrival = 0, optimize_done = 1, batch_complete = 2, metrics_tick = 3 };

struct Event {
  Micros time{0};
  EventKind kind = EventKind::job_arrival;
  std::uint64_t seq = 0;
  std::size_t job = 0;  // arrival: index into the workload
};

/// Min-heap on (time, kind, insertion order).
class EventQueue {
 public:
  void push(Micros time, EventKind kind, std::size_t job = 0) {
    heap_.push(Event{time, kind, next_seq_++, job});
  }
  Event pop() {
    Event e = heap_.top();
    heap_.pop();
    return e;
  }
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return std::tie(a.time, a.kind, a.seq) > std::tie(b.time, b.kind, b.seq);
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_seq_ = 0;
};

/// Single-worker discrete-event simulation of the scheduler.
///
/// A scheduling pass starts when none is in flight and either `watermark`
/// arrivals are pending or the worker is idle with anything pending. The pass
/// sees the queue as of its start and lands `optimizer_overhead` later; the
/// worker keeps executing in the meantime. Jobs run their parts back to back,
/// each taking profiled latency * discrepancy.
class Simulator {
 public:
  Simulator(const SimConfig& cfg, std::vector<JobTemplate> jobs)
      : cfg_(cfg),
        jobs_(std::move(jobs)),
        sched_(cfg_.profile, cfg_.matrix, cfg_.policy, cfg_.seed, cfg_.feedback_weight),
        rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
    validate(cfg_, jobs_);
    std::stable_sort(jobs_.begin(), jobs_.end(),
                     [](const JobTemplate& a, const JobTemplate& b) { return a.arrival < b.arrival; });
    log_.window = cfg_.window;
  }

  MetricsLog run() {
    for (std::size_t i = 0; i < jobs_.size(); ++i) {
      events_.push(jobs_[i].arrival, EventKind::job_arrival, i);
    }
    if (!jobs_.empty()) events_.push(cfg_.window, EventKind::metrics_tick);

    while (!events_.empty()) {
      const Event ev = events_.pop();
      const Micros now = ev.time;
      ++log_.events_processed;
      switch (ev.kind) {
        case EventKind::job_arrival: on_arrival(jobs_[ev.job], now); break;
        case EventKind::optimize_done: on_optimize_done(now); break;
        case EventKind::batch_complete: on_batch_complete(now); break;
        case EventKind::metrics_tick: on_tick(now); break;
      }
    }
    if (!sched_.queue().empty() || sched_.queue().busy()) {
      throw Error("simulation stalled with " + std::to_string(sched_.queue().size()) + " queued jobs");
    }
    std::sort(log_.jobs.begin(), log_.jobs.end(),
              [](const JobRecord& a, const JobRecord& b) { return a.id < b.id; });
    return std::move(log_);
  }

 private:
  struct Running {
    std::vector<Micros> predicted;  // per part
    std::vector<Micros> actual;
    std::size_t next = 0;
    Micros predicted_end{0};
  };

  void on_arrival(const JobTemplate& t, Micros now) {
    Job j;
    j.id = t.id;
    j.arrival = t.arrival;
    j.size = t.size;
    j.accuracy_slo = t.accuracy_slo;
    j.deadline = t.deadline;
    if (!sched_.admit(j)) {
      record_drop(j, now);
    } else if (cfg_.policy != Policy::none) {
      ++pending_;
    }
    maybe_dispatch(now);
    maybe_trigger(now);
  }

  void on_optimize_done(Micros now) {
    for (const auto& j : sched_.apply(plan_)) record_drop(j, now);
    in_flight_ = false;
    maybe_dispatch(now);
    maybe_trigger(now);
  }

  void on_batch_complete(Micros now) {
    auto& r = running_;
    sched_.feedback().update(r.predicted[r.next], r.actual[r.next]);
    ++r.next;
    if (r.next < r.actual.size()) {
      Micros left{0};
      for (std::size_t k = r.next; k < r.predicted.size(); ++k) left += r.predicted[k];
      sched_.queue().set_running_finish(now + sched_.feedback().estimate(left));
      events_.push(now + r.actual[r.next], EventKind::batch_complete);
      return;
    }
    Job j = sched_.queue().finish();
    JobRecord rec = base_record(j);
    const auto& a = j.assignment();
    rec.accuracy = a.accuracy();
    rec.credit = a.credit;
    rec.end = now;
    rec.outcome = now <= j.deadline ? Outcome::completed : Outcome::late;
    rec.predicted_end = r.predicted_end;
    log_.jobs.push_back(rec);
    maybe_dispatch(now);
    maybe_trigger(now);
  }

  void on_tick(Micros now) {
    log_.samples.push_back({now.count() / cfg_.window.count() - 1,
                            sched_.queue().size() + (sched_.queue().busy() ? 1u : 0u),
                            sched_.feedback().factor()});
    if (!events_.empty() || sched_.queue().busy() || in_flight_) {
      events_.push(now + cfg_.window, EventKind::metrics_tick);
    }
  }

  void maybe_trigger(Micros now) {
    if (cfg_.policy == Policy::none || in_flight_ || pending_ == 0) return;
    if (pending_ < cfg_.watermark && sched_.queue().busy()) return;
    plan_ = sched_.plan(now);
    pending_ = 0;
    in_flight_ = true;
    events_.push(now + cfg_.optimizer_overhead, EventKind::optimize_done);
  }

  void maybe_dispatch(Micros now) {
    if (sched_.queue().busy()) return;
    auto res = sched_.dispatch(now);
    for (const auto& j : res.dropped) record_drop(j, now);
    if (!res.job) return;
    Job j = std::move(*res.job);
    Running r;
    Micros total{0};
    for (const auto& p : j.assignment().strategy.parts()) {
      const Micros pred = cfg_.profile.latency(p.combo, p.batch);
      double d = cfg_.discrepancy;
      if (cfg_.discrepancy_jitter > 0.0) {
        d += std::uniform_real_distribution<double>(-cfg_.discrepancy_jitter,
                                                    cfg_.discrepancy_jitter)(rng_);
      }
      r.predicted.push_back(pred);
      r.actual.push_back(d == 1.0 ? pred
                                  : Micros{std::max<std::int64_t>(
                                        1, std::llround(static_cast<double>(pred.count()) * d))});
      total += pred;
    }
    r.predicted_end = now + sched_.feedback().estimate(total);
    events_.push(now + r.actual.front(), EventKind::batch_complete);
    sched_.queue().start(std::move(j), r.predicted_end);
    running_ = std::move(r);
  }

  static JobRecord base_record(const Job& j) {
    JobRecord rec;
    rec.id = j.id;
    rec.size = j.size;
    rec.accuracy_slo = j.accuracy_slo;
    rec.arrival = j.arrival;
    return rec;
  }

  void record_drop(const Job& j, Micros now) {
    JobRecord rec = base_record(j);
    rec.end = now;
    rec.outcome = Outcome::dropped;
    log_.jobs.push_back(rec);
  }

  SimConfig cfg_;
  std::vector<JobTemplate> jobs_;
  Scheduler sched_;
  std::mt19937_64 rng_;
  EventQueue events_;
  MetricsLog log_;
  Plan plan_;
  Running running_;
  int pending_ = 0;
  bool in_flight_ = false;
};

inline MetricsLog simulate(const SimConfig& cfg, std::vector<JobTemplate> jobs) {
  return Simulator(cfg, std::move(jobs)).run();
}

}  // namespace modsel

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "modsel/candidates.hpp"
#include "modsel/matrix.hpp"

namespace modsel {

using JobId = std::int64_t;

enum class JobState { queued, running, completed, dropped };

enum class Policy { optimized, random, aggressive, none };

inline constexpr Policy kAllPolicies[] = {Policy::optimized, Policy::random, Policy::aggressive,
                                          Policy::none};

inline std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::optimized: return "optimized";
    case Policy::random: return "random";
    case Policy::aggressive: return "aggressive";
    case Policy::none: return "none";
  }
  return "?";
}

inline Policy parse_policy(std::string_view name) {
  for (auto p : kAllPolicies) {
    if (to_string(p) == name) return p;
  }
  throw Error("unknown policy '" + std::string(name) +
              "' (expected optimized, random, aggressive or none)");
}

struct Job {
  JobId id = 0;
  Micros arrival{0};
  int size = 1;
  double accuracy_slo = 0.0;
  Micros deadline{0};

  CandidateSet candidates;
  std::size_t assigned = 0;  // index into candidates
  JobState state = JobState::queued;
  std::optional<Micros> completion;
  // Set once a scheduling pass has seen the job; only finalized jobs are
  // handed to the worker.
  bool finalized = false;

  const Candidate& assignment() const { return candidates.at(assigned); }
  const Candidate& fastest() const { return candidates.front(); }
  std::size_t most_accurate_index() const { return candidates.size() - 1; }
};

/// Exponentially weighted ratio of observed to predicted execution latency.
/// Schedule estimates multiply predicted latencies by this factor.
class LatencyFeedback {
 public:
  explicit LatencyFeedback(double weight = 0.2) : weight_(weight) {
    if (!(weight > 0.0 && weight <= 1.0)) throw Error("feedback weight must be in (0, 1]");
  }

  double factor() const { return factor_; }
  double weight() const { return weight_; }

  void update(Micros predicted, Micros observed) {
    if (observed.count() <= 0 || predicted.count() <= 0) {
      throw Error("latency feedback needs positive predicted and observed latency");
    }
    const double ratio = static_cast<double>(observed.count()) / static_cast<double>(predicted.count());
    factor_ = (1.0 - weight_) * factor_ + weight_ * ratio;
  }

  Micros estimate(Micros predicted) const {
    if (factor_ == 1.0) return predicted;
    return Micros{std::llround(static_cast<double>(predicted.count()) * factor_)};
  }

 private:
  double weight_;
  double factor_ = 1.0;
};

/// Queued jobs in earliest-deadline-first order (FIFO among equal deadlines)
/// plus the single running job.
class JobQueue {
 public:
  void insert(Job job) {
    const auto pos = std::upper_bound(jobs_.begin(), jobs_.end(), job.deadline,
                                      [](Micros d, const Job& j) { return d < j.deadline; });
    jobs_.insert(pos, std::move(job));
  }

  std::vector<Job>& jobs() { return jobs_; }
  const std::vector<Job>& jobs() const { return jobs_; }
  bool empty() const { return jobs_.empty(); }
  std::size_t size() const { return jobs_.size(); }

  Job* find(JobId id) {
    const auto it = std::find_if(jobs_.begin(), jobs_.end(), [&](const Job& j) { return j.id == id; });
    return it == jobs_.end() ? nullptr : &*it;
  }

  Job take(std::size_t pos) {
    Job j = std::move(jobs_.at(pos));
    jobs_.erase(jobs_.begin() + static_cast<std::ptrdiff_t>(pos));
    return j;
  }

  bool busy() const { return running_.has_value(); }
  const std::optional<Job>& running() const { return running_; }
  Micros running_finish() const { return running_finish_; }

  void start(Job job, Micros estimated_finish) {
    if (running_) throw Error("worker already running job " + std::to_string(running_->id));
    job.state = JobState::running;
    running_ = std::move(job);
    running_finish_ = estimated_finish;
  }
  void set_running_finish(Micros t) { running_finish_ = t; }

  Job finish() {
    if (!running_) throw Error("no running job to finish");
    Job j = std::move(*running_);
    running_.reset();
    return j;
  }

 private:
  std::vector<Job> jobs_;
  std::optional<Job> running_;
  Micros running_finish_{0};
};

/// Assigns the highest-accuracy candidate and inserts in EDF order. A job with
/// no SLO-meeting candidate is marked dropped and not queued.
inline bool admit(JobQueue& queue, Job& job, const StrategyMatrix& matrix,
                  const ModelProfile& profile) {
  job.candidates = candidates_for_job(matrix, profile, job.size, job.accuracy_slo);
  if (job.candidates.empty()) {
    job.state = JobState::dropped;
    return false;
  }
  job.assigned = job.most_accurate_index();
  job.state = JobState::queued;
  queue.insert(job);
  return true;
}

// ---------------------------------------------------------------------------
// Schedule estimation

struct JobEstimate {
  JobId id = 0;
  Micros start{0};
  Micros completion{0};
  bool violation = false;
};

using ScheduleEstimate = std::vector<JobEstimate>;

/// Candidate index per job, aligned with a queue slice.
using Choice = std::vector<std::size_t>;

inline Choice current_choice(std::span<const Job> jobs) {
  Choice c;
  c.reserve(jobs.size());
  for (const auto& j : jobs) c.push_back(j.assigned);
  return c;
}

inline ScheduleEstimate estimate_schedule(std::span<const Job> jobs, const Choice& choice,
                                          Micros start, const LatencyFeedback& feedback) {
  ScheduleEstimate est;
  est.reserve(jobs.size());
  Micros t = start;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const Micros begin = t;
    t += feedback.estimate(jobs[k].candidates.at(choice[k]).latency);
    est.push_back({jobs[k].id, begin, t, t > jobs[k].deadline});
  }
  return est;
}

inline ScheduleEstimate estimate_schedule(std::span<const Job> jobs, Micros start,
                                          const LatencyFeedback& feedback) {
  return estimate_schedule(jobs, current_choice(jobs), start, feedback);
}

/// Next moment the worker can take a job: now, or the running job's
/// estimated finish if later.
inline Micros dispatch_time(const JobQueue& queue, Micros now) {
  return queue.busy() ? std::max(now, queue.running_finish()) : now;
}

namespace detail {

inline std::optional<std::size_t> first_violation(std::span<const Job> jobs, const Choice& choice,
                                                  Micros start, const LatencyFeedback& feedback) {
  Micros t = start;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    t += feedback.estimate(jobs[k].candidates.at(choice[k]).latency);
    if (t > jobs[k].deadline) return k;
  }
  return std::nullopt;
}

}  // namespace detail

/// Position of the earliest-deadline job whose estimated completion is past
/// its deadline. Finishing exactly at the deadline is on time.
inline std::optional<std::size_t> detect_violation(std::span<const Job> jobs, Micros dispatch,
                                                   const LatencyFeedback& feedback) {
  return detail::first_violation(jobs, current_choice(jobs), dispatch, feedback);
}

inline std::optional<std::size_t> detect_violation(const JobQueue& queue, Micros now,
                                                   const LatencyFeedback& feedback) {
  return detect_violation(queue.jobs(), dispatch_time(queue, now), feedback);
}

struct Budget {
  Micros budget{0};
  std::size_t scope = 0;  // jobs [0, scope) are reassigned
};

/// Time budget for reassignment. With a violator: its deadline minus the
/// dispatch time, covering every job up to and including it. Without: the
/// last job's deadline minus the dispatch time, covering the whole queue.
/// None when the budget is not positive (the violator cannot be saved) or the
/// queue is empty.
inline std::optional<Budget> compute_budget(std::span<const Job> jobs,
                                            std::optional<std::size_t> violator, Micros dispatch) {
  if (jobs.empty()) return std::nullopt;
  const std::size_t last = violator ? *violator : jobs.size() - 1;
  const Micros budget = jobs[last].deadline - dispatch;
  if (budget.count() <= 0) return std::nullopt;
  return Budget{budget, last + 1};
}

// ---------------------------------------------------------------------------
// Reassignment policies

/// Picks one candidate per job maximizing sum(acc * size) subject to the total
/// estimated latency fitting `budget` and every job finishing by its own
/// deadline. Ties go to the larger minimum per-job accuracy, then to the
/// smaller total latency. None when nothing fits.
///
/// Exact multiple-choice knapsack over the jobs in order. States after k jobs
/// are (elapsed, score, min accuracy); since every constraint only tightens
/// with elapsed time, a state is dominated by any earlier-or-equal state with
/// a lexicographically better (score, min accuracy), so each stage keeps only
/// a strictly improving frontier.
inline std::optional<Choice> reassign_optimized(std::span<const Job> scope, Micros dispatch,
                                                Micros budget, const LatencyFeedback& feedback) {
  struct Frac {
    std::int64_t num;
    std::int64_t den;
  };
  auto frac_less = [](Frac a, Frac b) { return a.num * b.den < b.num * a.den; };
  struct State {
    Micros elapsed;
    std::int64_t score;
    Frac min_acc;
    std::int32_t parent;
    std::int32_t pick;
  };
  auto lex_better = [&](const State& a, const State& b) {
    if (a.score != b.score) return a.score > b.score;
    return frac_less(b.min_acc, a.min_acc);
  };

  if (scope.empty()) return Choice{};
  std::vector<std::vector<State>> stages;
  stages.reserve(scope.size() + 1);
  stages.push_back({State{Micros{0}, 0, Frac{1, 0}, -1, -1}});  // 1/0 acts as +infinity

  for (std::size_t k = 0; k < scope.size(); ++k) {
    const Job& job = scope[k];
    const Micros limit = std::min(budget, job.deadline - dispatch);
    std::vector<State> next;
    const auto& prev = stages.back();
    for (std::size_t s = 0; s < prev.size(); ++s) {
      for (std::size_t c = 0; c < job.candidates.size(); ++c) {
        const auto& cand = job.candidates[c];
        const Micros t = prev[s].elapsed + feedback.estimate(cand.latency);
        if (t > limit) continue;
        const Frac acc{cand.credit, static_cast<std::int64_t>(job.size)};
        const Frac m = (prev[s].min_acc.den == 0 || frac_less(acc, prev[s].min_acc)) ? acc
                                                                                     : prev[s].min_acc;
        next.push_back({t, prev[s].score + cand.credit, m, static_cast<std::int32_t>(s),
                        static_cast<std::int32_t>(c)});
      }
    }
    if (next.empty()) return std::nullopt;
    std::sort(next.begin(), next.end(), [&](const State& a, const State& b) {
      if (a.elapsed != b.elapsed) return a.elapsed < b.elapsed;
      if (lex_better(a, b)) return true;
      if (lex_better(b, a)) return false;
      return std::tie(a.parent, a.pick) < std::tie(b.parent, b.pick);
    });
    std::vector<State> kept;
    for (const auto& st : next) {
      if (kept.empty() || lex_better(st, kept.back())) kept.push_back(st);
    }
    stages.push_back(std::move(kept));
  }

  Choice choice(scope.size());
  std::int32_t idx = static_cast<std::int32_t>(stages.back().size()) - 1;
  for (std::size_t k = scope.size(); k > 0; --k) {
    const State& st = stages[k][idx];
    choice[k - 1] = static_cast<std::size_t>(st.pick);
    idx = st.parent;
  }
  return choice;
}

struct RandomOutcome {
  Choice choice;
  bool saved = true;  // false: the violator is still late and must be dropped
};

/// Randomized greedy: repeatedly picks a random job among those up to and
/// including the violator and moves it to its fastest SLO-meeting candidate,
/// until the violator is on time or every job in scope has been moved.
inline RandomOutcome reassign_random(std::span<const Job> jobs, std::optional<std::size_t> violator,
                                     Micros dispatch, const LatencyFeedback& feedback,
                                     std::mt19937_64& rng) {
  RandomOutcome out{current_choice(jobs), true};
  if (!violator) return out;
  const std::size_t v = *violator;
  auto violator_late = [&] {
    Micros t = dispatch;
    for (std::size_t k = 0; k <= v; ++k) t += feedback.estimate(jobs[k].candidates[out.choice[k]].latency);
    return t > jobs[v].deadline;
  };
  std::vector<std::size_t> remaining(v + 1);
  for (std::size_t k = 0; k <= v; ++k) remaining[k] = k;
  while (violator_late()) {
    if (remaining.empty()) {
      out.saved = false;
      break;
    }
    std::uniform_int_distribution<std::size_t> pick(0, remaining.size() - 1);
    const std::size_t r = pick(rng);
    out.choice[remaining[r]] = 0;
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(r));
  }
  return out;
}

/// Every job moves to its fastest SLO-meeting candidate.
inline Choice reassign_aggressive(std::span<const Job> jobs) { return Choice(jobs.size(), 0); }

/// Walks jobs in EDF order promoting each to its next more accurate candidate
/// while the whole-queue estimate stays violation free, until nothing moves.
inline Choice try_upgrade(std::span<const Job> jobs, Micros dispatch, const LatencyFeedback& feedback) {
  Choice choice = current_choice(jobs);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      while (choice[k] + 1 < jobs[k].candidates.size()) {
        ++choice[k];
        if (detail::first_violation(jobs, choice, dispatch, feedback)) {
          --choice[k];
          break;
        }
        changed = true;
      }
    }
  }
  return choice;
}

struct DispatchResult {
  std::optional<Job> job;
  std::vector<Job> dropped;
};

/// Pops the earliest-deadline finalized job. Jobs whose fastest candidate can
/// no longer meet the deadline are dropped on the way.
inline DispatchResult dispatch(JobQueue& queue, Micros now, const LatencyFeedback& feedback) {
  DispatchResult out;
  if (queue.busy()) return out;
  std::size_t pos = 0;
  while (pos < queue.size()) {
    const Job& head = queue.jobs()[pos];
    if (!head.finalized) {
      ++pos;
      continue;
    }
    if (now + feedback.estimate(head.fastest().latency) > head.deadline) {
      Job j = queue.take(pos);
      j.state = JobState::dropped;
      out.dropped.push_back(std::move(j));
      continue;
    }
    out.job = queue.take(pos);
    break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monitor

/// Outcome of one scheduling pass over a queue snapshot.
struct Plan {
  std::map<JobId, std::size_t> assignments;
  std::vector<JobId> drops;
};

/// Owns the job queue and latency feedback, and runs the configured policy.
class Scheduler {
 public:
  Scheduler(const ModelProfile& profile, const StrategyMatrix& matrix, Policy policy,
            std::uint64_t seed, double feedback_weight = 0.2)
      : profile_(&profile), matrix_(&matrix), policy_(policy), rng_(seed), feedback_(feedback_weight) {}

  Policy policy() const { return policy_; }
  JobQueue& queue() { return queue_; }
  const JobQueue& queue() const { return queue_; }
  LatencyFeedback& feedback() { return feedback_; }
  const LatencyFeedback& feedback() const { return feedback_; }

  /// The modality-agnostic policy runs every request on all modalities.
  bool admit(Job& job) {
    if (policy_ != Policy::none) return modsel::admit(queue_, job, *matrix_, *profile_);
    job.candidates.clear();
    const Candidate all = make_solution(
        single_combo_strategy(*profile_, profile_->full_combo(), job.size), *profile_);
    if (!meets_accuracy(all.credit, job.size, job.accuracy_slo)) {
      job.state = JobState::dropped;
      return false;
    }
    job.candidates.push_back(all);
    job.assigned = 0;
    job.state = JobState::queued;
    job.finalized = true;
    queue_.insert(job);
    return true;
  }

  Plan plan(Micros now) {
    Plan out;
    std::vector<Job> work = queue_.jobs();
    if (policy_ == Policy::none) {
      for (const auto& j : work) out.assignments[j.id] = j.assigned;
      return out;
    }
    const Micros start = dispatch_time(queue_, now);
    auto apply = [&](const Choice& c, std::size_t n) {
      for (std::size_t k = 0; k < n; ++k) work[k].assigned = c[k];
    };

    if (policy_ == Policy::aggressive) apply(reassign_aggressive(work), work.size());
    while (auto v = detect_violation(work, start, feedback_)) {
      bool saved = false;
      if (policy_ == Policy::optimized) {
        if (const auto b = compute_budget(work, v, start)) {
          const std::span<const Job> scope(work.data(), b->scope);
          if (const auto c = reassign_optimized(scope, start, b->budget, feedback_)) {
            apply(*c, b->scope);
            saved = true;
          }
        }
      } else if (policy_ == Policy::random) {
        const auto r = reassign_random(work, v, start, feedback_, rng_);
        apply(r.choice, work.size());
        saved = r.saved;
      }
      if (!saved) {
        out.drops.push_back(work[*v].id);
        work.erase(work.begin() + static_cast<std::ptrdiff_t>(*v));
      }
    }
    if (policy_ == Policy::optimized) {
      if (const auto b = compute_budget(work, std::nullopt, start)) {
        if (const auto c = reassign_optimized(work, start, b->budget, feedback_)) apply(*c, work.size());
      }
    } else if (policy_ == Policy::random) {
      apply(try_upgrade(work, start, feedback_), work.size());
    }
    for (const auto& j : work) out.assignments[j.id] = j.assigned;
    return out;
  }

  /// Lands a plan: jobs still queued take their new assignment and become
  /// finalized; planned drops that are still queued are removed and returned.
  std::vector<Job> apply(const Plan& plan) {
    std::vector<Job> dropped;
    for (const JobId id : plan.drops) {
      auto& jobs = queue_.jobs();
      const auto it = std::find_if(jobs.begin(), jobs.end(), [&](const Job& j) { return j.id == id; });
      if (it == jobs.end()) continue;
      Job j = queue_.take(static_cast<std::size_t>(it - jobs.begin()));
      j.state = JobState::dropped;
      dropped.push_back(std::move(j));
    }
    for (const auto& [id, idx] : plan.assignments) {
      if (Job* j = queue_.find(id)) {
        j->assigned = idx;
        j->finalized = true;
      }
    }
    return dropped;
  }

  DispatchResult dispatch(Micros now) { return modsel::dispatch(queue_, now, feedback_); }

 private:
  const ModelProfile* profile_;
  const StrategyMatrix* matrix_;
  Policy policy_;
  std::mt19937_64 rng_;
  LatencyFeedback feedback_;
  JobQueue queue_;
};

}  // namespace modsel

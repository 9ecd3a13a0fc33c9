#pragma once

#include <functional>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "modsel/profile.hpp"
#include "modsel/strategy.hpp"

namespace modsel {

/// Exact solver for the offline problem: cover `job_size` requests with
/// (combo, batch) parts minimizing total latency subject to
///   sum(batch) == job_size  and  sum(acc(combo) * batch) >= alpha * job_size.
///
/// Accuracy depends only on how many requests each combo serves, and latency
/// only on how each combo's share is cut into batches. The solver therefore
/// precomputes the best batching of n requests for every combo, then runs a
/// dynamic program over combos (ascending mask) whose states are
/// (requests covered, accuracy credit). States at the same request count are
/// pruned to the (credit, latency) Pareto frontier: a state with strictly more
/// credit and no more latency wins under every completion.
///
/// One run covers every job size up to `max_size` and every accuracy
/// objective, so a whole strategy matrix comes from a single solver.
class OfflineSolver {
 public:
  OfflineSolver(const ModelProfile& profile, int max_size) : max_size_(max_size) {
    if (max_size < 1) throw Error("offline solver needs max_size >= 1");
    build_splits(profile);
    run(profile);
  }

  int max_size() const { return max_size_; }

  /// Optimal strategies for `job_size`, credit descending, latency strictly
  /// decreasing along the list.
  const std::vector<Solution>& frontier(int job_size) const {
    if (job_size < 1 || job_size > max_size_) {
      throw Error("job size " + std::to_string(job_size) + " outside solver range 1.." +
                  std::to_string(max_size_));
    }
    return frontier_[job_size];
  }

  /// Minimum-latency strategy meeting `alpha`; ties go to higher accuracy,
  /// then fewer parts, then canonical part order. None when infeasible.
  std::optional<Solution> solve(int job_size, double alpha) const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must be in [0, 1]");
    const std::int64_t target = to_alpha_units(alpha) * job_size;
    const auto& f = frontier(job_size);
    std::optional<Solution> best;
    for (const auto& s : f) {
      if (s.credit < target) break;
      best = s;
    }
    return best;
  }

 private:
  struct Split {
    Micros latency{0};
    std::vector<int> batches;  // ascending
  };

  struct State {
    std::int64_t credit = 0;
    Micros latency{0};
    int parts = 0;
    std::vector<int> counts;  // requests per combo, indexed by mask - 1
  };

  void build_splits(const ModelProfile& profile) {
    const int b_max = profile.max_batch();
    combos_ = profile.combos();
    accuracy_.clear();
    splits_.assign(combos_.size(), {});
    for (std::size_t ci = 0; ci < combos_.size(); ++ci) {
      const ModalityCombo c = combos_[ci];
      accuracy_.push_back(profile.accuracy_units(c));
      auto& best = splits_[ci];
      best.assign(max_size_ + 1, Split{});
      for (int n = 1; n <= max_size_; ++n) {
        std::optional<Split> chosen;
        for (int b = 1; b <= std::min(b_max, n); ++b) {
          Split cand = best[n - b];
          cand.latency += profile.latency(c, b);
          cand.batches.insert(std::upper_bound(cand.batches.begin(), cand.batches.end(), b), b);
          if (!chosen || split_before(cand, *chosen)) chosen = std::move(cand);
        }
        best[n] = std::move(*chosen);
      }
    }
  }

  static bool split_before(const Split& a, const Split& b) {
    if (a.latency != b.latency) return a.latency < b.latency;
    if (a.batches.size() != b.batches.size()) return a.batches.size() < b.batches.size();
    return a.batches < b.batches;
  }

  std::vector<Part> materialize(const std::vector<int>& counts) const {
    std::vector<Part> parts;
    for (std::size_t ci = 0; ci < counts.size(); ++ci) {
      if (counts[ci] == 0) continue;
      for (int b : splits_[ci][counts[ci]].batches) parts.push_back({combos_[ci], b});
    }
    return parts;
  }

  bool state_before(const State& a, const State& b) const {
    if (a.latency != b.latency) return a.latency < b.latency;
    if (a.parts != b.parts) return a.parts < b.parts;
    return materialize(a.counts) < materialize(b.counts);
  }

  void run(const ModelProfile&) {
    const std::size_t m = combos_.size();
    std::vector<std::vector<State>> layers(max_size_ + 1);
    layers[0].push_back(State{0, Micros{0}, 0, std::vector<int>(m, 0)});

    for (std::size_t ci = 0; ci < m; ++ci) {
      std::vector<std::map<std::int64_t, State>> next(max_size_ + 1);
      for (int r = 0; r <= max_size_; ++r) {
        for (const auto& st : layers[r]) {
          for (int n = 0; r + n <= max_size_; ++n) {
            const Split& sp = splits_[ci][n];
            State ns = st;
            ns.credit += accuracy_[ci] * n;
            ns.latency += sp.latency;
            ns.parts += static_cast<int>(sp.batches.size());
            ns.counts[ci] = n;
            auto [it, inserted] = next[r + n].try_emplace(ns.credit, ns);
            if (!inserted && state_before(ns, it->second)) it->second = std::move(ns);
          }
        }
      }
      for (int r = 0; r <= max_size_; ++r) {
        layers[r].clear();
        std::optional<Micros> min_latency;
        for (auto it = next[r].rbegin(); it != next[r].rend(); ++it) {
          if (!min_latency || it->second.latency < *min_latency) {
            min_latency = it->second.latency;
            layers[r].push_back(std::move(it->second));
          }
        }
      }
    }

    frontier_.assign(max_size_ + 1, {});
    for (int r = 1; r <= max_size_; ++r) {
      for (const auto& st : layers[r]) {
        frontier_[r].push_back(Solution{Strategy(materialize(st.counts)), st.latency, st.credit});
      }
    }
  }

  int max_size_;
  std::vector<ModalityCombo> combos_;
  std::vector<std::int64_t> accuracy_;
  std::vector<std::vector<Split>> splits_;
  std::vector<std::vector<Solution>> frontier_;
};

inline std::optional<Solution> solve_offline(const ModelProfile& profile, int job_size,
                                             double alpha) {
  if (job_size < 1) throw Error("job_size must be >= 1");
  return OfflineSolver(profile, job_size).solve(job_size, alpha);
}

// ---------------------------------------------------------------------------
// Exhaustive reference

inline constexpr int kBruteForceMaxSize = 16;

/// Visits every multiset of (combo, batch) parts whose sizes sum to at most
/// `max_size` (including the empty one). Parts arrive in canonical order.
inline void enumerate_strategies(
    const ModelProfile& profile, int max_size,
    const std::function<void(const std::vector<Part>&, int size, Micros latency,
                             std::int64_t credit)>& visit) {
  struct Item {
    Part part;
    Micros latency;
    std::int64_t credit;
  };
  std::vector<Item> items;
  for (const auto c : profile.combos()) {
    for (int b = 1; b <= profile.max_batch(); ++b) {
      items.push_back({{c, b}, profile.latency(c, b), profile.accuracy_units(c) * b});
    }
  }
  std::vector<Part> current;
  std::function<void(std::size_t, int, Micros, std::int64_t)> rec =
      [&](std::size_t start, int size, Micros latency, std::int64_t credit) {
        visit(current, size, latency, credit);
        for (std::size_t i = start; i < items.size(); ++i) {
          if (size + items[i].part.batch > max_size) continue;
          current.push_back(items[i].part);
          rec(i, size + items[i].part.batch, latency + items[i].latency, credit + items[i].credit);
          current.pop_back();
        }
      };
  rec(0, 0, Micros{0}, 0);
}

namespace detail {

inline bool raw_before(Micros la, std::int64_t ca, const std::vector<Part>& pa, Micros lb,
                       std::int64_t cb, const std::vector<Part>& pb) {
  if (la != lb) return la < lb;
  if (ca != cb) return ca > cb;
  if (pa.size() != pb.size()) return pa.size() < pb.size();
  return pa < pb;
}

}  // namespace detail

/// Exhaustive search over every strategy for one (size, alpha).
inline std::optional<Solution> brute_force_offline(const ModelProfile& profile, int job_size,
                                                   double alpha) {
  if (job_size < 1 || job_size > kBruteForceMaxSize) {
    throw Error("brute force limited to job sizes 1.." + std::to_string(kBruteForceMaxSize));
  }
  const std::int64_t target = to_alpha_units(alpha) * job_size;
  std::optional<Solution> best;
  std::vector<Part> best_parts;
  enumerate_strategies(profile, job_size,
                       [&](const std::vector<Part>& parts, int size, Micros lat, std::int64_t credit) {
                         if (size != job_size || credit < target) return;
                         if (!best || detail::raw_before(lat, credit, parts, best->latency,
                                                         best->credit, best_parts)) {
                           best = Solution{Strategy{}, lat, credit};
                           best_parts = parts;
                         }
                       });
  if (best) best->strategy = Strategy(best_parts);
  return best;
}

/// One exhaustive enumeration answering many (size, alpha) queries. For each
/// size it keeps the best strategy per exact credit value, which is enough to
/// answer any accuracy objective under the offline ranking.
class BruteForceTable {
 public:
  BruteForceTable(const ModelProfile& profile, int max_size) : by_size_(max_size + 1) {
    if (max_size < 1 || max_size > kBruteForceMaxSize) {
      throw Error("brute force limited to job sizes 1.." + std::to_string(kBruteForceMaxSize));
    }
    enumerate_strategies(profile, max_size,
                         [&](const std::vector<Part>& parts, int size, Micros lat, std::int64_t credit) {
                           if (size == 0) return;
                           auto [it, inserted] = by_size_[size].try_emplace(credit, Entry{lat, parts});
                           if (!inserted && detail::raw_before(lat, credit, parts, it->second.latency,
                                                               credit, it->second.parts)) {
                             it->second = Entry{lat, parts};
                           }
                         });
  }

  std::optional<Solution> solve(int job_size, double alpha) const {
    const std::int64_t target = to_alpha_units(alpha) * job_size;
    const Entry* best = nullptr;
    std::int64_t best_credit = 0;
    for (const auto& [credit, e] : by_size_.at(job_size)) {
      if (credit < target) continue;
      if (!best || detail::raw_before(e.latency, credit, e.parts, best->latency, best_credit,
                                      best->parts)) {
        best = &e;
        best_credit = credit;
      }
    }
    if (!best) return std::nullopt;
    return Solution{Strategy(best->parts), best->latency, best_credit};
  }

 private:
  struct Entry {
    Micros latency;
    std::vector<Part> parts;
  };
  std::vector<std::unordered_map<std::int64_t, Entry>> by_size_;
};

}  // namespace modsel

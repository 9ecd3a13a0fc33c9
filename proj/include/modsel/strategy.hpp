#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "modsel/profile.hpp"

namespace modsel {

/// One batch of a strategy: `batch` requests processed with `combo`.
struct Part {
  ModalityCombo combo;
  int batch = 0;

  auto operator<=>(const Part&) const = default;
};

/// A modality selection strategy for one job: a multiset of parts whose batch
/// sizes sum to the job size. Parts are kept sorted by (combo, batch) so equal
/// strategies compare equal.
class Strategy {
 public:
  Strategy() = default;
  explicit Strategy(std::vector<Part> parts) : parts_(std::move(parts)) {
    std::sort(parts_.begin(), parts_.end());
    for (const auto& p : parts_) {
      if (p.batch < 1) throw Error("strategy part with non-positive batch size");
      if (p.combo.mask == 0) throw Error("strategy part with empty modality combo");
      job_size_ += p.batch;
    }
  }

  const std::vector<Part>& parts() const { return parts_; }
  int job_size() const { return job_size_; }
  bool empty() const { return parts_.empty(); }

  bool operator==(const Strategy&) const = default;
  // Canonical order: lexicographic over the sorted part list.
  auto operator<=>(const Strategy& other) const { return parts_ <=> other.parts_; }

 private:
  std::vector<Part> parts_;
  int job_size_ = 0;
};

inline void check_strategy(const Strategy& s, const ModelProfile& profile) {
  for (const auto& p : s.parts()) {
    if (!profile.has_combo(p.combo)) {
      throw Error("strategy uses combo mask " + std::to_string(p.combo.mask) +
                  " absent from profile '" + profile.name() + "'");
    }
    if (p.batch > profile.max_batch()) {
      throw Error("strategy batch " + std::to_string(p.batch) + " exceeds max_batch " +
                  std::to_string(profile.max_batch()));
    }
  }
}

/// Sum of D(combo, batch) over parts; batches run back to back.
inline Micros strategy_latency(const Strategy& s, const ModelProfile& profile) {
  check_strategy(s, profile);
  Micros total{0};
  for (const auto& p : s.parts()) total += profile.latency(p.combo, p.batch);
  return total;
}

/// Accuracy credit: sum of acc(combo) * batch in 1e-4 units. The accuracy
/// constraint for objective alpha is credit >= alpha_units * job_size.
inline std::int64_t strategy_credit(const Strategy& s, const ModelProfile& profile) {
  check_strategy(s, profile);
  std::int64_t credit = 0;
  for (const auto& p : s.parts()) credit += profile.accuracy_units(p.combo) * p.batch;
  return credit;
}

inline double effective_accuracy(const Strategy& s, const ModelProfile& profile) {
  if (s.job_size() == 0) return 0.0;
  return static_cast<double>(strategy_credit(s, profile)) /
         static_cast<double>(kAccuracyScale * s.job_size());
}

inline bool meets_accuracy(std::int64_t credit, int job_size, double alpha) {
  return credit >= to_alpha_units(alpha) * job_size;
}

/// Every request on one combo, split into the fewest full batches.
inline Strategy single_combo_strategy(const ModelProfile& profile, ModalityCombo combo,
                                      int job_size) {
  std::vector<Part> parts;
  for (int left = job_size; left > 0; left -= profile.max_batch()) {
    parts.push_back({combo, std::min(left, profile.max_batch())});
  }
  return Strategy(std::move(parts));
}

inline std::string describe(const Strategy& s, const ModelProfile& profile) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.parts().size(); ++i) {
    if (i) out += ", ";
    out += "(" + profile.combo_key(s.parts()[i].combo) + " x" +
           std::to_string(s.parts()[i].batch) + ")";
  }
  return out + "]";
}

/// A strategy with its derived latency and accuracy credit.
struct Solution {
  Strategy strategy;
  Micros latency{0};
  std::int64_t credit = 0;

  int job_size() const { return strategy.job_size(); }
  double accuracy() const {
    return job_size() == 0 ? 0.0
                           : static_cast<double>(credit) / static_cast<double>(kAccuracyScale * job_size());
  }
  bool operator==(const Solution&) const = default;
};

inline Solution make_solution(Strategy s, const ModelProfile& profile) {
  Solution sol;
  sol.latency = strategy_latency(s, profile);
  sol.credit = strategy_credit(s, profile);
  sol.strategy = std::move(s);
  return sol;
}

/// Offline ranking between two strategies of the same job size: lower latency,
/// then higher accuracy, then fewer parts, then canonical part order.
inline bool ranks_before(const Solution& a, const Solution& b) {
  if (a.latency != b.latency) return a.latency < b.latency;
  if (a.credit != b.credit) return a.credit > b.credit;
  if (a.strategy.parts().size() != b.strategy.parts().size()) {
    return a.strategy.parts().size() < b.strategy.parts().size();
  }
  return a.strategy < b.strategy;
}

}  // namespace modsel

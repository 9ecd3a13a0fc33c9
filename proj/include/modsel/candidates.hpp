#pragma once

#include <algorithm>
#include <vector>

#include "modsel/matrix.hpp"

namespace modsel {

/// A job's strategy options: Pareto frontier of SLO-meeting strategies,
/// ascending latency (and therefore ascending accuracy). Index 0 is the
/// fastest, the last entry the most accurate.
using Candidate = Solution;
using CandidateSet = std::vector<Candidate>;

/// Drops `strategy.job_size() - new_size` requests, always from the
/// lowest-accuracy combo first. The average accuracy cannot decrease and,
/// since latency is monotone in batch size, neither can latency increase.
inline Strategy truncate_strategy(const Strategy& strategy, const ModelProfile& profile,
                                  int new_size) {
  if (new_size < 1 || new_size > strategy.job_size()) {
    throw Error("cannot truncate a strategy of size " + std::to_string(strategy.job_size()) +
                " to " + std::to_string(new_size));
  }
  std::vector<Part> parts = strategy.parts();
  std::stable_sort(parts.begin(), parts.end(), [&](const Part& a, const Part& b) {
    const auto ua = profile.accuracy_units(a.combo);
    const auto ub = profile.accuracy_units(b.combo);
    if (ua != ub) return ua < ub;
    if (a.combo != b.combo) return a.combo < b.combo;
    return a.batch > b.batch;
  });
  int excess = strategy.job_size() - new_size;
  for (auto& p : parts) {
    const int take = std::min(excess, p.batch);
    p.batch -= take;
    excess -= take;
    if (excess == 0) break;
  }
  std::erase_if(parts, [](const Part& p) { return p.batch == 0; });
  return Strategy(std::move(parts));
}

/// Keeps strictly improving (latency, accuracy) pairs, sorted by latency.
inline CandidateSet pareto_prune(CandidateSet cands) {
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.latency != b.latency) return a.latency < b.latency;
    if (a.credit != b.credit) return a.credit > b.credit;
    return a.strategy < b.strategy;
  });
  CandidateSet out;
  for (auto& c : cands) {
    if (out.empty() || c.credit > out.back().credit) out.push_back(std::move(c));
  }
  return out;
}

/// Candidate strategies for a job, drawn from every matrix cell at the job's
/// size whose accuracy level is at least the job's SLO.
///
/// A size missing from the matrix is served by the next larger profiled size,
/// truncated to the real size. Sizes beyond the largest profiled size are an
/// error: the matrix must be rebuilt with a wider size range.
inline CandidateSet candidates_for_job(const StrategyMatrix& matrix, const ModelProfile& profile,
                                       int job_size, double accuracy_slo) {
  if (job_size < 1) throw Error("job size must be >= 1");
  const auto& sizes = matrix.sizes();
  const auto it = std::lower_bound(sizes.begin(), sizes.end(), job_size);
  if (it == sizes.end()) {
    throw MatrixError("job size " + std::to_string(job_size) +
                      " exceeds the largest profiled size " +
                      (sizes.empty() ? std::string("(none)") : std::to_string(sizes.back())) +
                      "; rebuild the strategy matrix with larger sizes");
  }
  const std::size_t si = static_cast<std::size_t>(it - sizes.begin());
  const std::int64_t slo_units = to_alpha_units(accuracy_slo);

  CandidateSet raw;
  for (std::size_t ai = 0; ai < matrix.alphas().size(); ++ai) {
    if (to_alpha_units(matrix.alphas()[ai]) < slo_units) continue;
    const auto& cell = matrix.at(si, ai);
    if (!cell) continue;
    Candidate c = *cell;
    if (*it != job_size) c = make_solution(truncate_strategy(c.strategy, profile, job_size), profile);
    if (c.credit < slo_units * job_size) continue;
    raw.push_back(std::move(c));
  }
  return pareto_prune(std::move(raw));
}

}  // namespace modsel

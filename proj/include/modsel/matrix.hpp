#pragma once

#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "modsel/offline.hpp"
#include "modsel/profile.hpp"
#include "modsel/strategy.hpp"

namespace modsel {

class MatrixError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kMatrixFormatVersion = 1;

/// Precomputed optimal strategy per (job size, accuracy level). An empty cell
/// means the accuracy level is unattainable.
class StrategyMatrix {
 public:
  StrategyMatrix() = default;
  StrategyMatrix(std::string profile_name, std::uint64_t profile_hash,
                 std::vector<std::string> modalities, std::vector<int> sizes,
                 std::vector<double> alphas, std::vector<std::optional<Solution>> cells)
      : profile_name_(std::move(profile_name)),
        profile_hash_(profile_hash),
        modalities_(std::move(modalities)),
        sizes_(std::move(sizes)),
        alphas_(std::move(alphas)),
        cells_(std::move(cells)) {
    if (cells_.size() != sizes_.size() * alphas_.size()) {
      throw MatrixError("matrix: cell count does not match sizes x alphas");
    }
  }

  const std::string& profile_name() const { return profile_name_; }
  std::uint64_t profile_hash() const { return profile_hash_; }
  const std::vector<std::string>& modalities() const { return modalities_; }
  const std::vector<int>& sizes() const { return sizes_; }
  const std::vector<double>& alphas() const { return alphas_; }
  std::size_t cell_count() const { return cells_.size(); }

  const std::optional<Solution>& at(std::size_t size_idx, std::size_t alpha_idx) const {
    return cells_.at(size_idx * alphas_.size() + alpha_idx);
  }

  std::optional<std::size_t> size_index(int size) const {
    const auto it = std::lower_bound(sizes_.begin(), sizes_.end(), size);
    if (it == sizes_.end() || *it != size) return std::nullopt;
    return static_cast<std::size_t>(it - sizes_.begin());
  }

  std::optional<std::size_t> alpha_index(double alpha) const {
    const auto units = to_alpha_units(alpha);
    for (std::size_t i = 0; i < alphas_.size(); ++i) {
      if (to_alpha_units(alphas_[i]) == units) return i;
    }
    return std::nullopt;
  }

  const std::optional<Solution>& cell(int size, double alpha) const {
    const auto si = size_index(size);
    const auto ai = alpha_index(alpha);
    if (!si || !ai) {
      throw MatrixError("matrix has no cell for size " + std::to_string(size) + " alpha " +
                        std::to_string(alpha));
    }
    return at(*si, *ai);
  }

  std::size_t feasible_count() const {
    return static_cast<std::size_t>(
        std::count_if(cells_.begin(), cells_.end(), [](const auto& c) { return c.has_value(); }));
  }

  bool operator==(const StrategyMatrix&) const = default;

 private:
  std::string profile_name_;
  std::uint64_t profile_hash_ = 0;
  std::vector<std::string> modalities_;
  std::vector<int> sizes_;
  std::vector<double> alphas_;
  std::vector<std::optional<Solution>> cells_;
};

/// Accuracy levels from the lowest combo accuracy (rounded down to `step`)
/// up to the highest, plus every exact combo accuracy.
inline std::vector<double> default_alpha_grid(const ModelProfile& profile, double step = 0.01) {
  if (!(step > 0.0)) throw MatrixError("alpha grid step must be positive");
  const std::int64_t step_units = std::max<std::int64_t>(1, std::llround(step * kAccuracyScale));
  const std::int64_t lo = (profile.min_accuracy_units() / step_units) * step_units;
  const std::int64_t hi = profile.max_accuracy_units();
  std::set<std::int64_t> units;
  for (std::int64_t u = lo; u <= hi; u += step_units) units.insert(u);
  for (const auto c : profile.combos()) units.insert(profile.accuracy_units(c));
  std::vector<double> grid;
  for (auto u : units) grid.push_back(from_accuracy_units(u));
  return grid;
}

inline std::vector<int> size_range(int lo, int hi) {
  std::vector<int> v;
  for (int s = lo; s <= hi; ++s) v.push_back(s);
  return v;
}

/// Checks the structural matrix invariants: sorted axes, every stored strategy
/// covers its size and meets its alpha, latency non-decreasing along both
/// axes. With a profile, also recomputes latencies and credits and checks that
/// a cell is empty exactly when alpha exceeds every combo accuracy.
inline void validate_matrix(const StrategyMatrix& m, const ModelProfile* profile = nullptr) {
  const auto& sizes = m.sizes();
  const auto& alphas = m.alphas();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1 || (i > 0 && sizes[i] <= sizes[i - 1])) {
      throw MatrixError("matrix: sizes must be positive and strictly ascending");
    }
  }
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] >= 0.0 && alphas[i] <= 1.0) ||
        (i > 0 && to_alpha_units(alphas[i]) <= to_alpha_units(alphas[i - 1]))) {
      throw MatrixError("matrix: alphas must lie in [0, 1] and be strictly ascending");
    }
  }
  if (profile && profile_hash(*profile) != m.profile_hash()) {
    throw MatrixError("matrix: profile hash mismatch (matrix built for '" + m.profile_name() +
                      "')");
  }
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
      const auto& c = m.at(si, ai);
      const std::string where =
          "matrix cell (" + std::to_string(sizes[si]) + ", " + std::to_string(alphas[ai]) + ")";
      if (profile) {
        const bool attainable = to_alpha_units(alphas[ai]) <= profile->max_accuracy_units();
        if (attainable != c.has_value()) {
          throw MatrixError(where + ": feasibility does not match profile");
        }
      }
      if (!c) continue;
      if (c->strategy.job_size() != sizes[si]) throw MatrixError(where + ": strategy size mismatch");
      if (!meets_accuracy(c->credit, sizes[si], alphas[ai])) {
        throw MatrixError(where + ": strategy misses its accuracy level");
      }
      if (profile) {
        if (strategy_latency(c->strategy, *profile) != c->latency ||
            strategy_credit(c->strategy, *profile) != c->credit) {
          throw MatrixError(where + ": stored latency/accuracy disagree with profile");
        }
      }
      if (ai > 0 && m.at(si, ai - 1) && m.at(si, ai - 1)->latency > c->latency) {
        throw MatrixError(where + ": latency decreases as alpha grows");
      }
      if (ai > 0 && !m.at(si, ai - 1)) {
        throw MatrixError(where + ": feasible above an infeasible alpha");
      }
      if (si > 0 && m.at(si - 1, ai) && m.at(si - 1, ai)->latency > c->latency) {
        throw MatrixError(where + ": latency decreases as size grows");
      }
    }
  }
}

inline StrategyMatrix build_matrix(const ModelProfile& profile, std::vector<int> sizes,
                                   std::vector<double> alphas) {
  if (sizes.empty() || alphas.empty()) throw MatrixError("matrix: empty size or alpha list");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1 || (i > 0 && sizes[i] <= sizes[i - 1])) {
      throw MatrixError("matrix: sizes must be positive and strictly ascending");
    }
  }
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] >= 0.0 && alphas[i] <= 1.0) || (i > 0 && alphas[i] <= alphas[i - 1])) {
      throw MatrixError("matrix: alphas must lie in [0, 1] and be strictly ascending");
    }
  }
  const OfflineSolver solver(profile, sizes.back());
  std::vector<std::optional<Solution>> cells;
  cells.reserve(sizes.size() * alphas.size());
  for (int s : sizes) {
    for (double a : alphas) cells.push_back(solver.solve(s, a));
  }
  StrategyMatrix m(profile.name(), profile_hash(profile), profile.modalities(), std::move(sizes),
                   std::move(alphas), std::move(cells));
  validate_matrix(m, &profile);
  return m;
}

// ---------------------------------------------------------------------------
// File format
//
// {
//   "format": "modsel-strategy-matrix", "version": 1,
//   "profile": {"name": str, "hash": 16 hex digits},
//   "modalities": [str, ...],            // profile order; combo keys refer to it
//   "sizes": [int, ...],                 // strictly ascending
//   "alphas": [number, ...],             // strictly ascending, in [0, 1]
//   "cells": [[cell|null, ...], ...]     // cells[size_idx][alpha_idx]
// }
// cell = {"latency_us": int, "credit": int, "accuracy": number,
//         "parts": [[combo_key, batch], ...]}
// "credit" is sum(acc * batch) in 1e-4 units; "accuracy" is informational.

namespace detail {

inline std::string combo_key_from(const std::vector<std::string>& modalities, ModalityCombo c) {
  std::string key;
  for (std::size_t k = 0; k < modalities.size(); ++k) {
    if (c.mask & (1u << k)) {
      if (!key.empty()) key += '+';
      key += modalities[k];
    }
  }
  return key;
}

inline ModalityCombo combo_from_key(const std::vector<std::string>& modalities,
                                    const std::string& key) {
  std::uint32_t mask = 0;
  std::size_t pos = 0;
  while (pos <= key.size()) {
    const std::size_t plus = std::min(key.find('+', pos), key.size());
    const std::string part = key.substr(pos, plus - pos);
    const auto it = std::find(modalities.begin(), modalities.end(), part);
    if (it == modalities.end()) throw MatrixError("matrix: unknown modality in '" + key + "'");
    mask |= 1u << (it - modalities.begin());
    pos = plus + 1;
  }
  return {mask};
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline nlohmann::json matrix_to_json(const StrategyMatrix& m) {
  nlohmann::json doc;
  doc["format"] = "modsel-strategy-matrix";
  doc["version"] = kMatrixFormatVersion;
  doc["profile"] = {{"name", m.profile_name()}, {"hash", detail::hex64(m.profile_hash())}};
  doc["modalities"] = m.modalities();
  doc["sizes"] = m.sizes();
  doc["alphas"] = m.alphas();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t si = 0; si < m.sizes().size(); ++si) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t ai = 0; ai < m.alphas().size(); ++ai) {
      const auto& c = m.at(si, ai);
      if (!c) {
        row.push_back(nullptr);
        continue;
      }
      nlohmann::json parts = nlohmann::json::array();
      for (const auto& p : c->strategy.parts()) {
        parts.push_back({detail::combo_key_from(m.modalities(), p.combo), p.batch});
      }
      row.push_back({{"latency_us", c->latency.count()},
                     {"credit", c->credit},
                     {"accuracy", c->accuracy()},
                     {"parts", std::move(parts)}});
    }
    rows.push_back(std::move(row));
  }
  doc["cells"] = std::move(rows);
  return doc;
}

inline StrategyMatrix matrix_from_json(const nlohmann::json& doc,
                                       const ModelProfile* profile = nullptr) {
  try {
    if (!doc.is_object() || doc.value("format", "") != "modsel-strategy-matrix") {
      throw MatrixError("matrix: not a strategy matrix document");
    }
    if (doc.at("version").get<int>() != kMatrixFormatVersion) {
      throw MatrixError("matrix: unsupported version " + doc.at("version").dump());
    }
    const auto& prof = doc.at("profile");
    const std::string hash_hex = prof.at("hash").get<std::string>();
    std::size_t consumed = 0;
    const std::uint64_t hash = std::stoull(hash_hex, &consumed, 16);
    if (consumed != hash_hex.size()) throw MatrixError("matrix: malformed profile hash");
    auto modalities = doc.at("modalities").get<std::vector<std::string>>();
    auto sizes = doc.at("sizes").get<std::vector<int>>();
    auto alphas = doc.at("alphas").get<std::vector<double>>();
    const auto& rows = doc.at("cells");
    if (!rows.is_array() || rows.size() != sizes.size()) {
      throw MatrixError("matrix: cells must have one row per size");
    }
    std::vector<std::optional<Solution>> cells;
    for (std::size_t si = 0; si < sizes.size(); ++si) {
      const auto& row = rows[si];
      if (!row.is_array() || row.size() != alphas.size()) {
        throw MatrixError("matrix: row " + std::to_string(si) + " has wrong length");
      }
      for (const auto& c : row) {
        if (c.is_null()) {
          cells.emplace_back();
          continue;
        }
        std::vector<Part> parts;
        for (const auto& p : c.at("parts")) {
          parts.push_back({detail::combo_from_key(modalities, p.at(0).get<std::string>()),
                           p.at(1).get<int>()});
        }
        cells.push_back(Solution{Strategy(std::move(parts)),
                                 Micros{c.at("latency_us").get<std::int64_t>()},
                                 c.at("credit").get<std::int64_t>()});
      }
    }
    StrategyMatrix m(prof.at("name").get<std::string>(), hash, std::move(modalities),
                     std::move(sizes), std::move(alphas), std::move(cells));
    validate_matrix(m, profile);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw MatrixError(std::string("matrix: malformed document: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw MatrixError("matrix: malformed profile hash");
  } catch (const std::out_of_range&) {
    throw MatrixError("matrix: malformed profile hash");
  }
}

inline void save_matrix(const StrategyMatrix& m, const std::string& path) {
  detail::write_file(path, matrix_to_json(m).dump(1) + "\n");
}

inline StrategyMatrix load_matrix(const std::string& path, const ModelProfile* profile = nullptr) {
  const std::string text = detail::read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw MatrixError(std::string("matrix: corrupt file: ") + e.what());
  }
  return matrix_from_json(doc, profile);
}

}  // namespace modsel

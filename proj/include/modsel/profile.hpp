#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace modsel {

using Micros = std::chrono::microseconds;

// Accuracies are held on a fixed 1e-4 grid so that solver arithmetic is exact.
inline constexpr std::int64_t kAccuracyScale = 10000;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem write failures; a runtime error rather than bad input.
class IoError : public Error {
 public:
  using Error::Error;
};

class ProfileError : public Error {
 public:
  using Error::Error;
};

// Fraction -> grid units, rounding down. The epsilon absorbs binary
// representation error (0.67 * 1e4 == 6699.999...).
inline std::int64_t to_accuracy_units(double fraction) {
  return static_cast<std::int64_t>(std::floor(fraction * kAccuracyScale + 1e-6));
}

// Accuracy objective -> grid units, rounding up (the constraint is >=).
inline std::int64_t to_alpha_units(double alpha) {
  return static_cast<std::int64_t>(std::ceil(alpha * kAccuracyScale - 1e-6));
}

inline double from_accuracy_units(std::int64_t units) {
  return static_cast<double>(units) / kAccuracyScale;
}

inline double to_ms(Micros us) { return static_cast<double>(us.count()) / 1000.0; }

inline Micros from_ms(double ms) { return Micros{std::llround(ms * 1000.0)}; }

/// A non-empty subset of a model's ordered modality list. Bit k set means
/// modality k is processed.
struct ModalityCombo {
  std::uint32_t mask = 0;

  constexpr int size() const { return std::popcount(mask); }
  constexpr bool contains(ModalityCombo other) const {
    return (mask & other.mask) == other.mask;
  }
  constexpr auto operator<=>(const ModalityCombo&) const = default;
};

inline constexpr int kMaxModalities = 16;

/// All 2^n - 1 non-empty combos in ascending bitmask order.
inline std::vector<ModalityCombo> enumerate_combos(int n_modalities) {
  if (n_modalities < 1 || n_modalities > kMaxModalities) {
    throw ProfileError("n_modalities must be in [1, 16], got " +
                       std::to_string(n_modalities));
  }
  std::vector<ModalityCombo> combos;
  const std::uint32_t end = 1u << n_modalities;
  combos.reserve(end - 1);
  for (std::uint32_t m = 1; m < end; ++m) combos.push_back({m});
  return combos;
}

/// Number of multisets of size `job_size` drawn from `n_options` per-request
/// choices: C(job_size + n_options - 1, n_options - 1). Throws on overflow.
inline std::uint64_t count_strategies(std::uint64_t job_size, std::uint64_t n_options) {
  if (job_size < 1 || n_options < 1) {
    throw Error("count_strategies requires job_size >= 1 and n_options >= 1");
  }
  const std::uint64_t n = job_size + n_options - 1;
  if (n < job_size) throw Error("count_strategies overflow");
  const std::uint64_t k = std::min(n_options - 1, job_size);
  // result * (n - k + i) is always divisible by i at each step.
  std::uint64_t result = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    const std::uint64_t factor = n - k + i;
    const std::uint64_t g = std::gcd(result, i);
    const std::uint64_t r = result / g;
    const std::uint64_t f = factor / (i / g);
    std::uint64_t next = 0;
    if (__builtin_mul_overflow(r, f, &next)) throw Error("count_strategies overflow");
    result = next;
  }
  return result;
}

/// Latency and accuracy tables for one model.
///
/// Latency is indexed by (combo, batch size 1..max_batch) and held in integer
/// microseconds. Accuracy is per combo, held in 1e-4 units. Construction
/// validates every invariant; instances are immutable afterwards.
class ModelProfile {
 public:
  ModelProfile() = default;

  /// `latency` is combo-major: entry (mask - 1) * max_batch + (batch - 1).
  /// `accuracy_units` is indexed by mask - 1.
  ModelProfile(std::string name, std::vector<std::string> modalities, int max_batch,
               std::vector<Micros> latency, std::vector<std::int64_t> accuracy_units)
      : name_(std::move(name)),
        modalities_(std::move(modalities)),
        max_batch_(max_batch),
        latency_(std::move(latency)),
        accuracy_(std::move(accuracy_units)) {
    validate();
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& modalities() const { return modalities_; }
  int n_modalities() const { return static_cast<int>(modalities_.size()); }
  int max_batch() const { return max_batch_; }
  std::size_t combo_count() const { return accuracy_.size(); }
  std::vector<ModalityCombo> combos() const { return enumerate_combos(n_modalities()); }
  ModalityCombo full_combo() const {
    return {static_cast<std::uint32_t>((1u << n_modalities()) - 1)};
  }

  bool has_combo(ModalityCombo c) const {
    return c.mask != 0 && c.mask <= accuracy_.size();
  }

  Micros latency(ModalityCombo c, int batch) const {
    check_combo(c);
    if (batch < 1 || batch > max_batch_) {
      throw ProfileError("batch size " + std::to_string(batch) + " outside 1.." +
                         std::to_string(max_batch_));
    }
    return latency_[(c.mask - 1) * max_batch_ + (batch - 1)];
  }

  std::int64_t accuracy_units(ModalityCombo c) const {
    check_combo(c);
    return accuracy_[c.mask - 1];
  }
  double accuracy(ModalityCombo c) const { return from_accuracy_units(accuracy_units(c)); }

  std::int64_t max_accuracy_units() const {
    return *std::max_element(accuracy_.begin(), accuracy_.end());
  }
  std::int64_t min_accuracy_units() const {
    return *std::min_element(accuracy_.begin(), accuracy_.end());
  }

  /// "+"-joined modality names in profile order, e.g. "audio+video".
  std::string combo_key(ModalityCombo c) const {
    check_combo(c);
    std::string key;
    for (int k = 0; k < n_modalities(); ++k) {
      if (c.mask & (1u << k)) {
        if (!key.empty()) key += '+';
        key += modalities_[k];
      }
    }
    return key;
  }

  ModalityCombo parse_combo_key(std::string_view key) const {
    std::uint32_t mask = 0;
    std::size_t pos = 0;
    while (pos <= key.size()) {
      const std::size_t plus = std::min(key.find('+', pos), key.size());
      const std::string_view part = key.substr(pos, plus - pos);
      const auto it = std::find(modalities_.begin(), modalities_.end(), part);
      if (it == modalities_.end()) {
        throw ProfileError("unknown modality '" + std::string(part) + "' in combo key '" +
                           std::string(key) + "'");
      }
      const std::uint32_t bit = 1u << (it - modalities_.begin());
      if (mask & bit) {
        throw ProfileError("modality repeated in combo key '" + std::string(key) + "'");
      }
      mask |= bit;
      pos = plus + 1;
    }
    return {mask};
  }

  /// Copy with every latency multiplied by `factor`; accuracies unchanged.
  ModelProfile scaled(double factor) const {
    if (!(factor > 0.0) || !std::isfinite(factor)) {
      throw ProfileError("latency scale factor must be > 0");
    }
    std::vector<Micros> lat = latency_;
    for (auto& l : lat) {
      l = Micros{std::max<std::int64_t>(1, std::llround(static_cast<double>(l.count()) * factor))};
    }
    return ModelProfile(name_, modalities_, max_batch_, std::move(lat), accuracy_);
  }

  bool operator==(const ModelProfile&) const = default;

 private:
  void check_combo(ModalityCombo c) const {
    if (!has_combo(c)) {
      throw ProfileError("combo mask " + std::to_string(c.mask) + " not in profile '" + name_ + "'");
    }
  }

  void validate() const {
    if (modalities_.empty() || modalities_.size() > kMaxModalities) {
      throw ProfileError("modalities: expected 1..16 names");
    }
    for (std::size_t i = 0; i < modalities_.size(); ++i) {
      const auto& m = modalities_[i];
      if (m.empty() || m.find('+') != std::string::npos) {
        throw ProfileError("modalities: invalid modality name '" + m + "'");
      }
      if (std::find(modalities_.begin(), modalities_.begin() + i, m) != modalities_.begin() + i) {
        throw ProfileError("modalities: duplicate modality '" + m + "'");
      }
    }
    if (max_batch_ < 1) throw ProfileError("max_batch: must be positive");
    const std::size_t n_combos = (std::size_t{1} << modalities_.size()) - 1;
    if (accuracy_.size() != n_combos) {
      throw ProfileError("accuracy: expected " + std::to_string(n_combos) + " combos, got " +
                         std::to_string(accuracy_.size()));
    }
    if (latency_.size() != n_combos * static_cast<std::size_t>(max_batch_)) {
      throw ProfileError("latency_ms: incomplete latency table");
    }
    for (std::size_t c = 0; c < n_combos; ++c) {
      if (accuracy_[c] < 0 || accuracy_[c] > kAccuracyScale) {
        throw ProfileError("accuracy: accuracy out of range for combo mask " + std::to_string(c + 1));
      }
      for (int j = 0; j < max_batch_; ++j) {
        const Micros l = latency_[c * max_batch_ + j];
        if (l.count() <= 0) {
          throw ProfileError("latency_ms: latency must be positive for combo mask " +
                             std::to_string(c + 1));
        }
        if (j > 0 && l < latency_[c * max_batch_ + j - 1]) {
          throw ProfileError("latency_ms: non-monotone batch latency for combo mask " +
                             std::to_string(c + 1) + " at batch " + std::to_string(j + 1));
        }
      }
    }
  }

  std::string name_;
  std::vector<std::string> modalities_;
  int max_batch_ = 0;
  std::vector<Micros> latency_;
  std::vector<std::int64_t> accuracy_;
};

inline ModelProfile scale_latency(const ModelProfile& profile, double factor) {
  return profile.scaled(factor);
}

// ---------------------------------------------------------------------------
// File format

inline nlohmann::json profile_to_json(const ModelProfile& p) {
  nlohmann::json doc;
  doc["model"] = p.name();
  doc["modalities"] = p.modalities();
  doc["max_batch"] = p.max_batch();
  nlohmann::json acc = nlohmann::json::object();
  nlohmann::json lat = nlohmann::json::object();
  for (const auto c : p.combos()) {
    const std::string key = p.combo_key(c);
    acc[key] = p.accuracy(c);
    nlohmann::json row = nlohmann::json::array();
    for (int j = 1; j <= p.max_batch(); ++j) row.push_back(to_ms(p.latency(c, j)));
    lat[key] = std::move(row);
  }
  doc["accuracy"] = std::move(acc);
  doc["latency_ms"] = std::move(lat);
  return doc;
}

namespace detail {

// Parses JSON text and rejects duplicate keys inside any object.
inline nlohmann::json parse_strict(const std::string& text, const std::string& what) {
  std::vector<std::vector<std::string>> seen;
  std::string duplicate;
  auto cb = [&](int, nlohmann::json::parse_event_t ev, nlohmann::json& parsed) {
    using E = nlohmann::json::parse_event_t;
    if (ev == E::object_start) {
      seen.emplace_back();
    } else if (ev == E::object_end) {
      if (!seen.empty()) seen.pop_back();
    } else if (ev == E::key && !seen.empty()) {
      const std::string k = parsed.get<std::string>();
      auto& keys = seen.back();
      if (std::find(keys.begin(), keys.end(), k) != keys.end() && duplicate.empty()) {
        duplicate = k;
      }
      keys.push_back(k);
    }
    return true;
  };
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text, cb);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProfileError(what + ": " + e.what());
  }
  if (!duplicate.empty()) throw ProfileError(what + ": duplicate key '" + duplicate + "'");
  return doc;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

template <typename T>
T field(const nlohmann::json& obj, const char* name) {
  if (!obj.contains(name)) throw ProfileError(std::string(name) + ": missing field");
  try {
    return obj.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ProfileError(std::string(name) + ": wrong type");
  }
}

}  // namespace detail

inline ModelProfile profile_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ProfileError("profile: expected an object");
  auto name = detail::field<std::string>(doc, "model");
  auto modalities = detail::field<std::vector<std::string>>(doc, "modalities");
  const int max_batch = detail::field<int>(doc, "max_batch");
  if (max_batch < 1) throw ProfileError("max_batch: must be positive");
  if (modalities.empty() || modalities.size() > kMaxModalities) {
    throw ProfileError("modalities: expected 1..16 names");
  }
  // Empty-latency skeleton, only used for key parsing.
  const std::size_t n_combos = (std::size_t{1} << modalities.size()) - 1;
  ModelProfile keys(name, modalities, 1, std::vector<Micros>(n_combos, Micros{1}),
                    std::vector<std::int64_t>(n_combos, 0));

  const auto& acc_obj = doc.contains("accuracy") ? doc.at("accuracy") : nlohmann::json();
  const auto& lat_obj = doc.contains("latency_ms") ? doc.at("latency_ms") : nlohmann::json();
  if (!acc_obj.is_object()) throw ProfileError("accuracy: missing or not an object");
  if (!lat_obj.is_object()) throw ProfileError("latency_ms: missing or not an object");

  std::vector<std::int64_t> acc(n_combos, -1);
  for (const auto& [key, value] : acc_obj.items()) {
    const ModalityCombo c = keys.parse_combo_key(key);
    if (acc[c.mask - 1] >= 0) throw ProfileError("accuracy." + key + ": duplicate combo");
    if (!value.is_number()) throw ProfileError("accuracy." + key + ": not a number");
    const double a = value.get<double>();
    if (!(a >= 0.0 && a <= 1.0)) throw ProfileError("accuracy." + key + ": accuracy out of range");
    acc[c.mask - 1] = to_accuracy_units(a);
  }
  std::vector<Micros> lat(n_combos * max_batch, Micros{-1});
  std::vector<bool> lat_seen(n_combos, false);
  for (const auto& [key, value] : lat_obj.items()) {
    const ModalityCombo c = keys.parse_combo_key(key);
    if (lat_seen[c.mask - 1]) throw ProfileError("latency_ms." + key + ": duplicate combo");
    lat_seen[c.mask - 1] = true;
    if (!value.is_array()) throw ProfileError("latency_ms." + key + ": expected a list");
    if (value.size() != static_cast<std::size_t>(max_batch)) {
      throw ProfileError("latency_ms." + key + ": incomplete latency table (expected " +
                         std::to_string(max_batch) + " values, got " +
                         std::to_string(value.size()) + ")");
    }
    for (int j = 0; j < max_batch; ++j) {
      if (!value[j].is_number()) {
        throw ProfileError("latency_ms." + key + "[" + std::to_string(j) + "]: not a number");
      }
      const double ms = value[j].get<double>();
      if (!(ms > 0.0)) {
        throw ProfileError("latency_ms." + key + "[" + std::to_string(j) +
                           "]: latency must be positive");
      }
      lat[(c.mask - 1) * max_batch + j] = from_ms(ms);
    }
  }
  for (std::size_t c = 0; c < n_combos; ++c) {
    const std::string key = keys.combo_key({static_cast<std::uint32_t>(c + 1)});
    if (acc[c] < 0) throw ProfileError("accuracy." + key + ": missing combo");
    if (!lat_seen[c]) throw ProfileError("latency_ms." + key + ": incomplete latency table");
  }
  return ModelProfile(std::move(name), std::move(modalities), max_batch, std::move(lat),
                      std::move(acc));
}

inline std::string profile_to_string(const ModelProfile& p) {
  return profile_to_json(p).dump(2) + "\n";
}

inline ModelProfile parse_profile(const std::string& text) {
  return profile_from_json(detail::parse_strict(text, "profile"));
}

inline ModelProfile load_profile(const std::string& path) {
  return parse_profile(detail::read_file(path));
}

inline void save_profile(const ModelProfile& p, const std::string& path) {
  detail::write_file(path, profile_to_string(p));
}

/// Stable 64-bit FNV-1a digest of the canonical profile document.
inline std::uint64_t profile_hash(const ModelProfile& p) {
  const std::string s = profile_to_json(p).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Synthetic profiles

struct GeneratorSpec {
  std::string name = "synthetic";
  int n_modalities = 2;
  int max_batch = 4;
  double latency_min_ms = 5.0;   // per-modality single-request latency range
  double latency_max_ms = 50.0;
  double accuracy_min = 0.50;
  double accuracy_max = 0.90;
  double batch_efficiency_min = 0.5;  // marginal cost of one more batch element, relative
};

/// Deterministic per seed. Latency grows with both batch size and modality
/// count; accuracy of a combo is never below that of any of its subsets.
inline ModelProfile synth_profile(const GeneratorSpec& spec, std::uint64_t seed) {
  if (spec.n_modalities < 1 || spec.n_modalities > kMaxModalities) {
    throw ProfileError("synth: n_modalities must be in [1, 16]");
  }
  if (spec.max_batch < 1) throw ProfileError("synth: max_batch must be positive");
  if (!(spec.latency_min_ms > 0.0) || spec.latency_max_ms < spec.latency_min_ms) {
    throw ProfileError("synth: infeasible latency range");
  }
  if (!(spec.accuracy_min >= 0.0) || spec.accuracy_max > 1.0 ||
      spec.accuracy_max < spec.accuracy_min) {
    throw ProfileError("synth: infeasible accuracy range");
  }
  if (!(spec.batch_efficiency_min > 0.0) || spec.batch_efficiency_min > 1.0) {
    throw ProfileError("synth: batch_efficiency_min must be in (0, 1]");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = spec.n_modalities;
  const int b = spec.max_batch;

  std::vector<std::string> names;
  static constexpr const char* kDefaultNames[] = {"audio", "video", "text", "flow"};
  for (int k = 0; k < n; ++k) {
    names.emplace_back(k < 4 ? kDefaultNames[k] : "m" + std::to_string(k));
  }

  std::vector<double> modality_ms(n);
  for (auto& ms : modality_ms) {
    ms = spec.latency_min_ms + unit(rng) * (spec.latency_max_ms - spec.latency_min_ms);
  }

  const std::size_t n_combos = (std::size_t{1} << n) - 1;
  std::vector<Micros> lat(n_combos * b);
  std::vector<std::int64_t> acc(n_combos);
  const auto acc_max_units = to_accuracy_units(spec.accuracy_max);
  for (std::uint32_t mask = 1; mask <= n_combos; ++mask) {
    double base = 0.0;
    for (int k = 0; k < n; ++k) {
      if (mask & (1u << k)) base += modality_ms[k];
    }
    const double eff = spec.batch_efficiency_min + unit(rng) * (1.0 - spec.batch_efficiency_min);
    std::int64_t prev = 0;
    for (int j = 1; j <= b; ++j) {
      const double ms = base * (1.0 + (j - 1) * eff);
      const std::int64_t us = std::max<std::int64_t>({1, prev, std::llround(ms * 1000.0)});
      lat[(mask - 1) * b + (j - 1)] = Micros{us};
      prev = us;
    }

    const double u = unit(rng);
    if (std::popcount(mask) == 1) {
      acc[mask - 1] = to_accuracy_units(spec.accuracy_min + u * (spec.accuracy_max - spec.accuracy_min));
    } else {
      std::int64_t lo = 0;
      for (int k = 0; k < n; ++k) {
        if (mask & (1u << k)) lo = std::max(lo, acc[(mask & ~(1u << k)) - 1]);
      }
      const double gain = u * 0.5 * static_cast<double>(acc_max_units - lo);
      acc[mask - 1] = std::min(acc_max_units, lo + static_cast<std::int64_t>(gain));
    }
  }
  return ModelProfile(spec.name, std::move(names), b, std::move(lat), std::move(acc));
}

/// Desk profile reconstructed from the worked two-modality example:
/// audio 20, video 30, both 60 time units per request, linear batching.
inline ModelProfile desk_profile() {
  const std::vector<double> per_request_ms = {20.0, 30.0, 60.0};
  std::vector<Micros> lat;
  for (double ms : per_request_ms) {
    for (int j = 1; j <= 2; ++j) lat.push_back(from_ms(ms * j));
  }
  return ModelProfile("desk", {"audio", "video"}, 2, std::move(lat), {6700, 7000, 8000});
}

}  // namespace modsel

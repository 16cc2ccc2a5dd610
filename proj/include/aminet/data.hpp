#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "aminet/batch.hpp"
#include "aminet/error.hpp"
#include "aminet/random.hpp"

namespace aminet {

/// One bag: an unordered set of instance tokens with a binary label.
/// Instances are kept sorted and unique. Only instance deletion may leave a
/// record empty.
struct Record {
  std::vector<std::string> instances;
  int label = 0;

  friend bool operator==(const Record&, const Record&) = default;
};

inline Record make_record(std::vector<std::string> tokens, int label) {
  if (tokens.empty()) throw DataError("record has no instances");
  if (label != 0 && label != 1) throw DataError("record label must be 0 or 1");
  for (const auto& t : tokens) {
    if (t.empty()) throw DataError("record contains an empty token");
  }
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  return Record{std::move(tokens), label};
}

inline std::vector<int> labels_of(std::span<const Record> records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files: one JSON object per line, {"instances": [...], "label": 0|1}.

inline std::vector<Record> parse_records(std::istream& in, const std::string& source) {
  std::vector<Record> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      records.push_back(make_record(j.at("instances").get<std::vector<std::string>>(),
                                    j.at("label").get<int>()));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

inline std::vector<Record> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset " + path.string());
  return parse_records(in, path.string());
}

inline void write_records(std::ostream& out, std::span<const Record> records) {
  for (const auto& r : records) {
    out << nlohmann::json{{"instances", r.instances}, {"label", r.label}}.dump() << '\n';
  }
}

inline void write_records(const std::filesystem::path& path, std::span<const Record> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write dataset " + path.string());
  write_records(out, records);
}

// ---------------------------------------------------------------------------

/// Token <-> id map. Id 0 is padding, tokens take 1..size()-1 in lexicographic
/// order, and size() is the out-of-vocabulary id.
class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    std::sort(tokens_.begin(), tokens_.end());
    tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], i + 1);
  }

  std::size_t size() const noexcept { return tokens_.size() + 1; }
  std::size_t oov_id() const noexcept { return size(); }
  std::size_t embedding_rows() const noexcept { return size() + 1; }

  bool contains(const std::string& token) const { return ids_.contains(token); }

  std::size_t id(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? oov_id() : it->second;
  }

  const std::string& token(std::size_t id) const {
    if (id == kPaddingId || id > tokens_.size()) {
      throw VocabularyError("id " + std::to_string(id) + " has no token");
    }
    return tokens_[id - 1];
  }

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

inline Vocabulary build_vocabulary(std::span<const Record> records) {
  std::vector<std::string> tokens;
  for (const auto& r : records) tokens.insert(tokens.end(), r.instances.begin(), r.instances.end());
  if (tokens.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  return Vocabulary(std::move(tokens));
}

/// Encodes and pads records to `max_instances` slots. Unknown tokens map to
/// the out-of-vocabulary id; an empty record becomes a single OOV instance.
inline BagBatch encode_and_pad(std::span<const Record> records, const Vocabulary& vocab,
                               std::size_t max_instances) {
  BagBatch batch;
  batch.max_instances = max_instances;
  batch.token_ids.assign(records.size() * max_instances, kPaddingId);
  batch.mask.assign(records.size() * max_instances, false);
  std::size_t sentinels = 0;
  for (std::size_t b = 0; b < records.size(); ++b) {
    const auto& inst = records[b].instances;
    if (inst.size() > max_instances) {
      throw DataError("record " + std::to_string(b) + " has " + std::to_string(inst.size()) +
                      " instances, more than the padded width " + std::to_string(max_instances));
    }
    if (inst.empty()) {
      if (max_instances == 0) throw DataError("padded width 0 cannot hold a sentinel bag");
      batch.token_ids[b * max_instances] = vocab.oov_id();
      batch.mask[b * max_instances] = true;
      ++sentinels;
    }
    for (std::size_t m = 0; m < inst.size(); ++m) {
      batch.token_ids[b * max_instances + m] = vocab.id(inst[m]);
      batch.mask[b * max_instances + m] = true;
    }
    batch.labels.push_back(records[b].label);
  }
  static std::atomic<bool> warned{false};
  if (sentinels && !warned.exchange(true)) {
    std::clog << "warning: " << sentinels
              << " empty record(s) encoded as single out-of-vocabulary bags"
                 " (reported once per process)\n";
  }
  return batch;
}

inline std::size_t max_instances(std::span<const Record> records) {
  std::size_t m = 1;
  for (const auto& r : records) m = std::max(m, r.instances.size());
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic multi-instance data.

enum class LabelRule {
  kAnyKey,         // positive iff at least one key token is present
  kCoOccurrence,   // positive iff every key token is present
};

inline std::string_view name(LabelRule rule) {
  return rule == LabelRule::kAnyKey ? "any_key" : "co_occurrence";
}

inline LabelRule parse_label_rule(std::string_view text) {
  if (text == "any_key") return LabelRule::kAnyKey;
  if (text == "co_occurrence") return LabelRule::kCoOccurrence;
  throw ConfigError("unknown label rule '" + std::string(text) + "' (any_key, co_occurrence)");
}

struct SyntheticSpec {
  std::size_t num_bags = 1000;
  std::size_t vocab_size = 100;  // tokens, padding not included
  std::vector<std::size_t> key_tokens{0, 1, 2, 3, 4};
  std::size_t min_bag_size = 3;
  std::size_t max_bag_size = 17;
  double positive_rate = 0.3;
  LabelRule rule = LabelRule::kAnyKey;
  std::uint64_t seed = 0;
  std::size_t max_attempts_per_bag = 200000;

  void validate() const {
    if (num_bags == 0) throw ConfigError("synthetic spec needs at least one bag");
    if (vocab_size == 0) throw ConfigError("synthetic vocabulary is empty");
    if (min_bag_size < 1 || min_bag_size > max_bag_size) {
      throw ConfigError("synthetic bag size range must satisfy 1 <= min <= max");
    }
    if (max_bag_size > vocab_size) {
      throw ConfigError("synthetic bags cannot hold more distinct tokens than the vocabulary");
    }
    for (std::size_t k : key_tokens) {
      if (k >= vocab_size) throw ConfigError("key token " + std::to_string(k) + " outside vocabulary");
    }
    if (positive_rate < 0.0 || positive_rate > 1.0) throw ConfigError("positive_rate outside [0, 1]");
  }
};

/// Token string for synthetic id `id`; zero padded so lexicographic and
/// numeric order agree.
inline std::string synthetic_token(std::size_t id, std::size_t vocab_size) {
  const std::size_t width = std::to_string(vocab_size > 0 ? vocab_size - 1 : 0).size();
  std::string digits = std::to_string(id);
  return "t" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

/// Applies the bag labelling rule to a set of token strings.
inline int rule_label(const std::vector<std::string>& instances,
                      const std::vector<std::string>& keys, LabelRule rule) {
  if (keys.empty()) return 0;
  auto present = [&](const std::string& k) {
    return std::binary_search(instances.begin(), instances.end(), k);
  };
  if (rule == LabelRule::kAnyKey) return std::any_of(keys.begin(), keys.end(), present) ? 1 : 0;
  return std::all_of(keys.begin(), keys.end(), present) ? 1 : 0;
}

inline std::vector<std::string> key_token_strings(const SyntheticSpec& spec) {
  std::vector<std::string> keys;
  for (std::size_t k : spec.key_tokens) keys.push_back(synthetic_token(k, spec.vocab_size));
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

/// Draws round(positive_rate * num_bags) positive bags and the rest negative.
/// Each bag's size is uniform in the range and its tokens uniform without
/// replacement; a draw whose rule label disagrees with the bag's slot is
/// rejected and redrawn.
inline std::vector<Record> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto keys = key_token_strings(spec);
  auto rng = make_rng(spec.seed);
  const auto wanted_positive =
      static_cast<std::size_t>(std::llround(spec.positive_rate * static_cast<double>(spec.num_bags)));

  std::vector<int> slots(spec.num_bags, 0);
  std::fill_n(slots.begin(), wanted_positive, 1);
  std::shuffle(slots.begin(), slots.end(), rng);

  std::vector<std::size_t> pool(spec.vocab_size);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::uniform_int_distribution<std::size_t> size_dist(spec.min_bag_size, spec.max_bag_size);

  std::vector<Record> records;
  records.reserve(spec.num_bags);
  for (std::size_t b = 0; b < spec.num_bags; ++b) {
    bool accepted = false;
    for (std::size_t attempt = 0; attempt < spec.max_attempts_per_bag && !accepted; ++attempt) {
      const std::size_t size = size_dist(rng);
      // Partial Fisher-Yates: the first `size` entries become the sample.
      for (std::size_t i = 0; i < size; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      std::vector<std::string> tokens;
      for (std::size_t i = 0; i < size; ++i) tokens.push_back(synthetic_token(pool[i], spec.vocab_size));
      std::sort(tokens.begin(), tokens.end());
      const int label = rule_label(tokens, keys, spec.rule);
      if (label == slots[b]) {
        records.push_back(Record{std::move(tokens), label});
        accepted = true;
      }
    }
    if (!accepted) {
      throw GenerationError("could not draw a " + std::string(slots[b] ? "positive" : "negative") +
                            " bag within " + std::to_string(spec.max_attempts_per_bag) +
                            " attempts; positive_rate target is infeasible for this key set");
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Noise and incompleteness injectors. All are pure functions of their inputs
// and seed.

enum class NoiseKind { kFeatureSubstitution, kLabelInversion, kInstanceDeletion };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kFeatureSubstitution;
  double amount = 1.0;  // tokens per record, or label ratio for kLabelInversion
  std::uint64_t seed = 0;

  void validate() const {
    if (kind == NoiseKind::kLabelInversion) {
      if (amount < 0.0 || amount > 1.0) throw ConfigError("label noise ratio must lie in [0, 1]");
    } else if (amount < 1.0 || amount > 5.0 || amount != std::floor(amount)) {
      throw ConfigError("token noise amount must be an integer in 1..5");
    }
  }
};

/// Replaces min(n, |record|) tokens of every record with tokens not already
/// present and tops short records up, so exactly n new tokens appear.
inline std::vector<Record> inject_feature_noise(std::span<const Record> records,
                                                const Vocabulary& vocab, std::size_t n,
                                                std::uint64_t seed) {
  if (n < 1 || n > 5) throw ConfigError("feature noise count must be in 1..5");
  auto rng = make_rng(seed);
  std::vector<Record> out;
  out.reserve(records.size());
  for (const auto& record : records) {
    std::vector<std::string> candidates;
    for (const auto& t : vocab.tokens()) {
      if (!std::binary_search(record.instances.begin(), record.instances.end(), t)) {
        candidates.push_back(t);
      }
    }
    if (candidates.size() < n) {
      throw DataError("vocabulary of " + std::to_string(vocab.tokens().size()) +
                      " tokens cannot supply " + std::to_string(n) + " distinct replacements");
    }
    std::vector<std::string> kept = record.instances;
    std::shuffle(kept.begin(), kept.end(), rng);
    kept.resize(kept.size() - std::min(n, kept.size()));
    std::vector<std::string> added;
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(added),
                static_cast<std::ptrdiff_t>(n), rng);
    kept.insert(kept.end(), added.begin(), added.end());
    std::sort(kept.begin(), kept.end());
    out.push_back(Record{std::move(kept), record.label});
  }
  return out;
}

/// Flips the labels of exactly round(ratio * N) records chosen uniformly.
inline std::vector<Record> inject_label_noise(std::span<const Record> records, double ratio,
                                              std::uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("label noise ratio must lie in [0, 1]");
  auto rng = make_rng(seed);
  std::vector<Record> out(records.begin(), records.end());
  std::vector<std::size_t> order(out.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto flips =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(out.size())));
  for (std::size_t i = 0; i < flips; ++i) out[order[i]].label = 1 - out[order[i]].label;
  return out;
}

/// Removes min(n, |record|) uniformly chosen tokens from every record. Records
/// may become empty; encode_and_pad turns those into sentinel bags.
inline std::vector<Record> delete_instances(std::span<const Record> records, std::size_t n,
                                            std::uint64_t seed) {
  if (n < 1 || n > 5) throw ConfigError("deletion count must be in 1..5");
  auto rng = make_rng(seed);
  std::vector<Record> out;
  out.reserve(records.size());
  for (const auto& record : records) {
    std::vector<std::string> kept = record.instances;
    std::shuffle(kept.begin(), kept.end(), rng);
    kept.resize(kept.size() - std::min(n, kept.size()));
    std::sort(kept.begin(), kept.end());
    out.push_back(Record{std::move(kept), record.label});
  }
  return out;
}

inline std::vector<Record> apply_noise(std::span<const Record> records, const Vocabulary& vocab,
                                       const NoiseSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case NoiseKind::kFeatureSubstitution:
      return inject_feature_noise(records, vocab, static_cast<std::size_t>(spec.amount), spec.seed);
    case NoiseKind::kLabelInversion:
      return inject_label_noise(records, spec.amount, spec.seed);
    case NoiseKind::kInstanceDeletion:
      return delete_instances(records, static_cast<std::size_t>(spec.amount), spec.seed);
  }
  return {records.begin(), records.end()};
}

// ---------------------------------------------------------------------------
// Stratification.

/// fold id per record, one vector per repetition.
using FoldAssignment = std::vector<std::vector<std::size_t>>;

namespace detail {

inline void require_class_sizes(std::span<const int> labels, std::size_t k, const char* what) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  if (pos < k || neg < k) {
    throw DataError(std::string(what) + ": need at least " + std::to_string(k) +
                    " samples per class, have " + std::to_string(pos) + " positive and " +
                    std::to_string(neg) + " negative");
  }
}

}  // namespace detail

/// Independent shuffled stratified k-fold partitions. Within each class,
/// records are dealt round-robin, continuing the deal across classes so fold
/// sizes also differ by at most one.
inline FoldAssignment stratified_folds(std::span<const int> labels, std::size_t k,
                                       std::size_t repetitions, std::uint64_t seed) {
  if (k < 2) throw ConfigError("stratified folds need k >= 2");
  detail::require_class_sizes(labels, k, "stratified_folds");
  FoldAssignment out;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    auto rng = make_rng(seed, rep);
    std::vector<std::size_t> assignment(labels.size());
    std::size_t dealt = 0;
    for (int cls : {1, 0}) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == cls) members.push_back(i);
      }
      std::shuffle(members.begin(), members.end(), rng);
      for (std::size_t idx : members) assignment[idx] = dealt++ % k;
    }
    out.push_back(std::move(assignment));
  }
  return out;
}

inline FoldAssignment stratified_folds(std::span<const Record> records, std::size_t k,
                                       std::size_t repetitions, std::uint64_t seed) {
  const auto labels = labels_of(records);
  return stratified_folds(std::span<const int>(labels), k, repetitions, seed);
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

/// Stratified holdout of about `fraction` of each class. A class with at least
/// two members always contributes one record to each side.
inline Split stratified_holdout(std::span<const int> labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0, 1)");
  auto rng = make_rng(seed);
  Split split;
  for (int cls : {1, 0}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t held = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members.size())));
    if (members.size() >= 2) held = std::clamp<std::size_t>(held, 1, members.size() - 1);
    else held = 0;
    split.holdout.insert(split.holdout.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(held));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(held), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.holdout.begin(), split.holdout.end());
  return split;
}

template <class T>
std::vector<T> select(std::span<const T> items, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(items[i]);
  return out;
}

}  // namespace aminet

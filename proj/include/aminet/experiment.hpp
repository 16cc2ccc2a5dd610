#pragma once

// Experiment drivers behind the command-line tool. Every command writes its
// outputs under `out` and prefixes CSV reports with the resolved settings as
// '#' comment lines.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aminet/checkpoint.hpp"
#include "aminet/data.hpp"
#include "aminet/metrics.hpp"
#include "aminet/model.hpp"
#include "aminet/training.hpp"

namespace aminet {

struct ExperimentConfig {
  std::string dataset;  // JSONL records; empty selects the synthetic generator
  SyntheticSpec synthetic;
  ModelConfig model;  // vocab_size is filled in from the data
  TrainConfig train;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string checkpoint;  // attention-export input

  std::vector<std::size_t> heads_grid{0, 2, 4, 8, 16, 32};
  std::vector<std::string> instance_pooling_grid{"sum", "max", "mean"};
  std::vector<std::string> bag_pooling_grid{"attention", "gated_attention", "max", "mean"};
  std::vector<std::size_t> feature_grid{1, 2, 3, 4, 5};
  std::vector<double> label_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<std::size_t> deletion_grid{1, 2, 3, 4, 5};
  std::string noise_kind = "feature";  // feature | label
  bool log_timing = false;

  /// Copies `seed` into the model, training and synthetic settings.
  ExperimentConfig resolved() const {
    ExperimentConfig c = *this;
    c.model.seed = seed;
    c.train.seed = seed;
    c.synthetic.seed = seed;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Formatting

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_auc(const std::optional<double>& auc) {
  return auc ? format_number(*auc) : "NA";
}

namespace detail {

template <class T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += items[i];
    } else if constexpr (std::is_floating_point_v<T>) {
      out += format_number(items[i]);
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

}  // namespace detail

/// Every setting as (key, value), in a fixed order. Keys match the CLI flags.
inline std::vector<std::pair<std::string, std::string>> settings_of(const ExperimentConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  const SyntheticSpec& s = c.synthetic;
  return {
      {"seed", std::to_string(c.seed)},
      {"dataset", c.dataset},
      {"synth_bags", std::to_string(s.num_bags)},
      {"synth_vocab", std::to_string(s.vocab_size)},
      {"synth_keys", detail::join(s.key_tokens)},
      {"synth_min_size", std::to_string(s.min_bag_size)},
      {"synth_max_size", std::to_string(s.max_bag_size)},
      {"synth_positive_rate", format_number(s.positive_rate)},
      {"synth_rule", std::string(name(s.rule))},
      {"d_model", std::to_string(m.d_model)},
      {"num_heads", std::to_string(m.num_heads)},
      {"hidden_sizes", detail::join(m.hidden_sizes)},
      {"d_l", std::to_string(m.d_l)},
      {"instance_pooling", std::string(name(m.instance_pooling))},
      {"bag_pooling", std::string(name(m.bag_pooling))},
      {"learning_rate", format_number(t.learning_rate)},
      {"beta1", format_number(t.beta1)},
      {"beta2", format_number(t.beta2)},
      {"epsilon", format_number(t.epsilon)},
      {"max_epochs", std::to_string(t.max_epochs)},
      {"patience", std::to_string(t.patience)},
      {"batch_size", std::to_string(t.batch_size)},
      {"threshold", format_number(t.threshold)},
      {"folds", std::to_string(t.folds)},
      {"repetitions", std::to_string(t.repetitions)},
      {"validation_fraction", format_number(t.validation_fraction)},
      {"heads_grid", detail::join(c.heads_grid)},
      {"instance_pooling_grid", detail::join(c.instance_pooling_grid)},
      {"bag_pooling_grid", detail::join(c.bag_pooling_grid)},
      {"feature_grid", detail::join(c.feature_grid)},
      {"label_grid", detail::join(c.label_grid)},
      {"deletion_grid", detail::join(c.deletion_grid)},
      {"noise_kind", c.noise_kind},
  };
}

inline std::string report_header(const std::string& command, const ExperimentConfig& c) {
  std::string out = "# command=" + command + "\n";
  for (const auto& [key, value] : settings_of(c)) out += "# " + key + "=" + value + "\n";
  return out;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Data and cross-validation helpers

inline std::vector<Record> load_dataset(const ExperimentConfig& c) {
  if (!c.dataset.empty()) return read_records(c.dataset);
  SyntheticSpec spec = c.synthetic;
  spec.seed = c.seed;
  return generate_synthetic(spec);
}

/// Model config with vocab_size matching `vocab`.
inline ModelConfig model_for(const ExperimentConfig& c, const Vocabulary& vocab) {
  ModelConfig m = c.model;
  m.seed = c.seed;
  m.vocab_size = vocab.embedding_rows();
  m.validate();
  return m;
}

/// Training-fold transform applying `noise` with an independent seed per fold.
inline TrainingTransform noise_transform(const Vocabulary& vocab, NoiseKind kind, double amount,
                                         const TrainConfig& train) {
  NoiseSpec{kind, amount, 0}.validate();
  const std::uint64_t base = train.folds * train.repetitions + 1;
  return [&vocab, kind, amount, seed = train.seed, base](std::span<const Record> records,
                                                         std::uint64_t stream) {
    return apply_noise(records, vocab, NoiseSpec{kind, amount, derive_seed(seed, base + stream)});
  };
}

inline CrossValidationReport run_cv(std::span<const Record> records, const Vocabulary& vocab,
                                    const ModelConfig& model, const TrainConfig& train,
                                    const TrainingTransform& transform = {}) {
  return cross_validate(records, train, aminet_trainer(vocab, model, train), transform);
}

inline std::string cv_table(const CrossValidationReport& report) {
  std::string out = "repetition,fold,AUC,Accuracy,Precision,Recall,F1\n";
  auto row = [](const MetricReport& r) {
    return format_auc(r.auc) + "," + format_number(r.accuracy) + "," +
           format_number(r.precision) + "," + format_number(r.recall) + "," +
           format_number(r.f1) + "\n";
  };
  for (const auto& f : report.folds) {
    out += std::to_string(f.repetition) + "," + std::to_string(f.fold) + "," + row(f.report);
  }
  out += "mean,," + row(report.mean);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct TrainOutcome {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  FitResult fit;
};

/// Fits on a stratified train/validation split and writes model.aminet plus
/// train_log.jsonl.
inline TrainOutcome cmd_train(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  c.train.validate();
  const auto records = load_dataset(c);
  const Vocabulary vocab = build_vocabulary(records);
  const ModelConfig model = model_for(c, vocab);
  const auto labels = labels_of(records);
  const Split split = stratified_holdout(std::span<const int>(labels),
                                         c.train.validation_fraction, c.seed);
  const auto train_set = select<Record>(records, split.train);
  const auto val_set = select<Record>(records, split.holdout);

  TrainOutcome outcome;
  outcome.fit = fit(train_set, val_set, vocab, model, c.train);
  outcome.checkpoint = std::filesystem::path(c.out) / "model.aminet";
  outcome.log = std::filesystem::path(c.out) / "train_log.jsonl";
  std::string log;
  for (const auto& e : outcome.fit.log) log += to_log_line(e, c.log_timing) + "\n";
  detail::write_text(outcome.log, log);
  save_checkpoint(outcome.checkpoint,
                  Checkpoint{outcome.fit.config, outcome.fit.parameters, vocab.tokens()});
  return outcome;
}

/// Repeated stratified CV; writes cv_report.csv with one row per fold and a
/// final mean row.
inline std::filesystem::path cmd_cv(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  const auto records = load_dataset(c);
  const Vocabulary vocab = build_vocabulary(records);
  const auto report = run_cv(records, vocab, model_for(c, vocab), c.train);
  const auto path = std::filesystem::path(c.out) / "cv_report.csv";
  detail::write_text(path, report_header("cv", c) + cv_table(report));
  return path;
}

/// Mean CV F1 per head count. Every head count is checked against d_model
/// before any training starts.
inline std::filesystem::path cmd_ablate_heads(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  for (std::size_t h : c.heads_grid) {
    if (h > 0 && c.model.d_model % h != 0) {
      throw ConfigError("heads_grid entry " + std::to_string(h) + " does not divide d_model " +
                        std::to_string(c.model.d_model));
    }
  }
  c.train.validate();
  const auto records = load_dataset(c);
  const Vocabulary vocab = build_vocabulary(records);
  std::string table = "heads,F1\n";
  for (std::size_t h : c.heads_grid) {
    ModelConfig model = model_for(c, vocab);
    model.num_heads = h;
    model.validate();
    const auto report = run_cv(records, vocab, model, c.train);
    table += std::to_string(h) + "," + format_number(report.mean.f1) + "\n";
  }
  const auto path = std::filesystem::path(c.out) / "ablate_heads.csv";
  detail::write_text(path, report_header("ablate-heads", c) + table);
  return path;
}

/// Mean CV F1 for every instance-level x bag-level pooling combination.
inline std::filesystem::path cmd_ablate_pooling(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  std::vector<InstancePooling> instance;
  std::vector<BagPooling> bag;
  for (const auto& n : c.instance_pooling_grid) instance.push_back(parse_instance_pooling(n));
  for (const auto& n : c.bag_pooling_grid) bag.push_back(parse_bag_pooling(n));
  c.train.validate();
  const auto records = load_dataset(c);
  const Vocabulary vocab = build_vocabulary(records);
  std::string table = "instance_pooling,bag_pooling,F1\n";
  for (InstancePooling ip : instance) {
    for (BagPooling bp : bag) {
      ModelConfig model = model_for(c, vocab);
      model.instance_pooling = ip;
      model.bag_pooling = bp;
      const auto report = run_cv(records, vocab, model, c.train);
      table += std::string(name(ip)) + "," + std::string(name(bp)) + "," +
               format_number(report.mean.f1) + "\n";
    }
  }
  const auto path = std::filesystem::path(c.out) / "ablate_pooling.csv";
  detail::write_text(path, report_header("ablate-pooling", c) + table);
  return path;
}

/// Feature-substitution or label-inversion noise on training folds only.
inline std::filesystem::path cmd_noise_sweep(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  std::vector<double> levels;
  NoiseKind kind;
  if (c.noise_kind == "feature") {
    kind = NoiseKind::kFeatureSubstitution;
    for (std::size_t n : c.feature_grid) levels.push_back(static_cast<double>(n));
  } else if (c.noise_kind == "label") {
    kind = NoiseKind::kLabelInversion;
    levels = c.label_grid;
  } else {
    throw ConfigError("noise_kind must be feature or label, got '" + c.noise_kind + "'");
  }
  for (double level : levels) NoiseSpec{kind, level, 0}.validate();
  c.train.validate();
  const auto records = load_dataset(c);
  const Vocabulary vocab = build_vocabulary(records);
  const ModelConfig model = model_for(c, vocab);
  std::string table = "noise_kind,level,F1\n";
  for (double level : levels) {
    const auto report = run_cv(records, vocab, model, c.train,
                               noise_transform(vocab, kind, level, c.train));
    table += c.noise_kind + "," + format_number(level) + "," + format_number(report.mean.f1) + "\n";
  }
  const auto path = std::filesystem::path(c.out) / ("noise_sweep_" + c.noise_kind + ".csv");
  detail::write_text(path, report_header("noise-sweep", c) + table);
  return path;
}

/// Instance deletion on training folds only.
inline std::filesystem::path cmd_incomplete_sweep(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  for (std::size_t n : c.deletion_grid) {
    NoiseSpec{NoiseKind::kInstanceDeletion, static_cast<double>(n), 0}.validate();
  }
  c.train.validate();
  const auto records = load_dataset(c);
  const Vocabulary vocab = build_vocabulary(records);
  const ModelConfig model = model_for(c, vocab);
  std::string table = "deleted,F1\n";
  for (std::size_t n : c.deletion_grid) {
    const auto report =
        run_cv(records, vocab, model, c.train,
               noise_transform(vocab, NoiseKind::kInstanceDeletion, static_cast<double>(n), c.train));
    table += std::to_string(n) + "," + format_number(report.mean.f1) + "\n";
  }
  const auto path = std::filesystem::path(c.out) / "incomplete_sweep.csv";
  detail::write_text(path, report_header("incomplete-sweep", c) + table);
  return path;
}

// ---------------------------------------------------------------------------
// Attention export

struct InstanceAttention {
  std::string token;
  double weight = 0.0;
  double score = 0.0;
};

struct RecordAttention {
  int label = 0;
  double probability = 0.0;
  std::vector<InstanceAttention> instances;  // weight descending
};

inline constexpr std::string_view kEmptyRecordToken = "<empty>";

/// Bag-pooling weights, instance scores and bag probability per record.
inline std::vector<RecordAttention> attention_of(std::span<const Record> records,
                                                 const Vocabulary& vocab,
                                                 const ModelParameters& params,
                                                 const ModelConfig& config,
                                                 std::size_t chunk = 256) {
  std::vector<RecordAttention> out;
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const auto part = records.subspan(start, std::min(chunk, records.size() - start));
    const ForwardOutput f = forward(encode_and_pad(part, vocab, max_instances(part)), params, config);
    for (std::size_t b = 0; b < part.size(); ++b) {
      RecordAttention r{part[b].label, f.probabilities[b], {}};
      const auto& inst = part[b].instances;
      if (inst.empty()) {
        r.instances.push_back({std::string(kEmptyRecordToken), f.attention_weights[b][0],
                               f.instance_scores[b][0]});
      }
      for (std::size_t m = 0; m < inst.size(); ++m) {
        r.instances.push_back({inst[m], f.attention_weights[b][m], f.instance_scores[b][m]});
      }
      std::stable_sort(r.instances.begin(), r.instances.end(),
                       [](const auto& a, const auto& b) { return a.weight > b.weight; });
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// Writes attention.csv: one row per (record, token), weights descending
/// within a record.
inline std::filesystem::path cmd_attention_export(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  if (c.checkpoint.empty()) throw ConfigError("attention-export needs --checkpoint");
  const Checkpoint ckpt = load_checkpoint(c.checkpoint);
  const Vocabulary vocab(ckpt.vocabulary);
  if (ckpt.config.vocab_size != vocab.embedding_rows()) {
    throw ConfigError("checkpoint " + c.checkpoint + " stores " +
                      std::to_string(ckpt.vocabulary.size()) + " tokens but " +
                      std::to_string(ckpt.config.vocab_size) + " embedding rows");
  }
  const auto records = load_dataset(c);
  const bool shares_tokens = std::any_of(records.begin(), records.end(), [&](const Record& r) {
    return std::any_of(r.instances.begin(), r.instances.end(),
                       [&](const std::string& t) { return vocab.contains(t); });
  });
  if (!shares_tokens) {
    throw ConfigError("dataset shares no tokens with the vocabulary of " + c.checkpoint);
  }

  std::string table = "record,label,probability,token,weight,score\n";
  const auto rows = attention_of(records, vocab, ckpt.parameters, ckpt.config);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& a : rows[i].instances) {
      table += std::to_string(i) + "," + std::to_string(rows[i].label) + "," +
               format_number(rows[i].probability) + "," + a.token + "," +
               format_number(a.weight) + "," + format_number(a.score) + "\n";
    }
  }
  const auto path = std::filesystem::path(c.out) / "attention.csv";
  detail::write_text(path, report_header("attention-export", c) + table);
  return path;
}

/// Writes the configured synthetic dataset to synthetic.jsonl.
inline std::filesystem::path cmd_generate(const ExperimentConfig& config) {
  ExperimentConfig c = config.resolved();
  c.dataset.clear();
  const auto records = load_dataset(c);
  const auto path = std::filesystem::path(c.out) / "synthetic.jsonl";
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  write_records(path, records);
  return path;
}

}  // namespace aminet

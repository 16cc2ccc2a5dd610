#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "aminet/autodiff.hpp"
#include "aminet/data.hpp"
#include "aminet/error.hpp"
#include "aminet/metrics.hpp"
#include "aminet/model.hpp"
#include "aminet/random.hpp"

namespace aminet {

struct TrainConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  std::size_t max_epochs = 1000;
  std::size_t patience = 50;
  std::size_t batch_size = 32;
  double threshold = 0.5;
  std::size_t folds = 10;
  std::size_t repetitions = 5;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = one per hardware thread
  bool record_timing = false;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("beta1 must lie in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation_fraction must lie in (0, 1)");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (folds < 2) throw ConfigError("folds must be at least 2");
    if (repetitions == 0) throw ConfigError("repetitions must be positive");
  }
};

/// Seed for random stream `stream`; stream 0 keeps the master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  if (stream == 0) return seed;
  auto rng = make_rng(seed, stream);
  return rng();
}

inline double bce_loss(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.empty()) throw ContractError("bce_loss: empty batch");
  if (probabilities.size() != labels.size()) throw ContractError("bce_loss: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = std::clamp(probabilities[i], 1e-12, 1.0 - 1e-12);
    total -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(probabilities.size());
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  ModelParameters m;
  ModelParameters v;
  std::uint64_t t = 0;

  static AdamState for_parameters(const ModelParameters& params) {
    auto zeros = params.map([](const Tensor& p) { return Tensor(p.shape()); });
    return AdamState{zeros, zeros, 0};
  }
};

/// One bias-corrected Adam update of `theta` at step `t` (already incremented).
inline void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, std::uint64_t t, const TrainConfig& config) {
  if (theta.size() != grad.size() || theta.size() != m.size() || theta.size() != v.size()) {
    throw ContractError("adam_update: parameter, gradient and moment sizes differ");
  }
  const double correct1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double correct2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / correct1;
    const double v_hat = v[i] / correct2;
    theta[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

namespace detail {

template <class Set>
auto tensor_refs(Set& set) {
  using Ref = std::conditional_t<std::is_const_v<Set>, const Tensor*, Tensor*>;
  std::vector<std::pair<std::string, Ref>> refs;
  set.visit([&](const std::string& key, auto& t) { refs.emplace_back(key, &t); });
  return refs;
}

}  // namespace detail

/// Adam over every parameter array. The padding embedding row is frozen.
inline void adam_step(ModelParameters& params, const ModelParameters& grads, AdamState& state,
                      const TrainConfig& config) {
  auto p = detail::tensor_refs(params);
  auto g = detail::tensor_refs(grads);
  auto m = detail::tensor_refs(state.m);
  auto v = detail::tensor_refs(state.v);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw ContractError("adam_step: parameter sets have different layouts");
  }
  ++state.t;
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor& theta = *p[i].second;
    if (theta.shape() != g[i].second->shape() || theta.shape() != m[i].second->shape() ||
        theta.shape() != v[i].second->shape()) {
      throw ContractError("adam_step: shape mismatch in " + p[i].first);
    }
    const std::size_t skip = p[i].first == "embedding" ? theta.shape()[1] : 0;
    auto tail = [skip](auto& t) { return std::span(t.values()).subspan(skip); };
    adam_update(tail(theta), tail(*g[i].second), tail(*m[i].second), tail(*v[i].second), state.t,
                config);
  }
}

// ---------------------------------------------------------------------------
// Loss, gradient and prediction over records.

struct LossAndGradient {
  double loss = 0.0;
  ModelParameters gradient;
};

inline LossAndGradient loss_and_gradient(std::span<const Record> records, const Vocabulary& vocab,
                                         const ModelParameters& params, const ModelConfig& config) {
  const BagBatch batch = encode_and_pad(records, vocab, max_instances(records));
  Tape tape;
  const ParameterNodes nodes = bind_parameters(tape, params);
  std::vector<Var> probabilities;
  probabilities.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    probabilities.push_back(forward_bag(nodes, config, batch.ids(b), batch.row_mask(b)).probability);
  }
  Var loss = binary_cross_entropy(concat_columns(probabilities), batch.labels);
  tape.backward(loss);
  return {loss.value().item(), nodes.map([&](Var v) { return tape.gradient(v); })};
}

inline std::vector<double> predict(std::span<const Record> records, const Vocabulary& vocab,
                                   const ModelParameters& params, const ModelConfig& config,
                                   std::size_t chunk = 256) {
  std::vector<double> out;
  out.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const auto part = records.subspan(start, std::min(chunk, records.size() - start));
    const ForwardOutput f = forward(encode_and_pad(part, vocab, max_instances(part)), params, config);
    out.insert(out.end(), f.probabilities.begin(), f.probabilities.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Early-stopped training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_f1 = 0.0;
  double seconds = 0.0;
};

/// One line-delimited log record. Wall-clock is only written when requested
/// so that logs stay reproducible by default.
inline std::string to_log_line(const EpochRecord& r, bool with_timing) {
  nlohmann::ordered_json j{{"epoch", r.epoch},
                           {"train_loss", r.train_loss},
                           {"validation_f1", r.validation_f1}};
  if (with_timing) j["wall_clock_s"] = r.seconds;
  return j.dump();
}

struct FitResult {
  ModelParameters parameters;  // from the best validation-F1 epoch
  ModelConfig config;          // as used, including the derived seed
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_f1 = 0.0;
  double initial_loss = 0.0;
};

/// Mini-batch Adam with early stopping on validation F1. Keeps the earliest
/// epoch with the best F1 and stops after `patience` epochs without a strict
/// improvement.
inline FitResult fit(std::span<const Record> train, std::span<const Record> validation,
                     const Vocabulary& vocab, const ModelConfig& model_config,
                     const TrainConfig& config, std::uint64_t stream = 0) {
  config.validate();
  if (train.empty() || validation.empty()) {
    throw ContractError("fit needs non-empty training and validation sets");
  }
  if (model_config.vocab_size != vocab.embedding_rows()) {
    throw ConfigError("model vocab_size " + std::to_string(model_config.vocab_size) +
                      " does not match the vocabulary's " + std::to_string(vocab.embedding_rows()) +
                      " embedding rows");
  }
  const auto val_labels = labels_of(validation);
  if (std::count(val_labels.begin(), val_labels.end(), 1) == 0) {
    std::clog << "warning: validation set has no positive record; F1 stays 0\n";
  }
  const auto train_labels = labels_of(train);

  FitResult result;
  result.config = model_config;
  result.config.seed = derive_seed(model_config.seed, stream);
  ModelParameters params = init_parameters(result.config);
  AdamState adam = AdamState::for_parameters(params);
  auto rng = make_rng(config.seed, stream);
  const auto started = std::chrono::steady_clock::now();

  result.initial_loss = bce_loss(predict(train, vocab, params, result.config), train_labels);
  result.parameters = params;
  double best = -1.0;
  std::size_t stale = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Record> batch;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train[order[i]]);
      LossAndGradient lg = loss_and_gradient(batch, vocab, params, result.config);
      loss_sum += lg.loss * static_cast<double>(batch.size());
      adam_step(params, lg.gradient, adam, config);
    }

    const auto scores = predict(validation, vocab, params, result.config);
    const double f1 =
        precision_recall_f1(confusion(scores, val_labels, config.threshold)).f1;
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    result.log.push_back({epoch, loss_sum / static_cast<double>(train.size()), f1, elapsed.count()});

    if (f1 > best) {
      best = f1;
      result.best_epoch = epoch;
      result.parameters = params;
      stale = 0;
    } else {
      ++stale;
    }
    if (stale >= config.patience) break;
  }
  result.best_f1 = best;
  return result;
}

// ---------------------------------------------------------------------------
// Repeated stratified cross-validation

struct FoldResult {
  std::size_t repetition = 0;
  std::size_t fold = 0;
  MetricReport report;
};

struct CrossValidationReport {
  std::vector<FoldResult> folds;
  MetricReport mean;
};

/// Scores a set of records.
using Predictor = std::function<std::vector<double>(std::span<const Record>)>;

/// Produces a predictor from (training, validation, stream).
using Trainer =
    std::function<Predictor(std::span<const Record>, std::span<const Record>, std::uint64_t)>;

/// Rewrites a training fold before the validation split, e.g. to inject noise.
/// Receives the fold's stream id so noise differs between folds.
using TrainingTransform =
    std::function<std::vector<Record>(std::span<const Record>, std::uint64_t)>;

/// Runs `count` independent tasks on up to `threads` workers, rethrowing the
/// first failure after all workers finish.
inline void run_parallel(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& task) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// For every repetition and fold: transform the training portion, carve a
/// stratified validation split from it, train, then score the untouched test
/// fold. Task stream id = repetition * folds + fold. A training portion with
/// no class of two or more members is used for both fitting and validation.
inline CrossValidationReport cross_validate(std::span<const Record> dataset,
                                            const TrainConfig& config, const Trainer& trainer,
                                            const TrainingTransform& transform = {}) {
  config.validate();
  const auto labels = labels_of(dataset);
  const FoldAssignment assignment =
      stratified_folds(std::span<const int>(labels), config.folds, config.repetitions, config.seed);

  const std::size_t tasks = config.folds * config.repetitions;
  std::vector<FoldResult> results(tasks);
  run_parallel(tasks, config.threads, [&](std::size_t task) {
    const std::size_t rep = task / config.folds, fold = task % config.folds;
    std::vector<Record> train, test;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      (assignment[rep][i] == fold ? test : train).push_back(dataset[i]);
    }
    if (transform) train = transform(train, task);
    const auto train_labels = labels_of(train);
    const Split split = stratified_holdout(std::span<const int>(train_labels),
                                           config.validation_fraction, derive_seed(config.seed, task + 1));
    auto fit_set = select<Record>(train, split.train);
    auto val_set = select<Record>(train, split.holdout);
    if (val_set.empty()) {
      std::clog << "warning: fold " << task << " is too small for a validation split; "
                << "early stopping uses the training portion\n";
      fit_set = train;
      val_set = train;
    }
    const Predictor predictor = trainer(fit_set, val_set, task);
    const auto scores = predictor(test);
    results[task] = {rep, fold, evaluate(scores, labels_of(test), config.threshold)};
  });

  CrossValidationReport report;
  report.folds = std::move(results);
  std::vector<MetricReport> all;
  for (const auto& f : report.folds) all.push_back(f.report);
  report.mean = mean_report(all);
  return report;
}

/// Trainer that fits the bag classifier with early stopping.
inline Trainer aminet_trainer(const Vocabulary& vocab, const ModelConfig& model_config,
                              const TrainConfig& config) {
  return [&vocab, model_config, config](std::span<const Record> train,
                                        std::span<const Record> validation,
                                        std::uint64_t stream) -> Predictor {
    FitResult fitted = fit(train, validation, vocab, model_config, config, stream);
    return [&vocab, fitted = std::move(fitted)](std::span<const Record> records) {
      return predict(records, vocab, fitted.parameters, fitted.config);
    };
  };
}

}  // namespace aminet

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "aminet/experiment.hpp"
#include "oracles.hpp"

namespace {

using namespace aminet;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << o.detail
            << std::endl;
}

std::string fmt(double v) { return format_number(v); }

std::vector<std::size_t> random_bag(std::mt19937_64& rng, std::size_t vocab_rows,
                                    std::size_t max_size) {
  std::uniform_int_distribution<std::size_t> size(1, max_size);
  std::vector<std::size_t> ids(vocab_rows - 1);
  std::iota(ids.begin(), ids.end(), std::size_t{1});
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(size(rng));
  return ids;
}

BagBatch padded(const std::vector<std::size_t>& ids, std::size_t width) {
  BagBatch b;
  b.max_instances = width;
  b.token_ids.assign(width, kPaddingId);
  b.mask.assign(width, false);
  for (std::size_t m = 0; m < ids.size(); ++m) {
    b.token_ids[m] = ids[m];
    b.mask[m] = true;
  }
  b.labels = {0};
  return b;
}

double probability(const std::vector<std::size_t>& ids, std::size_t width,
                   const ModelParameters& p, const ModelConfig& c) {
  return forward(padded(ids, width), p, c).probabilities[0];
}

ModelConfig invariance_model(InstancePooling ip, BagPooling bp, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = 40;
  c.d_model = 16;
  c.num_heads = 4;
  c.hidden_sizes = {16, 8};
  c.d_l = 8;
  c.instance_pooling = ip;
  c.bag_pooling = bp;
  c.seed = seed;
  return c;
}

std::vector<std::pair<InstancePooling, BagPooling>> all_poolings() {
  std::vector<std::pair<InstancePooling, BagPooling>> out;
  for (auto ip : {InstancePooling::kSum, InstancePooling::kMax, InstancePooling::kMean}) {
    for (auto bp : {BagPooling::kAttention, BagPooling::kGatedAttention, BagPooling::kMax,
                    BagPooling::kMean}) {
      out.emplace_back(ip, bp);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto start = Clock::now();
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.num_heads = 2;
  c.hidden_sizes = {8, 4};
  c.d_l = 5;
  c.bag_pooling = BagPooling::kGatedAttention;
  c.seed = 7;
  ModelParameters p = init_parameters(c);
  const std::vector<std::size_t> ids{3, 8, 5};
  const std::vector<bool> mask(3, true);
  const std::vector<int> label{1};
  auto loss_at = [&](ModelParameters* grads) {
    Tape tape;
    const ParameterNodes n = bind_parameters(tape, p);
    Var loss = binary_cross_entropy(forward_bag(n, c, ids, mask).probability, label);
    tape.backward(loss);
    if (grads) *grads = n.map([&](Var v) { return tape.gradient(v); });
    return loss.value().item();
  };
  ModelParameters analytic;
  loss_at(&analytic);
  std::vector<const Tensor*> grads;
  analytic.visit([&](const std::string&, const Tensor& t) { grads.push_back(&t); });
  double worst = 0.0;
  std::string worst_name;
  std::size_t i = 0, checked = 0;
  p.visit([&](const std::string& name, Tensor& t) {
    const auto numeric = oracle::central_difference(t.values(), [&] { return loss_at(nullptr); });
    const double err = oracle::gradient_error(grads[i++]->values(), numeric);
    checked += numeric.size();
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  });
  const double elapsed = seconds_since(start);
  return {worst < 1e-4 && elapsed < 10.0,
          "max relative error " + fmt(worst) + " (" + worst_name + ") over " +
              std::to_string(checked) + " parameters, limit 1e-4; " + fmt(elapsed) +
              " s, limit 10 s"};
}

Outcome permutation_invariance() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (const auto& [ip, bp] : all_poolings()) {
    const ModelConfig c = invariance_model(ip, bp, 11);
    const ModelParameters p = init_parameters(c);
    for (int b = 0; b < 100; ++b) {
      auto ids = random_bag(rng, c.vocab_size, 17);
      const double base = probability(ids, ids.size(), p, c);
      std::shuffle(ids.begin(), ids.end(), rng);
      worst = std::max(worst, std::abs(base - probability(ids, ids.size(), p, c)));
    }
  }
  return {worst < 1e-10, "12 pooling configurations x 100 bags, max |p - p_perm| = " + fmt(worst) +
                             ", limit 1e-10"};
}

Outcome padding_invariance() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (const auto& [ip, bp] : all_poolings()) {
    const ModelConfig c = invariance_model(ip, bp, 12);
    const ModelParameters p = init_parameters(c);
    for (int b = 0; b < 100; ++b) {
      const auto ids = random_bag(rng, c.vocab_size, 17);
      worst = std::max(worst, std::abs(probability(ids, ids.size(), p, c) - probability(ids, 64, p, c)));
    }
  }
  return {worst < 1e-10, "12 pooling configurations x 100 bags padded to 64, max difference " +
                             fmt(worst) + ", limit 1e-10"};
}

Outcome zero_head_equivalence() {
  ModelConfig c = invariance_model(InstancePooling::kSum, BagPooling::kGatedAttention, 13);
  c.num_heads = 0;
  const ModelParameters p = init_parameters(c);
  std::mt19937_64 rng(303);
  std::size_t mismatches = 0;
  for (int b = 0; b < 50; ++b) {
    const auto ids = random_bag(rng, c.vocab_size, 17);
    const double model = probability(ids, 17, p, c);
    // Reference pipeline without the attention block: embedding -> FFN -> pooling.
    const std::vector<bool> mask = padded(ids, 17).mask;
    const std::vector<std::size_t> slots = padded(ids, 17).token_ids;
    Tape tape;
    const ParameterNodes n = p.map([&](const Tensor& t) { return tape.constant(t); });
    Var h = instance_ffn(gather_rows(n.embedding, slots), n);
    Var scores = instance_pool(h, c.instance_pooling, mask);
    const double reference = sigmoid(bag_pool(h, scores, c.bag_pooling, n, mask).value).value().item();
    if (model != reference) ++mismatches;
  }
  return {mismatches == 0,
          std::to_string(mismatches) + " of 50 bags differ from the attention-free reference"};
}

Outcome auc_exactness() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::size_t> size(2, 200);
  std::uniform_int_distribution<int> grid(0, 20);
  std::size_t mismatches = 0, defined = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = size(rng);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = grid(rng) / 20.0;  // coarse grid produces ties
      labels[i] = std::bernoulli_distribution(0.3)(rng);
    }
    labels[0] = 1;
    labels[1] = 0;
    const auto value = auc(scores, labels);
    ++defined;
    if (!value || *value != oracle::brute_force_auc(scores, labels)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over " +
                               std::to_string(defined) + " tied instances of size <= 200"};
}

Outcome metric_conventions() {
  const auto r = precision_recall_f1({0, 0, 95, 5});
  return {r.precision == 0.0 && r.recall == 0.0 && r.f1 == 0.0,
          "tp=fp=0 gives precision " + fmt(r.precision) + ", recall " + fmt(r.recall) + ", F1 " +
              fmt(r.f1)};
}

// Shared by the learnability, interpretability and noise criteria.
struct KeyTokenTask {
  SyntheticSpec spec;
  std::vector<Record> records;
  Vocabulary vocab;
  ModelConfig model;
  TrainConfig train;
};

KeyTokenTask key_token_task() {
  KeyTokenTask t;
  t.spec.num_bags = 1000;
  t.spec.vocab_size = 100;
  t.spec.key_tokens = {0, 1, 2, 3, 4};
  t.spec.positive_rate = 0.3;
  t.spec.min_bag_size = 3;
  t.spec.max_bag_size = 17;
  t.spec.seed = 0;
  t.records = generate_synthetic(t.spec);
  t.vocab = build_vocabulary(t.records);
  t.model.vocab_size = t.vocab.embedding_rows();
  t.model.d_model = 32;
  t.model.num_heads = 4;
  t.model.seed = 0;
  t.train.max_epochs = 200;
  t.train.seed = 0;
  return t;
}

struct TrainedKeyModel {
  std::vector<Record> test;
  FitResult fit;
  double seconds = 0.0;
};

TrainedKeyModel train_key_model(const KeyTokenTask& task) {
  const auto start = Clock::now();
  const auto labels = labels_of(task.records);
  const Split outer = stratified_holdout(std::span<const int>(labels), 0.2, 1);
  const auto pool = select<Record>(task.records, outer.train);
  const auto pool_labels = labels_of(pool);
  const Split inner =
      stratified_holdout(std::span<const int>(pool_labels), task.train.validation_fraction, 2);
  TrainedKeyModel out;
  out.test = select<Record>(task.records, outer.holdout);
  out.fit = fit(select<Record>(pool, inner.train), select<Record>(pool, inner.holdout), task.vocab,
                task.model, task.train);
  out.seconds = seconds_since(start);
  return out;
}

Outcome learnability(const KeyTokenTask& task, const TrainedKeyModel& m) {
  const auto scores = predict(m.test, task.vocab, m.fit.parameters, m.fit.config);
  const double f1 = precision_recall_f1(confusion(scores, labels_of(m.test))).f1;
  return {f1 >= 0.9 && m.fit.log.size() <= 200 && m.seconds < 300.0,
          "held-out F1 " + fmt(f1) + " (limit >= 0.9) on " + std::to_string(m.test.size()) +
              " bags; " + std::to_string(m.fit.log.size()) + " epochs run, best epoch " +
              std::to_string(m.fit.best_epoch) + "; " + fmt(m.seconds) + " s, limit 300 s"};
}

Outcome interpretability(const KeyTokenTask& task, const TrainedKeyModel& m) {
  const auto keys = key_token_strings(task.spec);
  const std::set<std::string> key_set(keys.begin(), keys.end());
  std::vector<Record> positives;
  for (const auto& r : m.test) {
    if (r.label == 1) positives.push_back(r);
  }
  std::size_t hits = 0;
  for (const auto& r : attention_of(positives, task.vocab, m.fit.parameters, m.fit.config)) {
    hits += key_set.count(r.instances.front().token);
  }
  const double rate = static_cast<double>(hits) / static_cast<double>(positives.size());
  return {rate >= 0.9, "key token has the largest weight in " + std::to_string(hits) + " of " +
                           std::to_string(positives.size()) + " positive test bags (" + fmt(rate) +
                           ", limit >= 0.9)"};
}

Outcome noise_monotonicity(const KeyTokenTask& task) {
  TrainConfig cv = task.train;
  cv.folds = 5;
  cv.repetitions = 1;
  auto mean_f1 = [&](double ratio) {
    return run_cv(task.records, task.vocab, task.model, cv,
                  noise_transform(task.vocab, NoiseKind::kLabelInversion, ratio, cv))
        .mean.f1;
  };
  const double clean = mean_f1(0.0);
  const double noisy = mean_f1(0.3);
  return {noisy < clean, "mean test F1 " + fmt(clean) + " at ratio 0.0 vs " + fmt(noisy) +
                             " at ratio 0.3 (5-fold x 1 CV, 200 epochs max)"};
}

std::set<std::string> as_set(const Record& r) { return {r.instances.begin(), r.instances.end()}; }

std::size_t minus_size(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t n = 0;
  for (const auto& x : a) n += b.count(x) ? 0 : 1;
  return n;
}

Outcome injector_exactness() {
  SyntheticSpec spec;
  spec.num_bags = 1000;
  spec.vocab_size = 60;
  spec.key_tokens = {0};
  spec.min_bag_size = 1;
  spec.max_bag_size = 9;
  spec.positive_rate = 0.4;
  spec.seed = 5;
  const auto records = generate_synthetic(spec);
  const Vocabulary vocab = build_vocabulary(records);
  std::size_t label_bad = 0, feature_bad = 0, deletion_bad = 0;
  for (double ratio : {0.0, 0.1, 0.25, 0.5, 0.77, 1.0}) {
    const auto out = inject_label_noise(records, ratio, 9);
    std::size_t flips = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      flips += out[i].label != records[i].label;
      if (out[i].instances != records[i].instances) ++label_bad;
    }
    if (flips != static_cast<std::size_t>(std::llround(ratio * 1000.0))) ++label_bad;
  }
  for (std::size_t n = 1; n <= 5; ++n) {
    const auto fed = inject_feature_noise(records, vocab, n, 10 + n);
    const auto del = delete_instances(records, n, 20 + n);
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto before = as_set(records[i]), noisy = as_set(fed[i]), kept = as_set(del[i]);
      const std::size_t removable = std::min(n, before.size());
      if (minus_size(noisy, before) != n || minus_size(before, noisy) != removable ||
          fed[i].label != records[i].label) {
        ++feature_bad;
      }
      if (minus_size(kept, before) != 0 || minus_size(before, kept) != removable ||
          del[i].label != records[i].label) {
        ++deletion_bad;
      }
    }
  }
  return {label_bad + feature_bad + deletion_bad == 0,
          "violations over 1000 records: label " + std::to_string(label_bad) + ", feature " +
              std::to_string(feature_bad) + ", deletion " + std::to_string(deletion_bad)};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome cv_determinism() {
  const auto root = std::filesystem::temp_directory_path() / "aminet_acceptance";
  std::filesystem::remove_all(root);
  const std::string flags =
      " cv --synth_bags 200 --synth_vocab 40 --d_model 16 --num_heads 2 --hidden_sizes 16,8"
      " --d_l 8 --max_epochs 10 --seed 17 --out ";
  std::string reports[2];
  for (int run = 0; run < 2; ++run) {
    const auto out = root / ("run" + std::to_string(run));
    const std::string command = std::string(AMINET_CLI_PATH) + flags + out.string() + " >/dev/null 2>&1";
    const int status = std::system(command.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      return {false, "cv run " + std::to_string(run) + " failed"};
    }
    reports[run] = slurp(out / "cv_report.csv");
  }
  const bool same = reports[0] == reports[1] && !reports[0].empty();
  return {same, std::string(same ? "identical" : "different") + " reports (" +
                    std::to_string(reports[0].size()) + " bytes, 10 folds x 5 repetitions)"};
}

}  // namespace

int main() {
  report(1, "gradient correctness", gradient_check);
  report(2, "permutation invariance", permutation_invariance);
  report(3, "padding invariance", padding_invariance);
  report(4, "0-head equivalence", zero_head_equivalence);
  report(5, "AUC oracle equivalence", auc_exactness);
  report(6, "metric zero-denominator convention", metric_conventions);

  const KeyTokenTask task = key_token_task();
  std::optional<TrainedKeyModel> trained;
  try {
    trained = train_key_model(task);
  } catch (const std::exception& e) {
    std::cout << "training the key-token model failed: " << e.what() << std::endl;
  }
  report(7, "synthetic learnability", [&] {
    return trained ? learnability(task, *trained) : Outcome{false, "no trained model"};
  });
  report(8, "attention interpretability", [&] {
    return trained ? interpretability(task, *trained) : Outcome{false, "no trained model"};
  });
  report(9, "label-noise monotonicity", [&] { return noise_monotonicity(task); });
  report(10, "injector exactness", injector_exactness);
  report(11, "cv determinism", cv_determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}

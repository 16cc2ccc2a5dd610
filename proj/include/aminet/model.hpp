#pragma once

// Bag classifier: embedding -> multi-head self-attention with residual connection ->
// instance-wise fully connected layers -> instance-level pooling ->
// bag-level pooling -> sigmoid.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aminet/autodiff.hpp"
#include "aminet/batch.hpp"
#include "aminet/error.hpp"
#include "aminet/random.hpp"
#include "aminet/tensor.hpp"

namespace aminet {

enum class InstancePooling { kSum, kMax, kMean };
enum class BagPooling { kAttention, kGatedAttention, kMax, kMean };

inline std::string_view name(InstancePooling kind) {
  switch (kind) {
    case InstancePooling::kSum: return "sum";
    case InstancePooling::kMax: return "max";
    case InstancePooling::kMean: return "mean";
  }
  return "?";
}

inline std::string_view name(BagPooling kind) {
  switch (kind) {
    case BagPooling::kAttention: return "attention";
    case BagPooling::kGatedAttention: return "gated_attention";
    case BagPooling::kMax: return "max";
    case BagPooling::kMean: return "mean";
  }
  return "?";
}

inline InstancePooling parse_instance_pooling(std::string_view text) {
  for (auto kind : {InstancePooling::kSum, InstancePooling::kMax, InstancePooling::kMean}) {
    if (name(kind) == text) return kind;
  }
  throw ConfigError("unknown instance pooling '" + std::string(text) + "' (sum, max, mean)");
}

inline BagPooling parse_bag_pooling(std::string_view text) {
  for (auto kind : {BagPooling::kAttention, BagPooling::kGatedAttention, BagPooling::kMax,
                    BagPooling::kMean}) {
    if (name(kind) == text) return kind;
  }
  throw ConfigError("unknown bag pooling '" + std::string(text) +
                    "' (attention, gated_attention, max, mean)");
}

struct ModelConfig {
  std::size_t vocab_size = 2;  // embedding rows, padding row included
  std::size_t d_model = 128;
  std::size_t num_heads = 4;  // 0 skips the attention block
  std::vector<std::size_t> hidden_sizes{64, 32};
  InstancePooling instance_pooling = InstancePooling::kSum;
  BagPooling bag_pooling = BagPooling::kGatedAttention;
  std::size_t d_l = 32;
  std::uint64_t seed = 0;

  std::size_t head_width() const { return num_heads ? d_model / num_heads : 0; }
  std::size_t representation_width() const { return hidden_sizes.back(); }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must cover padding plus at least one token");
    if (d_model == 0) throw ConfigError("d_model must be positive");
    if (num_heads > 0 && d_model % num_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                        std::to_string(num_heads) + " heads");
    }
    if (hidden_sizes.empty()) throw ConfigError("hidden_sizes must not be empty");
    for (std::size_t h : hidden_sizes) {
      if (h == 0) throw ConfigError("hidden sizes must be positive");
    }
    if (d_l == 0) throw ConfigError("d_l must be positive");
  }
};

template <class T>
struct AttentionHead {
  T query;  // [d_model, d_k]
  T key;
  T value;
};

template <class T>
struct DenseLayer {
  T weight;  // [in, out]
  T bias;    // [1, out]
};

/// Every trainable array of the network. Instantiated with Tensor for stored
/// weights and with Var for weights bound to a Tape.
template <class T>
struct ParameterSet {
  T embedding;  // [vocab_size, d_model]; row 0 is padding
  std::vector<AttentionHead<T>> heads;
  T output_projection;  // [h * d_k, d_model]; present only when heads is non-empty
  std::vector<DenseLayer<T>> ffn;
  T pool_w1;  // [d_l, 1]
  T pool_w2;  // [d_h, d_l]
  T pool_w3;  // [d_h, d_l]

  /// Calls f(name, member) for every array in a fixed order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  /// Element-wise conversion, e.g. ParameterSet<Tensor> -> ParameterSet<Var>.
  template <class F>
  auto map(F&& f) const -> ParameterSet<decltype(f(embedding))> {
    ParameterSet<decltype(f(embedding))> out;
    out.embedding = f(embedding);
    for (const auto& h : heads) out.heads.push_back({f(h.query), f(h.key), f(h.value)});
    if (!heads.empty()) out.output_projection = f(output_projection);
    for (const auto& l : ffn) out.ffn.push_back({f(l.weight), f(l.bias)});
    out.pool_w1 = f(pool_w1);
    out.pool_w2 = f(pool_w2);
    out.pool_w3 = f(pool_w3);
    return out;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("embedding"), self.embedding);
    for (std::size_t i = 0; i < self.heads.size(); ++i) {
      const std::string prefix = "attention.head" + std::to_string(i);
      f(prefix + ".query", self.heads[i].query);
      f(prefix + ".key", self.heads[i].key);
      f(prefix + ".value", self.heads[i].value);
    }
    if (!self.heads.empty()) f(std::string("attention.output"), self.output_projection);
    for (std::size_t i = 0; i < self.ffn.size(); ++i) {
      const std::string prefix = "ffn" + std::to_string(i);
      f(prefix + ".weight", self.ffn[i].weight);
      f(prefix + ".bias", self.ffn[i].bias);
    }
    f(std::string("pool.w1"), self.pool_w1);
    f(std::string("pool.w2"), self.pool_w2);
    f(std::string("pool.w3"), self.pool_w3);
  }
};

using ModelParameters = ParameterSet<Tensor>;
using ParameterNodes = ParameterSet<Var>;

/// Shapes every array must have under `config`, keyed in visit order.
inline ModelParameters zero_parameters(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model, dk = config.head_width();
  const std::size_t dh = config.representation_width();
  ModelParameters p;
  p.embedding = Tensor(Shape{config.vocab_size, d});
  for (std::size_t i = 0; i < config.num_heads; ++i) {
    p.heads.push_back({Tensor(Shape{d, dk}), Tensor(Shape{d, dk}), Tensor(Shape{d, dk})});
  }
  if (config.num_heads) p.output_projection = Tensor(Shape{config.num_heads * dk, d});
  std::size_t in = d;
  for (std::size_t out : config.hidden_sizes) {
    p.ffn.push_back({Tensor(Shape{in, out}), Tensor(Shape{1, out})});
    in = out;
  }
  p.pool_w1 = Tensor(Shape{config.d_l, 1});
  p.pool_w2 = Tensor(Shape{dh, config.d_l});
  p.pool_w3 = Tensor(Shape{dh, config.d_l});
  return p;
}

/// Gaussian weights with standard deviation 1/sqrt(fan-in), zero biases and a
/// zero padding embedding. Deterministic in config.seed.
inline ModelParameters init_parameters(const ModelConfig& config) {
  ModelParameters p = zero_parameters(config);
  auto rng = make_rng(config.seed);
  p.visit([&](const std::string& key, Tensor& t) {
    if (key.ends_with(".bias")) return;
    // Embedding rows are looked up one at a time; their fan-in is the width.
    const std::size_t fan_in = key == "embedding" ? t.shape()[1] : t.shape()[0];
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    for (double& v : t.values()) v = normal(rng);
  });
  for (std::size_t c = 0; c < config.d_model; ++c) p.embedding(kPaddingId, c) = 0.0;
  return p;
}

inline ParameterNodes bind_parameters(Tape& tape, const ModelParameters& params) {
  return params.map([&](const Tensor& t) { return tape.variable(t); });
}

inline std::size_t parameter_count(const ModelParameters& params) {
  std::size_t n = 0;
  params.visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

/// softmax(Q·Kᵀ / sqrt(d_k)) · V with keys restricted to `mask`.
inline Var scaled_dot_attention(Var query, Var key, Var value, const std::vector<bool>& mask) {
  if (query.shape() != key.shape() || key.shape()[0] != value.shape()[0]) {
    throw DimensionError("scaled_dot_attention: incompatible shapes " + to_string(query.shape()) +
                         ", " + to_string(key.shape()) + ", " + to_string(value.shape()));
  }
  const double width = static_cast<double>(query.shape()[1]);
  Var logits = scale(matmul(query, transpose(key)), 1.0 / std::sqrt(width));
  return matmul(masked_softmax(logits, mask), value);
}

/// Concat(head_1..head_h)·W^m where head_i attends inside its own projected subspace.
inline Var multi_head_attention(Var x, const ParameterNodes& params, const std::vector<bool>& mask) {
  if (params.heads.empty()) {
    throw ContractError("multi_head_attention needs at least one head");
  }
  std::vector<Var> heads;
  heads.reserve(params.heads.size());
  for (const auto& h : params.heads) {
    heads.push_back(
        scaled_dot_attention(matmul(x, h.query), matmul(x, h.key), matmul(x, h.value), mask));
  }
  return matmul(concat_columns(heads), params.output_projection);
}

/// X + MultiHead(X); the identity when the model has no heads.
inline Var residual_block(Var x, const ParameterNodes& params, const std::vector<bool>& mask) {
  if (params.heads.empty()) return x;
  return add(x, multi_head_attention(x, params, mask));
}

/// Shared tanh(X·W + b) layers applied to every instance row.
inline Var instance_ffn(Var x, const ParameterNodes& params) {
  Var ones = x.tape()->constant(Tensor(Shape{x.shape()[0], 1}, 1.0));
  Var h = x;
  for (const auto& layer : params.ffn) {
    h = tanh(add(matmul(h, layer.weight), matmul(ones, layer.bias)));
  }
  return h;
}

/// Per-instance scalar score [M]; padded instances score 0.
inline Var instance_pool(Var h, InstancePooling kind, const std::vector<bool>& mask) {
  const Tensor& hv = h.value();
  detail::require_rank("instance_pool", hv, 2);
  const std::size_t rows = hv.shape()[0], width = hv.shape()[1];
  if (mask.size() != rows) throw DimensionError("instance_pool: mask length mismatch");
  Tape& tape = *h.tape();
  Var scores;
  switch (kind) {
    case InstancePooling::kSum:
      scores = reduce_sum(h, 1);
      break;
    case InstancePooling::kMean:
      scores = scale(reduce_sum(h, 1), 1.0 / static_cast<double>(width));
      break;
    case InstancePooling::kMax: {
      Tensor pick(hv.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < width; ++c) {
          if (hv(r, c) > hv(r, best)) best = c;
        }
        pick(r, best) = 1.0;
      }
      scores = reduce_sum(multiply(h, tape.constant(std::move(pick))), 1);
      break;
    }
  }
  Tensor keep(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) keep[r] = mask[r] ? 1.0 : 0.0;
  return multiply(scores, tape.constant(std::move(keep)));
}

struct BagPoolNodes {
  Var value;    // [1, 1]
  Var weights;  // [1, M], zero on padding
};

/// Bag score v = sum_m a_m * v_m with weights a from the chosen pooling.
inline BagPoolNodes bag_pool(Var h, Var scores, BagPooling kind, const ParameterNodes& params,
                             const std::vector<bool>& mask) {
  const std::size_t rows = h.shape()[0];
  if (mask.size() != rows || scores.value().size() != rows) {
    throw DimensionError("bag_pool: instance count mismatch");
  }
  Tape& tape = *h.tape();
  Var weights;
  switch (kind) {
    case BagPooling::kGatedAttention:
    case BagPooling::kAttention: {
      Var hidden = tanh(matmul(h, params.pool_w2));
      if (kind == BagPooling::kGatedAttention) {
        hidden = multiply(hidden, sigmoid(matmul(h, params.pool_w3)));
      }
      Var logits = reshape(matmul(hidden, params.pool_w1), Shape{1, rows});
      weights = masked_softmax(logits, mask);
      break;
    }
    case BagPooling::kMax: {
      const Tensor& s = scores.value();
      std::size_t best = rows;
      for (std::size_t m = 0; m < rows; ++m) {
        if (mask[m] && (best == rows || s[m] > s[best])) best = m;
      }
      if (best == rows) throw DegenerateBagError("bag_pool: every instance is masked");
      Tensor pick(Shape{1, rows});
      pick[best] = 1.0;
      weights = tape.constant(std::move(pick));
      break;
    }
    case BagPooling::kMean: {
      std::size_t count = 0;
      for (bool b : mask) count += b ? 1 : 0;
      if (count == 0) throw DegenerateBagError("bag_pool: every instance is masked");
      Tensor uniform(Shape{1, rows});
      for (std::size_t m = 0; m < rows; ++m) uniform[m] = mask[m] ? 1.0 / static_cast<double>(count) : 0.0;
      weights = tape.constant(std::move(uniform));
      break;
    }
  }
  return {matmul(weights, reshape(scores, Shape{rows, 1})), weights};
}

struct BagNodes {
  Var probability;  // [1, 1]
  Var weights;      // [1, M]
  Var scores;       // [M]
};

inline BagNodes forward_bag(const ParameterNodes& params, const ModelConfig& config,
                            std::span<const std::size_t> ids, const std::vector<bool>& mask) {
  if (ids.size() != mask.size()) throw DimensionError("forward: ids and mask lengths differ");
  Var x = gather_rows(params.embedding, ids);
  Var h = instance_ffn(residual_block(x, params, mask), params);
  Var scores = instance_pool(h, config.instance_pooling, mask);
  BagPoolNodes pooled = bag_pool(h, scores, config.bag_pooling, params, mask);
  return {sigmoid(pooled.value), pooled.weights, scores};
}

struct ForwardOutput {
  std::vector<double> probabilities;
  std::vector<std::vector<double>> attention_weights;  // per bag, length max_instances
  std::vector<std::vector<double>> instance_scores;
};

/// Evaluates every bag of `batch`; no gradients are kept.
inline ForwardOutput forward(const BagBatch& batch, const ModelParameters& params,
                             const ModelConfig& config) {
  batch.validate();
  Tape tape;
  const ParameterNodes nodes = params.map([&](const Tensor& t) { return tape.constant(t); });
  ForwardOutput out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    BagNodes bag = forward_bag(nodes, config, batch.ids(b), batch.row_mask(b));
    out.probabilities.push_back(bag.probability.value().item());
    out.attention_weights.push_back(bag.weights.value().values());
    out.instance_scores.push_back(bag.scores.value().values());
  }
  return out;
}

}  // namespace aminet

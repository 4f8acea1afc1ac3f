#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "oaif/vocab.hpp"

namespace oaif {

/// Sparse gradient over the policy weight table, keyed by flat weight index
/// (feature * vocab_size + token).
struct SparseGrad {
  std::unordered_map<std::int64_t, double> entries;

  void add(std::int64_t index, double value) { entries[index] += value; }

  /// this += scale * other
  void axpy(double scale, const SparseGrad& other) {
    for (const auto& [idx, val] : other.entries) entries[idx] += scale * val;
  }

  void scale(double factor) {
    for (auto& [idx, val] : entries) val *= factor;
  }

  double at(std::int64_t index) const {
    auto it = entries.find(index);
    return it == entries.end() ? 0.0 : it->second;
  }
};

/// Hashed log-linear autoregressive policy with backoff features: for each
/// order j = 0..k the last j token ids of the context (left-padded with a
/// reserved pad id) are hashed into one of `features` buckets, and the
/// next-token logits are the sum of the active buckets' weight rows. Level 0
/// is a single shared feature, so coarse structure is learned quickly while
/// higher orders refine it. All-zero weights give the uniform distribution.
struct PolicyParams {
  int vocab_size = 0;
  int order = 0;
  std::int64_t features = 0;
  std::vector<double> weights;  // features * vocab_size, row-major

  static PolicyParams zeros(int vocab_size, int order, std::int64_t features) {
    if (vocab_size < 2 || vocab_size > 256) {
      throw std::invalid_argument("PolicyParams: bad vocab size");
    }
    if (order < 1) throw std::invalid_argument("PolicyParams: order must be >= 1");
    if (features < 1) throw std::invalid_argument("PolicyParams: features must be >= 1");
    PolicyParams p;
    p.vocab_size = vocab_size;
    p.order = order;
    p.features = features;
    p.weights.assign(static_cast<std::size_t>(features) * vocab_size, 0.0);
    return p;
  }

  Vocab vocab() const { return Vocab(vocab_size); }

  /// Reserved begin-of-sequence pad id, distinct from every vocab id.
  TokenId pad_id() const { return vocab_size; }

  double& weight(std::int64_t feature, TokenId token) {
    return weights[static_cast<std::size_t>(feature) * vocab_size + token];
  }
  double weight(std::int64_t feature, TokenId token) const {
    return weights[static_cast<std::size_t>(feature) * vocab_size + token];
  }

  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    return a.vocab_size == b.vocab_size && a.order == b.order &&
           a.features == b.features && a.weights == b.weights;
  }
};

/// Multiply-shift hash of the padded j-gram ending at `context.back()`,
/// salted by the backoff level so levels land in distinct buckets.
inline std::int64_t context_feature(const PolicyParams& params,
                                    std::span<const TokenId> context, int level) {
  std::uint64_t h =
      0x9e3779b97f4a7c15ULL ^ (static_cast<std::uint64_t>(level) * 0xff51afd7ed558ccdULL);
  const std::size_t n = context.size();
  for (int back = level; back >= 1; --back) {
    const TokenId id = (static_cast<std::size_t>(back) <= n)
                           ? context[n - back]
                           : params.pad_id();
    h ^= static_cast<std::uint64_t>(id) + 1;
    h *= 0x100000001b3ULL;
  }
  h *= 0xda942042e4dd58b5ULL;
  h ^= h >> 29;
  return static_cast<std::int64_t>(h % static_cast<std::uint64_t>(params.features));
}

/// All order+1 active feature ids for a context (levels 0..k). Hash
/// collisions between levels are tolerated: a doubled bucket simply
/// contributes its row twice, in logits and gradient alike.
inline std::vector<std::int64_t> active_features(const PolicyParams& params,
                                                 std::span<const TokenId> context) {
  std::vector<std::int64_t> feats;
  feats.reserve(params.order + 1);
  for (int level = 0; level <= params.order; ++level) {
    feats.push_back(context_feature(params, context, level));
  }
  return feats;
}

inline std::vector<double> next_token_logits(const PolicyParams& params,
                                             std::span<const TokenId> context) {
  const Vocab vocab = params.vocab();
  for (TokenId id : context) vocab.check(id);
  std::vector<double> logits(params.vocab_size, 0.0);
  for (int level = 0; level <= params.order; ++level) {
    const std::int64_t f = context_feature(params, context, level);
    const auto* row = &params.weights[static_cast<std::size_t>(f) * params.vocab_size];
    for (int v = 0; v < params.vocab_size; ++v) logits[v] += row[v];
  }
  return logits;
}

inline std::vector<double> next_token_logits(const PolicyParams& params,
                                             const TokenSeq& context) {
  return next_token_logits(params, std::span<const TokenId>(context.ids));
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double log_z = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

/// Exact log pi(response | prompt), summed over every response token
/// (including the trailing EOS when present).
inline double sequence_logprob(const PolicyParams& params, const TokenSeq& prompt,
                               const TokenSeq& response) {
  if (response.empty()) {
    throw std::invalid_argument("sequence_logprob: empty response");
  }
  const Vocab vocab = params.vocab();
  prompt.validate(vocab);
  response.validate(vocab);

  std::vector<TokenId> context = prompt.ids;
  context.reserve(prompt.size() + response.size());
  double total = 0.0;
  for (TokenId y : response.ids) {
    const auto logits = next_token_logits(params, std::span<const TokenId>(context));
    total += log_softmax(logits)[y];
    context.push_back(y);
  }
  return total;
}

/// Exact gradient of sequence_logprob with respect to the weight table.
/// Each step contributes (one_hot(y_t) - softmax(logits)) to the row of
/// every active context feature.
inline SparseGrad logprob_gradient(const PolicyParams& params, const TokenSeq& prompt,
                                   const TokenSeq& response) {
  if (response.empty()) {
    throw std::invalid_argument("logprob_gradient: empty response");
  }
  const Vocab vocab = params.vocab();
  prompt.validate(vocab);
  response.validate(vocab);

  SparseGrad grad;
  std::vector<TokenId> context = prompt.ids;
  for (TokenId y : response.ids) {
    const auto logits = next_token_logits(params, std::span<const TokenId>(context));
    const auto probs = softmax(logits);
    for (const std::int64_t f :
         active_features(params, std::span<const TokenId>(context))) {
      const std::int64_t base = f * params.vocab_size;
      for (int v = 0; v < params.vocab_size; ++v) {
        grad.add(base + v, (v == y ? 1.0 : 0.0) - probs[v]);
      }
    }
    context.push_back(y);
  }
  return grad;
}

/// Uniform double in [0, 1) with 53 bits of entropy, independent of the
/// standard library's distribution implementations.
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Autoregressive temperature sampling. Temperatures below 1e-6 switch to
/// argmax with lowest-id tie-break. Stops at EOS (kept in the output) or at
/// max_len tokens (truncation, no EOS appended).
inline TokenSeq sample_response(const PolicyParams& params, const TokenSeq& prompt,
                                double temperature, int max_len,
                                std::mt19937_64& rng) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("sample_response: temperature must be > 0");
  }
  if (max_len < 1) {
    throw std::invalid_argument("sample_response: max_len must be >= 1");
  }
  const Vocab vocab = params.vocab();
  prompt.validate(vocab);

  TokenSeq response;
  response.role = SeqRole::kResponse;
  std::vector<TokenId> context = prompt.ids;
  for (int t = 0; t < max_len; ++t) {
    const auto logits = next_token_logits(params, std::span<const TokenId>(context));
    TokenId pick = 0;
    if (temperature < 1e-6) {
      for (int v = 1; v < params.vocab_size; ++v) {
        if (logits[v] > logits[pick]) pick = v;
      }
    } else {
      std::vector<double> scaled(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
      const auto probs = softmax(scaled);
      const double u = uniform_unit(rng);
      double cum = 0.0;
      pick = params.vocab_size - 1;
      for (int v = 0; v < params.vocab_size; ++v) {
        cum += probs[v];
        if (u < cum) {
          pick = v;
          break;
        }
      }
    }
    response.ids.push_back(pick);
    context.push_back(pick);
    if (pick == vocab.eos()) break;
  }
  return response;
}

}  // namespace oaif

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include "oaif/losses.hpp"
#include "oaif/vocab.hpp"

namespace oaif {

/// Raised by annotators that failed to produce a score (e.g. remote
/// transport failure); carries the number of retries attempted.
class AnnotationError : public std::runtime_error {
 public:
  AnnotationError(const std::string& what, int retries)
      : std::runtime_error(what), retries_(retries) {}
  int retries() const { return retries_; }

 private:
  int retries_ = 0;
};

/// Debiased pairwise preference: p_first is the order-averaged probability
/// that the first response is preferred, with both single-order raw scores.
struct AnnotatorVerdict {
  double p_first = 0.5;
  double raw_ab = 0.5;
  double raw_ba = 0.5;
  std::string annotator_id;
  bool degraded = false;  // remote fallback used hard sampled labels
};

/// Order-averaged debiased probability that the first response is preferred.
/// The average is evaluated in a canonical orientation of the pair so that,
/// whenever the two presentation orders see the same raw scores (any
/// deterministic annotator), p(a, b) and p(b, a) are exact floating-point
/// complements: p + (1 - p) rounds to 1 for every double p in [0, 1].
inline double debiased_p_first(const TokenSeq& a, const TokenSeq& b,
                               double raw_ab, double raw_ba) {
  const bool mirrored = std::lexicographical_compare(b.ids.begin(), b.ids.end(),
                                                     a.ids.begin(), a.ids.end());
  if (mirrored) return 1.0 - (raw_ba + (1.0 - raw_ab)) / 2.0;
  return (raw_ab + (1.0 - raw_ba)) / 2.0;
}

class Annotator {
 public:
  virtual ~Annotator() = default;

  virtual std::string id() const = 0;

  /// Probability in [0, 1] that `first` is preferred over `second` when
  /// presented in this order.
  virtual double raw_score(const TokenSeq& x, const TokenSeq& first,
                           const TokenSeq& second) = 0;

  /// Scores both presentation orders and averages them, cancelling
  /// positional bias. The two raw calls use independent noise draws.
  virtual AnnotatorVerdict score_pair(const TokenSeq& x, const TokenSeq& a,
                                      const TokenSeq& b) {
    AnnotatorVerdict v;
    v.annotator_id = id();
    v.raw_ab = raw_score(x, a, b);
    v.raw_ba = raw_score(x, b, a);
    v.p_first = debiased_p_first(a, b, v.raw_ab, v.raw_ba);
    return v;
  }
};

enum class OracleKind { kBradleyTerry, kDeterministicArgmax };

enum class RewardKind { kTargetSymbolCount, kNegLength, kHelpfulShort };

inline std::string reward_name(RewardKind r) {
  switch (r) {
    case RewardKind::kTargetSymbolCount: return "target_symbol_count";
    case RewardKind::kNegLength: return "neg_length";
    case RewardKind::kHelpfulShort: return "helpful_short";
  }
  return "?";
}

inline RewardKind reward_from_name(const std::string& name) {
  if (name == "target_symbol_count") return RewardKind::kTargetSymbolCount;
  if (name == "neg_length") return RewardKind::kNegLength;
  if (name == "helpful_short") return RewardKind::kHelpfulShort;
  throw std::invalid_argument("unknown reward name: " + name);
}

/// Programmatic judge standing in for a human/LLM annotator, driven by a
/// hidden reward r(x, y).
struct OracleSpec {
  OracleKind kind = OracleKind::kBradleyTerry;
  RewardKind reward = RewardKind::kTargetSymbolCount;
  TokenId target_symbol = 3;
  double length_penalty = 0.0;  // lambda in helpful_short
  double noise = 0.0;           // label-flip probability epsilon
  double position_bias = 0.0;   // mixture weight toward always-prefer-first
  std::uint64_t seed = 0;

  void validate() const {
    if (noise < 0.0 || noise >= 0.5) {
      throw std::invalid_argument("OracleSpec: noise must be in [0, 0.5)");
    }
    if (length_penalty < 0.0) {
      throw std::invalid_argument("OracleSpec: length_penalty must be >= 0");
    }
    if (position_bias < 0.0 || position_bias > 1.0) {
      throw std::invalid_argument("OracleSpec: position_bias must be in [0, 1]");
    }
  }
};

class OracleAnnotator : public Annotator {
 public:
  OracleAnnotator(OracleSpec spec, Vocab vocab)
      : spec_(spec), vocab_(vocab), noise_rng_(spec.seed) {
    spec_.validate();
  }

  std::string id() const override {
    std::string tag = spec_.kind == OracleKind::kBradleyTerry ? "bt" : "argmax";
    return "oracle:" + tag + ":" + reward_name(spec_.reward);
  }

  double hidden_reward(const TokenSeq& /*x*/, const TokenSeq& y) const {
    const double len = static_cast<double>(y.content_length(vocab_));
    switch (spec_.reward) {
      case RewardKind::kTargetSymbolCount:
        return static_cast<double>(
            std::count(y.ids.begin(), y.ids.end(), spec_.target_symbol));
      case RewardKind::kNegLength:
        return -len;
      case RewardKind::kHelpfulShort:
        return static_cast<double>(
                   std::count(y.ids.begin(), y.ids.end(), spec_.target_symbol)) -
               spec_.length_penalty * len;
    }
    return 0.0;
  }

  double raw_score(const TokenSeq& x, const TokenSeq& first,
                   const TokenSeq& second) override {
    const double r1 = hidden_reward(x, first);
    const double r2 = hidden_reward(x, second);
    double score;
    if (spec_.kind == OracleKind::kBradleyTerry) {
      score = sigmoid(r1 - r2);
    } else {
      score = r1 > r2 ? 1.0 : (r1 < r2 ? 0.0 : 0.5);
    }
    if (spec_.noise > 0.0 && uniform_unit(noise_rng_) < spec_.noise) {
      score = 1.0 - score;
    }
    return (1.0 - spec_.position_bias) * score + spec_.position_bias * 1.0;
  }

  const OracleSpec& spec() const { return spec_; }

 private:
  OracleSpec spec_;
  Vocab vocab_;
  std::mt19937_64 noise_rng_;
};

/// Hard pair label extracted from a debiased verdict.
struct LabeledPair {
  TokenSeq y_plus;
  TokenSeq y_minus;
  double score = 0.5;  // annotator p for the winner ordering, >= 0.5
};

/// Thresholds the debiased score into (y+, y-) or a tie. Strict
/// inequalities, so p_first == 0.5 is a tie even at tie_epsilon == 0.
inline std::optional<LabeledPair> label(const AnnotatorVerdict& verdict,
                                        const TokenSeq& a, const TokenSeq& b,
                                        double tie_epsilon) {
  if (tie_epsilon < 0.0 || tie_epsilon >= 0.5) {
    throw std::invalid_argument("label: tie_epsilon must be in [0, 0.5)");
  }
  if (verdict.p_first > 0.5 + tie_epsilon) {
    return LabeledPair{a, b, verdict.p_first};
  }
  if (verdict.p_first < 0.5 - tie_epsilon) {
    return LabeledPair{b, a, 1.0 - verdict.p_first};
  }
  return std::nullopt;
}

}  // namespace oaif

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oaif/annotate.hpp"
#include "oaif/policy.hpp"
#include "oaif/trainer.hpp"
#include "oaif/vocab.hpp"

namespace oaif {

struct EvalConfig {
  double temperature = 0.9;
  int max_len = 32;
  double tie_epsilon = 0.02;
  std::uint64_t seed = 1;
};

struct WinRateReport {
  int wins = 0;
  int ties = 0;
  int losses = 0;
  int failures = 0;  // annotation failures, excluded from the counts
  int n = 0;         // prompts judged (wins + ties + losses)
  double win_rate = 0.0;
  std::string judge_id;
};

inline nlohmann::json to_json(const WinRateReport& r) {
  return {{"wins", r.wins},     {"ties", r.ties},         {"losses", r.losses},
          {"failures", r.failures}, {"n", r.n},           {"win_rate", r.win_rate},
          {"judge_id", r.judge_id}};
}

/// Per prompt: one sampled response from each policy, judged order-averaged.
/// Win if the debiased score for policy_a exceeds 0.5 + tie_epsilon.
inline WinRateReport win_rate(const PolicyParams& policy_a, const PolicyParams& policy_b,
                              Annotator& judge, std::span<const TokenSeq> prompts,
                              const EvalConfig& cfg) {
  if (prompts.empty()) throw std::invalid_argument("win_rate: no prompts");
  WinRateReport report;
  report.judge_id = judge.id();
  std::mt19937_64 rng(cfg.seed);
  for (const TokenSeq& x : prompts) {
    const TokenSeq ya = sample_response(policy_a, x, cfg.temperature, cfg.max_len, rng);
    const TokenSeq yb = sample_response(policy_b, x, cfg.temperature, cfg.max_len, rng);
    double p;
    if (ya == yb) {
      p = 0.5;
    } else {
      try {
        p = judge.score_pair(x, ya, yb).p_first;
      } catch (const AnnotationError&) {
        ++report.failures;
        continue;
      }
    }
    if (p > 0.5 + cfg.tie_epsilon) {
      ++report.wins;
    } else if (p < 0.5 - cfg.tie_epsilon) {
      ++report.losses;
    } else {
      ++report.ties;
    }
  }
  report.n = report.wins + report.ties + report.losses;
  if (report.n > 0) report.win_rate = static_cast<double>(report.wins) / report.n;
  return report;
}

/// Round-robin multi-way comparison: per prompt, one response per policy and
/// a debiased score per unordered pair; the policy with the highest total
/// score takes the prompt, ties split fractionally. Fractions sum to 1.
inline std::vector<double> multiway_fraction(
    std::span<const PolicyParams* const> policies, Annotator& judge,
    std::span<const TokenSeq> prompts, const EvalConfig& cfg) {
  if (policies.size() < 2) throw std::invalid_argument("multiway: need >= 2 policies");
  if (prompts.empty()) throw std::invalid_argument("multiway: no prompts");

  const std::size_t k = policies.size();
  std::vector<double> fractions(k, 0.0);
  std::mt19937_64 rng(cfg.seed);
  int judged = 0;
  for (const TokenSeq& x : prompts) {
    std::vector<TokenSeq> responses;
    responses.reserve(k);
    for (const PolicyParams* p : policies) {
      responses.push_back(sample_response(*p, x, cfg.temperature, cfg.max_len, rng));
    }
    std::vector<double> totals(k, 0.0);
    bool failed = false;
    for (std::size_t i = 0; i < k && !failed; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        double p;
        if (responses[i] == responses[j]) {
          p = 0.5;
        } else {
          try {
            p = judge.score_pair(x, responses[i], responses[j]).p_first;
          } catch (const AnnotationError&) {
            failed = true;
            break;
          }
        }
        totals[i] += p;
        totals[j] += 1.0 - p;
      }
    }
    if (failed) continue;
    const double best = *std::max_element(totals.begin(), totals.end());
    std::vector<std::size_t> winners;
    for (std::size_t i = 0; i < k; ++i) {
      if (totals[i] >= best - 1e-12) winners.push_back(i);
    }
    for (std::size_t w : winners) fractions[w] += 1.0 / winners.size();
    ++judged;
  }
  if (judged == 0) throw std::runtime_error("multiway: every prompt failed annotation");
  for (double& f : fractions) f /= judged;
  return fractions;
}

struct BucketStat {
  int count = 0;
  double mean_length = 0.0;
  double mean_score = 0.0;
  double stderr_score = 0.0;
};

struct ScoredResponse {
  int length = 0;
  double score = 0.0;
};

/// Equal-count quantile bucketing by response length; per-bucket mean and
/// standard error of the quality score. Sort is stable so equal lengths keep
/// input order.
inline std::vector<BucketStat> length_buckets(std::vector<ScoredResponse> responses,
                                              int n_buckets = 6) {
  if (n_buckets < 1) throw std::invalid_argument("length_buckets: n_buckets must be >= 1");
  if (responses.size() < static_cast<std::size_t>(n_buckets)) {
    throw std::invalid_argument("length_buckets: fewer responses than buckets");
  }
  std::stable_sort(responses.begin(), responses.end(),
                   [](const ScoredResponse& a, const ScoredResponse& b) {
                     return a.length < b.length;
                   });
  const std::size_t n = responses.size();
  const std::size_t base = n / n_buckets;
  const std::size_t extra = n % n_buckets;

  std::vector<BucketStat> buckets;
  std::size_t pos = 0;
  for (int b = 0; b < n_buckets; ++b) {
    const std::size_t size = base + (static_cast<std::size_t>(b) < extra ? 1 : 0);
    BucketStat stat;
    stat.count = static_cast<int>(size);
    double sum = 0.0, sum_sq = 0.0, len_sum = 0.0;
    for (std::size_t i = pos; i < pos + size; ++i) {
      sum += responses[i].score;
      sum_sq += responses[i].score * responses[i].score;
      len_sum += responses[i].length;
    }
    stat.mean_score = sum / size;
    stat.mean_length = len_sum / size;
    if (size > 1) {
      const double var = (sum_sq - size * stat.mean_score * stat.mean_score) /
                         static_cast<double>(size - 1);
      stat.stderr_score = std::sqrt(std::max(0.0, var) / size);
    }
    buckets.push_back(stat);
    pos += size;
  }
  return buckets;
}

struct GroupStat {
  std::string label;
  int n = 0;
  double mean_logprob = 0.0;
  double stderr_logprob = 0.0;
};

/// Mean and standard error of log pi(y|x) per labeled response group, plus
/// the gap between the first two group means.
struct ShiftReport {
  std::vector<GroupStat> groups;
  double gap = 0.0;  // groups[0].mean - groups[1].mean
};

struct ResponseGroup {
  std::string label;
  std::vector<std::pair<TokenSeq, TokenSeq>> items;  // (prompt, response)
};

inline ShiftReport shift_probe(const PolicyParams& pi,
                               std::span<const ResponseGroup> groups) {
  if (groups.size() < 2) throw std::invalid_argument("shift_probe: need >= 2 groups");
  ShiftReport report;
  for (const ResponseGroup& g : groups) {
    if (g.items.size() < 2) {
      throw std::invalid_argument("shift_probe: group '" + g.label +
                                  "' needs >= 2 responses for a standard error");
    }
    GroupStat stat;
    stat.label = g.label;
    stat.n = static_cast<int>(g.items.size());
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& [x, y] : g.items) {
      const double lp = sequence_logprob(pi, x, y);
      sum += lp;
      sum_sq += lp * lp;
    }
    stat.mean_logprob = sum / stat.n;
    const double var =
        (sum_sq - stat.n * stat.mean_logprob * stat.mean_logprob) / (stat.n - 1);
    stat.stderr_logprob = std::sqrt(std::max(0.0, var) / stat.n);
    report.groups.push_back(stat);
  }
  report.gap = report.groups[0].mean_logprob - report.groups[1].mean_logprob;
  return report;
}

inline nlohmann::json to_json(const ShiftReport& r) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"label", g.label},
                      {"n", g.n},
                      {"mean_logprob", g.mean_logprob},
                      {"stderr_logprob", g.stderr_logprob}});
  }
  return {{"groups", groups}, {"gap", r.gap}};
}

struct ReferencePair {
  TokenSeq x;
  TokenSeq a;
  TokenSeq b;
  bool a_preferred = true;
};

/// Fraction of pairs where the candidate's debiased hard label matches the
/// reference label; candidate ties count as half a match.
inline double annotator_agreement(Annotator& candidate,
                                  std::span<const ReferencePair> pairs,
                                  double tie_epsilon = 0.0) {
  if (pairs.empty()) throw std::invalid_argument("annotator_agreement: no pairs");
  double matches = 0.0;
  for (const ReferencePair& p : pairs) {
    const AnnotatorVerdict v = candidate.score_pair(p.x, p.a, p.b);
    const auto labeled = label(v, p.a, p.b, tie_epsilon);
    if (!labeled) {
      matches += 0.5;
    } else {
      const bool candidate_prefers_a = labeled->y_plus == p.a;
      if (candidate_prefers_a == p.a_preferred) matches += 1.0;
    }
  }
  return matches / static_cast<double>(pairs.size());
}

}  // namespace oaif

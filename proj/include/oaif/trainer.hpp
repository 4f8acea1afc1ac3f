#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oaif/annotate.hpp"
#include "oaif/checkpoint.hpp"
#include "oaif/losses.hpp"
#include "oaif/policy.hpp"
#include "oaif/vocab.hpp"

namespace oaif {

/// Where a preference pair came from: online means the label was produced by
/// an accessible preference function at creation time; on_policy means the
/// responses were sampled from the policy being trained at the step consumed.
struct Provenance {
  bool online = false;
  bool on_policy = false;
  std::string generator_policy_id;
  std::string annotator_id;
  std::int64_t step_created = 0;
};

struct PreferenceTriplet {
  TokenSeq x;
  TokenSeq y_plus;
  TokenSeq y_minus;
  double score = 0.5;  // annotator p for the winner ordering, >= 0.5
  Provenance provenance;

  void validate(const Vocab& vocab) const {
    x.validate(vocab);
    y_plus.validate(vocab);
    y_minus.validate(vocab);
    if (y_plus == y_minus) {
      throw std::invalid_argument("PreferenceTriplet: y_plus == y_minus");
    }
    if (score < 0.5 || score > 1.0) {
      throw std::invalid_argument("PreferenceTriplet: winner score must be in [0.5, 1]");
    }
  }
};

struct TrainingConfig {
  LossKind loss{LossVariant::kDpo, 0.1};
  double learning_rate = 0.05;
  int warmup_steps = 20;
  int batch_size = 32;
  double temperature = 0.9;
  int max_steps = 500;
  double tie_epsilon = 0.02;
  int resample_attempts = 4;
  std::uint64_t seed = 1;
  int eval_every = 50;

  void validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
    if (warmup_steps < 0) throw std::invalid_argument("warmup_steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
    if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
    if (tie_epsilon < 0.0 || tie_epsilon >= 0.5) {
      throw std::invalid_argument("tie_epsilon must be in [0, 0.5)");
    }
    if (resample_attempts < 1) throw std::invalid_argument("resample_attempts must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  }
};

/// Per-step metrics. pairs_used + ties_dropped + failures == batch size.
struct StepRecord {
  std::int64_t step = 0;
  double mean_loss = 0.0;
  double mean_margin = 0.0;
  int pairs_used = 0;
  int ties_dropped = 0;
  int failures = 0;             // resample exhaustion or annotation errors
  int annotation_failures = 0;  // subset of failures caused by the annotator
  double mean_response_length = 0.0;
  double learning_rate = 0.0;
};

/// Linear warm-up: 0 at step 0, full learning rate from warmup_steps on.
inline double lr_at(std::int64_t step, const TrainingConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_at: step must be >= 0");
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(step) /
         static_cast<double>(cfg.warmup_steps);
}

namespace detail {

inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline void apply_gradient(PolicyParams& theta, const SparseGrad& grad, double lr) {
  for (const auto& [idx, val] : grad.entries) {
    theta.weights[static_cast<std::size_t>(idx)] -= lr * val;
  }
}

}  // namespace detail

/// One online step: sample two responses per prompt from the current policy,
/// annotate, label, and descend on the mean pair gradient. Identical samples
/// are resampled up to cfg.resample_attempts, then the prompt is skipped.
inline StepRecord online_step(PolicyParams& theta, const PolicySnapshot& theta0,
                              Annotator& annotator,
                              std::span<const TokenSeq> prompts_batch,
                              const TrainingConfig& cfg, std::int64_t step,
                              int max_len, std::mt19937_64& rng,
                              std::vector<PreferenceTriplet>* consumed = nullptr,
                              const std::string& policy_id = "theta") {
  if (prompts_batch.empty()) {
    throw std::invalid_argument("online_step: empty prompt batch");
  }
  StepRecord rec;
  rec.step = step;
  rec.learning_rate = lr_at(step, cfg);

  SparseGrad total;
  double loss_sum = 0.0;
  double margin_sum = 0.0;
  double length_sum = 0.0;
  int sampled_responses = 0;
  const Vocab vocab = theta.vocab();

  for (const TokenSeq& x : prompts_batch) {
    TokenSeq a, b;
    bool distinct = false;
    for (int attempt = 0; attempt < cfg.resample_attempts; ++attempt) {
      a = sample_response(theta, x, cfg.temperature, max_len, rng);
      b = sample_response(theta, x, cfg.temperature, max_len, rng);
      if (a != b) {
        distinct = true;
        break;
      }
    }
    if (!distinct) {
      ++rec.failures;
      continue;
    }
    AnnotatorVerdict verdict;
    try {
      verdict = annotator.score_pair(x, a, b);
    } catch (const AnnotationError&) {
      ++rec.failures;
      ++rec.annotation_failures;
      continue;
    }
    const auto labeled = label(verdict, a, b, cfg.tie_epsilon);
    if (!labeled) {
      ++rec.ties_dropped;
      continue;
    }

    const PairMargin m = margin(theta, theta0, x, labeled->y_plus, labeled->y_minus);
    loss_sum += loss(cfg.loss, m.h);
    margin_sum += m.h;
    length_sum += static_cast<double>(a.content_length(vocab)) +
                  static_cast<double>(b.content_length(vocab));
    sampled_responses += 2;

    const double scale = dloss_dh(cfg.loss, m.h);
    total.axpy(scale, logprob_gradient(theta, x, labeled->y_plus));
    total.axpy(-scale, logprob_gradient(theta, x, labeled->y_minus));
    ++rec.pairs_used;

    if (consumed) {
      PreferenceTriplet t;
      t.x = x;
      t.y_plus = labeled->y_plus;
      t.y_minus = labeled->y_minus;
      t.score = labeled->score;
      t.provenance = {true, true, policy_id, verdict.annotator_id, step};
      consumed->push_back(std::move(t));
    }
  }

  if (rec.pairs_used > 0) {
    total.scale(1.0 / rec.pairs_used);
    detail::apply_gradient(theta, total, rec.learning_rate);
    rec.mean_loss = loss_sum / rec.pairs_used;
    rec.mean_margin = margin_sum / rec.pairs_used;
    rec.mean_response_length = length_sum / sampled_responses;
  }
  return rec;
}

using StepCallback = std::function<void(const StepRecord&, const PolicyParams&)>;

/// Full online run. The trajectory is a pure function of (config, initial
/// theta, annotator state): each step draws from its own seed stream.
inline std::vector<StepRecord> run_online(PolicyParams& theta,
                                          const PolicySnapshot& theta0,
                                          Annotator& annotator,
                                          std::span<const TokenSeq> prompt_set,
                                          const TrainingConfig& cfg, int max_len,
                                          const StepCallback& on_step = {},
                                          std::int64_t start_step = 0) {
  cfg.validate();
  if (prompt_set.empty()) throw std::invalid_argument("run_online: empty prompt set");

  std::vector<StepRecord> records;
  for (std::int64_t step = start_step; step < cfg.max_steps; ++step) {
    std::mt19937_64 rng(detail::split_seed(cfg.seed, static_cast<std::uint64_t>(step)));
    std::vector<TokenSeq> batch;
    batch.reserve(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) {
      batch.push_back(prompt_set[rng() % prompt_set.size()]);
    }
    StepRecord rec = online_step(theta, theta0, annotator, batch, cfg, step, max_len, rng);
    if (on_step) on_step(rec, theta);
    records.push_back(rec);
  }
  return records;
}

/// Offline DAP baseline: epochs over a fixed, shuffled dataset with the same
/// loss and update machinery as the online loop. The data is never
/// regenerated or relabeled.
inline std::vector<StepRecord> offline_train(PolicyParams& theta,
                                             const PolicySnapshot& theta0,
                                             std::span<const PreferenceTriplet> dataset,
                                             const TrainingConfig& cfg,
                                             const StepCallback& on_step = {},
                                             bool shuffle = true) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("offline_train: empty dataset");
  const Vocab vocab = theta.vocab();
  for (const auto& t : dataset) {
    t.validate(vocab);
    if (t.provenance.online) {
      throw std::invalid_argument("offline_train: dataset carries online provenance");
    }
  }

  std::mt19937_64 shuffle_rng(detail::split_seed(cfg.seed, 0xfeedULL));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<StepRecord> records;
  std::size_t cursor = order.size();  // forces a (re)shuffle before the first batch
  for (std::int64_t step = 0; step < cfg.max_steps; ++step) {
    StepRecord rec;
    rec.step = step;
    rec.learning_rate = lr_at(step, cfg);

    SparseGrad total;
    double loss_sum = 0.0, margin_sum = 0.0, length_sum = 0.0;
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (cursor >= order.size()) {
        if (shuffle) {
          // Fisher-Yates with our own draws, for cross-platform determinism.
          for (std::size_t j = order.size(); j > 1; --j) {
            std::swap(order[j - 1], order[shuffle_rng() % j]);
          }
        }
        cursor = 0;
      }
      const PreferenceTriplet& t = dataset[order[cursor++]];
      const PairMargin m = margin(theta, theta0, t.x, t.y_plus, t.y_minus);
      loss_sum += loss(cfg.loss, m.h);
      margin_sum += m.h;
      length_sum += static_cast<double>(t.y_plus.content_length(vocab)) +
                    static_cast<double>(t.y_minus.content_length(vocab));
      const double scale = dloss_dh(cfg.loss, m.h);
      total.axpy(scale, logprob_gradient(theta, t.x, t.y_plus));
      total.axpy(-scale, logprob_gradient(theta, t.x, t.y_minus));
      ++rec.pairs_used;
    }

    total.scale(1.0 / rec.pairs_used);
    detail::apply_gradient(theta, total, rec.learning_rate);
    rec.mean_loss = loss_sum / rec.pairs_used;
    rec.mean_margin = margin_sum / rec.pairs_used;
    rec.mean_response_length = length_sum / (2.0 * rec.pairs_used);
    if (on_step) on_step(rec, theta);
    records.push_back(rec);
  }
  return records;
}

struct DatasetYield {
  std::vector<PreferenceTriplet> triplets;
  int ties = 0;
  int failures = 0;  // emitted + ties + failures == requested n
};

/// Pre-collects a frozen preference dataset from a behavior policy rho:
/// sample a pair per draw, label once, drop ties, never relabel.
inline DatasetYield generate_offline_dataset(const PolicyParams& rho,
                                             const std::string& rho_id,
                                             Annotator& annotator,
                                             std::span<const TokenSeq> prompts, int n,
                                             const TrainingConfig& cfg, int max_len) {
  if (n < 1) throw std::invalid_argument("generate_offline_dataset: n must be >= 1");
  if (prompts.empty()) {
    throw std::invalid_argument("generate_offline_dataset: empty prompt set");
  }
  std::mt19937_64 rng(detail::split_seed(cfg.seed, 0xda7aULL));
  DatasetYield yield;
  for (int i = 0; i < n; ++i) {
    const TokenSeq& x = prompts[rng() % prompts.size()];
    TokenSeq a, b;
    bool distinct = false;
    for (int attempt = 0; attempt < cfg.resample_attempts; ++attempt) {
      a = sample_response(rho, x, cfg.temperature, max_len, rng);
      b = sample_response(rho, x, cfg.temperature, max_len, rng);
      if (a != b) {
        distinct = true;
        break;
      }
    }
    if (!distinct) {
      ++yield.failures;
      continue;
    }
    AnnotatorVerdict verdict;
    try {
      verdict = annotator.score_pair(x, a, b);
    } catch (const AnnotationError&) {
      ++yield.failures;
      continue;
    }
    const auto labeled = label(verdict, a, b, cfg.tie_epsilon);
    if (!labeled) {
      ++yield.ties;
      continue;
    }
    PreferenceTriplet t;
    t.x = x;
    t.y_plus = labeled->y_plus;
    t.y_minus = labeled->y_minus;
    t.score = labeled->score;
    t.provenance = {false, false, rho_id, verdict.annotator_id, 0};
    yield.triplets.push_back(std::move(t));
  }
  return yield;
}

// ---- line-oriented JSON formats (dataset and metrics files) ----

inline nlohmann::json to_json(const PreferenceTriplet& t) {
  return {
      {"x", t.x.ids},
      {"y_plus", t.y_plus.ids},
      {"y_minus", t.y_minus.ids},
      {"score", t.score},
      {"provenance",
       {{"online", t.provenance.online},
        {"on_policy", t.provenance.on_policy},
        {"generator_policy_id", t.provenance.generator_policy_id},
        {"annotator_id", t.provenance.annotator_id},
        {"step_created", t.provenance.step_created}}},
  };
}

inline PreferenceTriplet triplet_from_json(const nlohmann::json& j) {
  PreferenceTriplet t;
  t.x = make_prompt(j.at("x").get<std::vector<TokenId>>());
  t.y_plus = make_response(j.at("y_plus").get<std::vector<TokenId>>());
  t.y_minus = make_response(j.at("y_minus").get<std::vector<TokenId>>());
  t.score = j.at("score").get<double>();
  const auto& p = j.at("provenance");
  t.provenance.online = p.at("online").get<bool>();
  t.provenance.on_policy = p.at("on_policy").get<bool>();
  t.provenance.generator_policy_id = p.at("generator_policy_id").get<std::string>();
  t.provenance.annotator_id = p.at("annotator_id").get<std::string>();
  t.provenance.step_created = p.at("step_created").get<std::int64_t>();
  return t;
}

inline nlohmann::json to_json(const StepRecord& r) {
  return {
      {"step", r.step},
      {"mean_loss", r.mean_loss},
      {"mean_margin", r.mean_margin},
      {"pairs_used", r.pairs_used},
      {"ties_dropped", r.ties_dropped},
      {"failures", r.failures},
      {"annotation_failures", r.annotation_failures},
      {"mean_response_length", r.mean_response_length},
      {"learning_rate", r.learning_rate},
  };
}

inline void write_dataset(const std::string& path,
                          std::span<const PreferenceTriplet> triplets) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open dataset for write: " + path);
  for (const auto& t : triplets) out << to_json(t).dump() << '\n';
}

inline std::vector<PreferenceTriplet> read_dataset(const std::string& path,
                                                   const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<PreferenceTriplet> triplets;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    PreferenceTriplet t = triplet_from_json(nlohmann::json::parse(line));
    t.validate(vocab);
    triplets.push_back(std::move(t));
  }
  return triplets;
}

}  // namespace oaif

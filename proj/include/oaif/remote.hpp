#pragma once

#include <atomic>
#include <cstdint>
#include <fstream>
#include <future>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "oaif/annotate.hpp"
#include "oaif/prompt_template.hpp"
#include "oaif/vocab.hpp"

namespace oaif {

struct RemoteConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/score
  std::string auth_token;
  int parallelism = 4;
  int timeout_ms = 10000;
  int max_retries = 2;
};

namespace detail {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("remote endpoint must include a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

/// Content hash identifying one ordered annotation request.
inline std::uint64_t pair_key(const std::string& template_name, const TokenSeq& x,
                              const TokenSeq& first, const TokenSeq& second) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (char c : template_name) mix(static_cast<std::uint8_t>(c));
  mix(0xff);
  for (TokenId id : x.ids) mix(static_cast<std::uint64_t>(id) + 1);
  mix(0xfe);
  for (TokenId id : first.ids) mix(static_cast<std::uint64_t>(id) + 1);
  mix(0xfd);
  for (TokenId id : second.ids) mix(static_cast<std::uint64_t>(id) + 1);
  return h;
}

/// Append-only disk cache of debiased pair scores. Entries never expire;
/// annotation is treated as deterministic per (template, pair).
class AnnotationCache {
 public:
  explicit AnnotationCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::uint64_t key;
      double raw_ab, raw_ba;
      if (row >> key >> raw_ab >> raw_ba) entries_[key] = {raw_ab, raw_ba};
    }
  }

  std::optional<std::pair<double, double>> lookup(std::uint64_t key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void store(std::uint64_t key, double raw_ab, double raw_ba) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (entries_.count(key)) return;
    entries_[key] = {raw_ab, raw_ba};
    std::ofstream out(path_, std::ios::app);
    out.precision(17);
    out << key << ' ' << raw_ab << ' ' << raw_ba << '\n';
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.size();
  }

 private:
  std::string path_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::uint64_t, std::pair<double, double>> entries_;
};

/// LLM judge client. Fills the prompt template with both responses, asks the
/// endpoint for the log-probabilities of the tokens "1" and "2", and scores
/// the first response as sigmoid(lp1 - lp2). Where the endpoint only returns
/// a sampled token, the score degrades to a hard 1.0/0.0 label and the
/// verdict is flagged.
class RemoteAnnotator : public Annotator {
 public:
  RemoteAnnotator(RemoteConfig config, PromptTemplate tmpl, Vocab vocab)
      : config_(std::move(config)), template_(std::move(tmpl)), vocab_(vocab) {
    template_.validate();
    if (config_.endpoint.empty()) {
      throw std::invalid_argument("RemoteAnnotator: endpoint not configured");
    }
    url_ = detail::parse_url(config_.endpoint);
  }

  std::string id() const override { return "remote:" + template_.name; }

  double raw_score(const TokenSeq& x, const TokenSeq& first,
                   const TokenSeq& second) override {
    return score_order(x, first, second).first;
  }

  AnnotatorVerdict score_pair(const TokenSeq& x, const TokenSeq& a,
                              const TokenSeq& b) override {
    AnnotatorVerdict v;
    v.annotator_id = id();
    const auto [ab, ab_degraded] = score_order(x, a, b);
    const auto [ba, ba_degraded] = score_order(x, b, a);
    v.raw_ab = ab;
    v.raw_ba = ba;
    v.degraded = ab_degraded || ba_degraded;
    v.p_first = debiased_p_first(a, b, v.raw_ab, v.raw_ba);
    return v;
  }

  /// Total HTTP requests issued (for cache-contract tests).
  int transport_count() const { return transport_count_.load(); }

  const PromptTemplate& prompt_template() const { return template_; }

 private:
  // Returns (score, degraded).
  std::pair<double, bool> score_order(const TokenSeq& x, const TokenSeq& first,
                                      const TokenSeq& second) {
    nlohmann::json request = {
        {"template_name", template_.name},
        {"filled_prompt",
         template_.fill(x.render(vocab_), first.render(vocab_), second.render(vocab_))},
        {"candidate_tokens", {"1", "2"}},
    };
    const std::string body = request.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      httplib::Client client(url_.scheme_host_port);
      client.set_connection_timeout(0, config_.timeout_ms * 1000);
      client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
      httplib::Headers headers;
      if (!config_.auth_token.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.auth_token);
      }
      transport_count_.fetch_add(1);
      auto res = client.Post(url_.path, headers, body, "application/json");
      if (!res) {
        last_error = "transport failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "endpoint returned status " + std::to_string(res->status);
        continue;
      }
      try {
        const auto reply = nlohmann::json::parse(res->body);
        if (reply.contains("logprobs") && reply["logprobs"].contains("1") &&
            reply["logprobs"].contains("2")) {
          const double lp1 = reply["logprobs"]["1"].get<double>();
          const double lp2 = reply["logprobs"]["2"].get<double>();
          return {sigmoid(lp1 - lp2), false};
        }
        if (reply.contains("sample")) {
          const std::string sample = reply["sample"].get<std::string>();
          if (sample.find('1') != std::string::npos) return {1.0, true};
          if (sample.find('2') != std::string::npos) return {0.0, true};
          last_error = "unparseable sampled token: " + sample;
          continue;
        }
        last_error = "response missing logprobs";
      } catch (const nlohmann::json::exception& e) {
        last_error = std::string("bad JSON from endpoint: ") + e.what();
      }
    }
    throw AnnotationError("remote annotation failed: " + last_error,
                          config_.max_retries + 1);
  }

  RemoteConfig config_;
  PromptTemplate template_;
  Vocab vocab_;
  detail::ParsedUrl url_;
  std::atomic<int> transport_count_{0};
};

struct AnnotationRequest {
  TokenSeq x;
  TokenSeq first;
  TokenSeq second;
};

struct AnnotationResult {
  bool ok = false;
  AnnotatorVerdict verdict;
  std::string error;
  int retries = 0;
  bool from_cache = false;
};

/// Fan-out annotation over a batch, bounded by `parallelism` in-flight
/// requests. Results are order-aligned with the input; per-pair failures are
/// reported individually and never abort the batch.
inline std::vector<AnnotationResult> remote_annotate_batch(
    RemoteAnnotator& annotator, AnnotationCache* cache,
    std::span<const AnnotationRequest> pairs, int parallelism) {
  if (parallelism < 1) parallelism = 1;
  std::vector<AnnotationResult> results(pairs.size());

  auto run_one = [&](std::size_t i) {
    const auto& req = pairs[i];
    AnnotationResult& out = results[i];
    const std::uint64_t key =
        pair_key(annotator.prompt_template().name, req.x, req.first, req.second);
    if (cache) {
      if (auto hit = cache->lookup(key)) {
        out.ok = true;
        out.from_cache = true;
        out.verdict.annotator_id = annotator.id();
        out.verdict.raw_ab = hit->first;
        out.verdict.raw_ba = hit->second;
        out.verdict.p_first =
            debiased_p_first(req.first, req.second, hit->first, hit->second);
        return;
      }
    }
    try {
      out.verdict = annotator.score_pair(req.x, req.first, req.second);
      out.ok = true;
      if (cache) cache->store(key, out.verdict.raw_ab, out.verdict.raw_ba);
    } catch (const AnnotationError& e) {
      out.error = e.what();
      out.retries = e.retries();
    }
  };

  for (std::size_t start = 0; start < pairs.size();
       start += static_cast<std::size_t>(parallelism)) {
    const std::size_t end =
        std::min(pairs.size(), start + static_cast<std::size_t>(parallelism));
    std::vector<std::future<void>> inflight;
    for (std::size_t i = start; i < end; ++i) {
      inflight.push_back(std::async(std::launch::async, run_one, i));
    }
    for (auto& f : inflight) f.get();
  }
  return results;
}

}  // namespace oaif

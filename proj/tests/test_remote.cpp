#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "oaif/remote.hpp"

using namespace oaif;
using nlohmann::json;

namespace {

const Vocab kVocab(8);

/// In-process stub endpoint with configurable behavior.
class StubServer {
 public:
  enum class Mode { kFixedLogprobs, kSampleOnly, kAlwaysFail, kPerOrder };

  explicit StubServer(Mode mode, double lp1 = 0.0, double lp2 = 0.0)
      : mode_(mode), lp1_(lp1), lp2_(lp2) {
    server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      const auto body = json::parse(req.body);
      REQUIRE(body.at("candidate_tokens") == json({"1", "2"}));
      REQUIRE(body.contains("template_name"));
      const std::string prompt = body.at("filled_prompt").get<std::string>();
      switch (mode_) {
        case Mode::kFixedLogprobs:
          res.set_content(json{{"logprobs", {{"1", lp1_}, {"2", lp2_}}}}.dump(),
                          "application/json");
          break;
        case Mode::kSampleOnly:
          res.set_content(json{{"sample", "1"}}.dump(), "application/json");
          break;
        case Mode::kAlwaysFail:
          res.status = 500;
          break;
        case Mode::kPerOrder: {
          // Prefers whichever response renders as "ddd" wherever it appears.
          const bool first_is_target =
              prompt.find("Response 1 - ddd") != std::string::npos;
          const double lp1 = first_is_target ? 1.0 : -1.0;
          res.set_content(json{{"logprobs", {{"1", lp1}, {"2", -lp1}}}}.dump(),
                          "application/json");
          break;
        }
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/score";
  }
  int requests() const { return requests_.load(); }

 private:
  Mode mode_;
  double lp1_, lp2_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> requests_{0};
};

PromptTemplate test_template() {
  return load_builtin_template("helpfulness", OAIF_TEMPLATE_DIR);
}

RemoteAnnotator make_remote(const std::string& endpoint, int retries = 1) {
  RemoteConfig cfg;
  cfg.endpoint = endpoint;
  cfg.max_retries = retries;
  return RemoteAnnotator(cfg, test_template(), kVocab);
}

}  // namespace

TEST_CASE("remote score is sigmoid of the logprob gap") {
  StubServer server(StubServer::Mode::kFixedLogprobs, std::log(3.0), 0.0);
  auto annotator = make_remote(server.endpoint());
  const double s =
      annotator.raw_score(make_prompt({0}), make_response({1}), make_response({2}));
  CHECK(s == Catch::Approx(0.75).margin(1e-12));
}

TEST_CASE("fixed-logprob endpoint gives a degenerate debiased verdict") {
  // Same logprobs in both orders: raw_ab == raw_ba == sigmoid(gap), so the
  // order average collapses toward 0.5 by the debias identity.
  const double gap = std::log(3.0);
  StubServer server(StubServer::Mode::kFixedLogprobs, gap, 0.0);
  auto annotator = make_remote(server.endpoint());
  const auto v =
      annotator.score_pair(make_prompt({0}), make_response({1}), make_response({2}));
  CHECK(v.raw_ab == Catch::Approx(sigmoid(gap)).margin(1e-12));
  CHECK(v.raw_ba == Catch::Approx(sigmoid(gap)).margin(1e-12));
  CHECK(v.p_first == Catch::Approx(0.5).margin(1e-12));
  CHECK_FALSE(v.degraded);
}

TEST_CASE("order-aware endpoint yields an order-averaged preference") {
  StubServer server(StubServer::Mode::kPerOrder);
  auto annotator = make_remote(server.endpoint());
  const Vocab v(8);
  const TokenSeq target = make_response({3, 3, 3});  // renders as "ddd"
  const TokenSeq other = make_response({0, 1});
  REQUIRE(target.render(v) == "ddd");
  const auto verdict = annotator.score_pair(make_prompt({0}), target, other);
  // Both orders agree: raw_ab = sigmoid(2), raw_ba = sigmoid(-2).
  CHECK(verdict.p_first == Catch::Approx(sigmoid(2.0)).margin(1e-12));
  const auto swapped = annotator.score_pair(make_prompt({0}), other, target);
  CHECK(swapped.p_first == Catch::Approx(1.0 - sigmoid(2.0)).margin(1e-12));
}

TEST_CASE("sample-only endpoint degrades to hard labels") {
  StubServer server(StubServer::Mode::kSampleOnly);
  auto annotator = make_remote(server.endpoint());
  const auto v =
      annotator.score_pair(make_prompt({0}), make_response({1}), make_response({2}));
  CHECK(v.degraded);
  CHECK(v.raw_ab == 1.0);
  CHECK(v.raw_ba == 1.0);
  CHECK(v.p_first == 0.5);
}

TEST_CASE("transport failure raises an annotation error with retry count") {
  StubServer server(StubServer::Mode::kAlwaysFail);
  auto annotator = make_remote(server.endpoint(), 2);
  try {
    annotator.raw_score(make_prompt({0}), make_response({1}), make_response({2}));
    FAIL("expected AnnotationError");
  } catch (const AnnotationError& e) {
    CHECK(e.retries() == 3);  // max_retries 2 -> 3 attempts
  }
  CHECK(server.requests() == 3);
}

TEST_CASE("batch annotation caches repeated pairs") {
  StubServer server(StubServer::Mode::kFixedLogprobs, 1.0, 0.0);
  auto annotator = make_remote(server.endpoint());
  const std::string cache_path = "test_remote_cache.log";
  std::remove(cache_path.c_str());
  AnnotationCache cache(cache_path);

  const AnnotationRequest req{make_prompt({0}), make_response({1}), make_response({2})};
  std::vector<AnnotationRequest> pairs = {req, req, req};
  const auto results = remote_annotate_batch(annotator, &cache, pairs, 1);
  REQUIRE(results.size() == 3);
  for (const auto& r : results) {
    CHECK(r.ok);
    CHECK(r.verdict.raw_ab == Catch::Approx(sigmoid(1.0)).margin(1e-12));
  }
  CHECK(results[0].from_cache == false);
  CHECK(results[1].from_cache == true);
  CHECK(results[2].from_cache == true);
  CHECK(server.requests() == 2);  // one pair, two orders, rest cached

  // A fresh cache instance reloads from disk; no new transport needed.
  AnnotationCache reloaded(cache_path);
  auto annotator2 = make_remote(server.endpoint());
  const auto again = remote_annotate_batch(annotator2, &reloaded, pairs, 4);
  CHECK(again[0].from_cache);
  CHECK(annotator2.transport_count() == 0);
  std::remove(cache_path.c_str());
}

TEST_CASE("batch failures are reported per pair, never wholesale") {
  StubServer server(StubServer::Mode::kAlwaysFail);
  auto annotator = make_remote(server.endpoint(), 0);
  std::vector<AnnotationRequest> pairs = {
      {make_prompt({0}), make_response({1}), make_response({2})},
      {make_prompt({1}), make_response({3}), make_response({4})},
  };
  const auto results = remote_annotate_batch(annotator, nullptr, pairs, 2);
  REQUIRE(results.size() == 2);
  for (const auto& r : results) {
    CHECK_FALSE(r.ok);
    CHECK(r.retries == 1);
    CHECK_FALSE(r.error.empty());
  }
}

TEST_CASE("empty batch yields empty results") {
  StubServer server(StubServer::Mode::kFixedLogprobs, 0.0, 0.0);
  auto annotator = make_remote(server.endpoint());
  const auto results =
      remote_annotate_batch(annotator, nullptr, std::vector<AnnotationRequest>{}, 4);
  CHECK(results.empty());
  CHECK(server.requests() == 0);
}

TEST_CASE("template placeholders are validated and filled") {
  PromptTemplate bad{"bad", "no placeholders here"};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  PromptTemplate tmpl{"ok", "C={context} R1={response1} R2={response2}"};
  tmpl.validate();
  CHECK(tmpl.fill("ab", "x", "y") == "C=ab R1=x R2=y");

  for (const char* name : {"tldr", "helpfulness", "helpfulness_short",
                           "helpfulness_very_short", "harmlessness"}) {
    CHECK_NOTHROW(load_builtin_template(name, OAIF_TEMPLATE_DIR));
  }
}

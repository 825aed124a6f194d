#include <doctest.h>

#include <cmath>
#include <thread>

#include "fixtures.hpp"
#include "harmaug/backends.hpp"
#include "harmaug/http_backend.hpp"
#include "http_doubles.hpp"

using namespace harmaug;
using namespace harmaug::backends;
using harmaug::testing::chat_response;
using harmaug::testing::ScriptedTransport;

namespace {

std::vector<ChatMessage> user(const std::string& s) { return {{Role::user, s}}; }

EndpointConfig endpoint() {
  EndpointConfig c;
  c.base_url = "http://test.invalid/v1";
  c.model = "m";
  c.api_key = "k";
  return c;
}

struct Recorder {
  std::vector<long long> sleeps;
  Sleeper fn() {
    return [this](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
  }
};

}  // namespace

TEST_CASE("mock generator with refusal_p 1 always refuses") {
  const MockGenerationBackend g(testing::vocab({"alpha", "beta"}, 1.0, 1));
  const promptcraft::RefusalDetector d;
  for (int i = 0; i < 50; ++i) {
    CHECK(d.is_refusal(g.generate(user("q" + std::to_string(i)), {})));
  }
}

TEST_CASE("mock generator is deterministic") {
  const MockGenerationBackend g(testing::vocab({"alpha", "beta", "gamma"}, 0.0, 7));
  const auto a = g.generate(user("same"), {});
  CHECK(a == g.generate(user("same"), {}));
  CHECK_FALSE(promptcraft::RefusalDetector().is_refusal(a));
  GenerationParams seeded;
  seeded.seed = 3;
  CHECK(g.generate(user("same"), seeded) == g.generate(user("same"), seeded));
}

TEST_CASE("mock refusal fraction tracks refusal_p") {
  const MockGenerationBackend g(testing::vocab({"alpha", "beta", "gamma"}, 0.5, 9));
  const promptcraft::RefusalDetector d;
  int refused = 0;
  for (int i = 0; i < 1000; ++i) refused += d.is_refusal(g.generate(user(std::to_string(i)), {}));
  CHECK(refused >= 450);
  CHECK(refused <= 550);
}

TEST_CASE("mock generator uses the prefix refusal rate after an assistant prefix") {
  auto cfg = testing::vocab({"alpha", "beta"}, 1.0, 2);
  cfg.prefix_refusal_p = 0.0;
  const MockGenerationBackend g(cfg);
  const promptcraft::RefusalDetector d;
  const std::vector<ChatMessage> with_prefix = {{Role::user, "x"}, {Role::assistant, "Sure:"}};
  const std::vector<ChatMessage> empty_prefix = {{Role::user, "x"}, {Role::assistant, ""}};
  CHECK_FALSE(d.is_refusal(g.generate(with_prefix, {})));
  CHECK(d.is_refusal(g.generate(empty_prefix, {})));
}

TEST_CASE("mock teacher by construction") {
  const MockTeacher t(MockLexiconConfig{{"bomb", "poison"}, 0.0, 0});
  CHECK(t.score("how to build a bomb", "Step one.") == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(t.score("bake bread", "Use flour.") == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(t.score("how to build a bomb", "I cannot help with that.") ==
        doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("invariant: teacher logits agree with the score") {
  const MockTeacher t(MockLexiconConfig{{"bomb"}, 0.3, 5});
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const std::string instr = rng.bernoulli(0.5) ? "bomb " + std::to_string(i) : std::to_string(i);
    const double s = t.score(instr, "ok");
    REQUIRE(s >= 0.0);
    REQUIRE(s <= 1.0);
    const auto l = t.logits(instr, "ok");
    REQUIRE(l);
    const double soft = std::exp(l->harmful) / (std::exp(l->harmful) + std::exp(l->safe));
    REQUIRE(std::abs(soft - s) <= 1e-9);
  }
}

TEST_CASE("harmful_probability is a stable two-way softmax") {
  CHECK(harmful_probability({0.0, 0.0}) == doctest::Approx(0.5));
  CHECK(harmful_probability({800.0, 0.0}) == 1.0);
  CHECK(harmful_probability({0.0, 800.0}) == doctest::Approx(0.0));
  CHECK(harmful_probability({std::log(0.3), std::log(0.7)}) == doctest::Approx(0.3));
}

TEST_CASE("hashed n-gram embeddings are unit length and deterministic") {
  const HashedNgramEmbedder e(64);
  const auto a = e.embed("How do I pick a lock?");
  CHECK(a.size() == 64);
  double norm = 0.0;
  for (double x : a) norm += x * x;
  CHECK(norm == doctest::Approx(1.0));
  CHECK(a == e.embed("how do i pick a lock?"));
}

TEST_CASE("http client returns content") {
  auto t = std::make_shared<ScriptedTransport>(
      std::vector<HttpResponse>{{200, chat_response("hello")}});
  Recorder rec;
  const auto client = std::make_shared<ChatCompletionsClient>(endpoint(), t, nullptr, rec.fn());
  const HttpGenerationBackend g(client);
  CHECK(g.generate(user("hi"), {}) == "hello");
  CHECK(t->calls() == 1);
  bool auth = false;
  for (const auto& [k, v] : t->last_headers()) auth = auth || (k == "Authorization" && v == "Bearer k");
  CHECK(auth);
}

TEST_CASE("http client retries 429 with doubling backoff") {
  auto t = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{
      {429, "slow down"}, {429, "slow down"}, {200, chat_response("done")}});
  Recorder rec;
  const auto client = std::make_shared<ChatCompletionsClient>(endpoint(), t, nullptr, rec.fn());
  CHECK(first_completion_text(client->complete(user("x"), {})) == "done");
  CHECK(t->calls() == 3);
  CHECK(rec.sleeps == std::vector<long long>{1000, 2000});
}

TEST_CASE("http client fails fast on 401") {
  auto t = std::make_shared<ScriptedTransport>(
      std::vector<HttpResponse>{{401, "bad key"}, {200, chat_response("never")}});
  Recorder rec;
  const ChatCompletionsClient client(endpoint(), t, nullptr, rec.fn());
  try {
    client.complete(user("x"), {});
    FAIL("expected an error");
  } catch (const BackendError& e) {
    CHECK(e.status() == 401);
    CHECK_FALSE(e.retryable());
  }
  CHECK(t->calls() == 1);
  CHECK(rec.sleeps.empty());
}

TEST_CASE("http client gives up after max_retries") {
  auto t = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{503, ""}});
  Recorder rec;
  const ChatCompletionsClient client(endpoint(), t, nullptr, rec.fn());
  CHECK_THROWS_AS(client.complete(user("x"), {}), BackendError);
  CHECK(t->calls() == 4);
  CHECK(rec.sleeps == std::vector<long long>{1000, 2000, 4000});
}

TEST_CASE("transport failures are retried") {
  auto t = std::make_shared<ScriptedTransport>(
      std::vector<HttpResponse>{{-1, ""}, {200, chat_response("up")}});
  Recorder rec;
  const ChatCompletionsClient client(endpoint(), t, nullptr, rec.fn());
  CHECK(first_completion_text(client.complete(user("x"), {})) == "up");
  CHECK(t->calls() == 2);
}

TEST_CASE("responses without content are errors") {
  CHECK_THROWS_AS(first_completion_text(nlohmann::json::parse(R"({"choices":[]})")), BackendError);
  CHECK_THROWS_AS(first_completion_text(nlohmann::json::parse(R"({"id":"x"})")), BackendError);
}

TEST_CASE("request body carries the generation parameters") {
  ChatCompletionsClient client(endpoint(), std::make_shared<ScriptedTransport>(
                                               std::vector<HttpResponse>{{200, "{}"}}));
  GenerationParams p;
  p.temperature = 0.7;
  p.max_tokens = 32;
  p.stop_sequences = {"\n"};
  p.seed = 5;
  const std::vector<ChatMessage> msgs = {{Role::user, "u"}, {Role::assistant, ""}};
  const auto body = client.request_body(msgs, p, false);
  CHECK(body["model"] == "m");
  CHECK(body["temperature"] == 0.7);
  CHECK(body["max_tokens"] == 32);
  CHECK(body["seed"] == 5);
  CHECK(body["stop"] == nlohmann::json::array({"\n"}));
  CHECK(body["messages"].size() == 1);
}

TEST_CASE("concurrency limiter bounds in-flight requests") {
  auto t = std::make_shared<testing::InstrumentedTransport>();
  auto limiter = std::make_shared<ConcurrencyLimiter>(3);
  const ChatCompletionsClient client(endpoint(), t, limiter);
  std::vector<std::thread> threads;
  for (int i = 0; i < 12; ++i) {
    threads.emplace_back([&] {
      for (int k = 0; k < 4; ++k) client.complete(user("x"), {});
    });
  }
  for (auto& th : threads) th.join();
  CHECK(t->peak() >= 1);
  CHECK(t->peak() <= 3);
}

TEST_CASE("teacher verdicts from log-probs") {
  const auto r = nlohmann::json::parse(R"({"choices":[{"message":{"content":"unsafe\nS1"},
    "logprobs":{"content":[{"token":"unsafe","logprob":-0.2231435513,
      "top_logprobs":[{"token":"unsafe","logprob":-0.2231435513},
                      {"token":"safe","logprob":-1.6094379124}]}]}}]})");
  const auto v = HttpTeacherScorer::parse_verdict(r);
  CHECK(v.score == doctest::Approx(0.8).epsilon(1e-9));
  REQUIRE(v.logits);
  CHECK(harmful_probability(*v.logits) == doctest::Approx(v.score).epsilon(1e-12));

  const auto hard = HttpTeacherScorer::parse_verdict(nlohmann::json::parse(
      R"({"choices":[{"message":{"content":"safe"}}]})"));
  CHECK(hard.score == 0.0);
  CHECK_THROWS(HttpTeacherScorer::parse_verdict(
      nlohmann::json::parse(R"({"choices":[{"message":{"content":"maybe"}}]})")));
}

#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "harmaug/backends.hpp"

namespace harmaug::backends {

/// One OpenAI-compatible endpoint. Empty base_url / api_key are filled from
/// HARMAUG_API_BASE / HARMAUG_API_KEY by `resolve_from_env`.
struct EndpointConfig {
  std::string base_url;
  std::string model;
  std::string api_key;
  int timeout_ms = 60000;
  int max_retries = 3;
  int backoff_initial_ms = 1000;  ///< doubled after every retry: 1s, 2s, 4s
  std::size_t max_concurrency = 4;
  /// Ask the server to continue a trailing assistant turn instead of opening
  /// a new one (vLLM `continue_final_message`).
  bool continue_final_message = false;
  int top_logprobs = 5;  ///< used by the teacher only
};

EndpointConfig resolve_from_env(EndpointConfig cfg);

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

/// POST transport. Implementations throw a retryable BackendError for
/// connection failures and timeouts and return every HTTP status as-is.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& url, const HttpHeaders& headers,
                            const std::string& body, int timeout_ms) const = 0;
};

/// cpp-httplib transport (http and https).
class HttplibTransport : public HttpTransport {
 public:
  HttpResponse post(const std::string& url, const HttpHeaders& headers, const std::string& body,
                    int timeout_ms) const override;
};

/// Counting limiter for in-flight requests.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(std::size_t max_in_flight);

  void acquire();
  void release();
  std::size_t max_in_flight() const noexcept { return max_; }

  class Slot {
   public:
    explicit Slot(ConcurrencyLimiter& l) : l_(l) { l_.acquire(); }
    ~Slot() { l_.release(); }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    ConcurrencyLimiter& l_;
  };

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t max_;
  std::size_t in_flight_ = 0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Chat-completions client with retry/backoff and a concurrency bound.
/// Thread-safe.
class ChatCompletionsClient {
 public:
  explicit ChatCompletionsClient(EndpointConfig cfg,
                                 std::shared_ptr<const HttpTransport> transport = nullptr,
                                 std::shared_ptr<ConcurrencyLimiter> limiter = nullptr,
                                 Sleeper sleeper = nullptr);

  nlohmann::json request_body(std::span<const ChatMessage> messages,
                              const GenerationParams& params, bool logprobs) const;

  /// Sends the request and returns the decoded response object.
  nlohmann::json complete(std::span<const ChatMessage> messages, const GenerationParams& params,
                          bool logprobs = false) const;

  const EndpointConfig& config() const noexcept { return cfg_; }

 private:
  EndpointConfig cfg_;
  std::shared_ptr<const HttpTransport> transport_;
  std::shared_ptr<ConcurrencyLimiter> limiter_;
  Sleeper sleeper_;
};

/// choices[0].message.content, or BackendError if absent.
std::string first_completion_text(const nlohmann::json& response);

/// Generates one completion through a live endpoint.
std::string http_generate(const EndpointConfig& endpoint, std::span<const ChatMessage> messages,
                          const GenerationParams& params);

class HttpGenerationBackend : public GenerationBackend {
 public:
  explicit HttpGenerationBackend(std::shared_ptr<const ChatCompletionsClient> client);

  std::string generate(std::span<const ChatMessage> messages,
                       const GenerationParams& params) const override;
  std::string identity() const override;

 private:
  std::shared_ptr<const ChatCompletionsClient> client_;
};

/// Guard-model teacher behind a chat endpoint. The harm probability is the
/// normalised pair of next-token probabilities of the "unsafe" and "safe"
/// verdict tokens; without log-probs it falls back to 1/0 from the verdict.
class HttpTeacherScorer : public TeacherScorer {
 public:
  explicit HttpTeacherScorer(std::shared_ptr<const ChatCompletionsClient> client);

  double score(std::string_view instruction, std::string_view response) const override;
  std::optional<TeacherLogits> logits(std::string_view instruction,
                                      std::string_view response) const override;

  struct Verdict {
    double score = 0.0;
    std::optional<TeacherLogits> logits;
  };
  /// Interprets a chat-completions response from a guard model.
  static Verdict parse_verdict(const nlohmann::json& response);

 private:
  Verdict evaluate(std::string_view instruction, std::string_view response) const;

  std::shared_ptr<const ChatCompletionsClient> client_;
};

}  // namespace harmaug::backends

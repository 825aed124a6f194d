#include "harmaug/http_backend.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include "httplib.h"
#include "harmaug/text.hpp"

namespace harmaug::backends {

using json = nlohmann::json;

EndpointConfig resolve_from_env(EndpointConfig cfg) {
  if (cfg.base_url.empty()) {
    if (const char* v = std::getenv("HARMAUG_API_BASE")) cfg.base_url = v;
  }
  if (cfg.api_key.empty()) {
    if (const char* v = std::getenv("HARMAUG_API_KEY")) cfg.api_key = v;
  }
  return cfg;
}

HttpResponse HttplibTransport::post(const std::string& url, const HttpHeaders& headers,
                                    const std::string& body, int timeout_ms) const {
  // Split "scheme://host[:port]/path".
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw BackendError("malformed URL " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client cli(origin);
  const auto secs = std::chrono::milliseconds(timeout_ms);
  cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(secs).count(),
                             static_cast<long>((timeout_ms % 1000) * 1000));
  cli.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(secs).count(),
                       static_cast<long>((timeout_ms % 1000) * 1000));
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = cli.Post(path, h, body, "application/json");
  if (!res) {
    throw BackendError("transport error: " + httplib::to_string(res.error()), 0, true);
  }
  return HttpResponse{res->status, res->body};
}

ConcurrencyLimiter::ConcurrencyLimiter(std::size_t max_in_flight) : max_(max_in_flight) {
  if (max_ == 0) throw ConfigError("max_concurrency must be >= 1");
}

void ConcurrencyLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < max_; });
  ++in_flight_;
}

void ConcurrencyLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

ChatCompletionsClient::ChatCompletionsClient(EndpointConfig cfg,
                                             std::shared_ptr<const HttpTransport> transport,
                                             std::shared_ptr<ConcurrencyLimiter> limiter,
                                             Sleeper sleeper)
    : cfg_(std::move(cfg)),
      transport_(transport ? std::move(transport) : std::make_shared<HttplibTransport>()),
      limiter_(limiter ? std::move(limiter)
                       : std::make_shared<ConcurrencyLimiter>(cfg_.max_concurrency)),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })) {
  if (cfg_.base_url.empty()) throw ConfigError("endpoint base_url is not configured");
  if (cfg_.model.empty()) throw ConfigError("endpoint model is not configured");
  if (cfg_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
  while (!cfg_.base_url.empty() && cfg_.base_url.back() == '/') cfg_.base_url.pop_back();
}

json ChatCompletionsClient::request_body(std::span<const ChatMessage> messages,
                                         const GenerationParams& params, bool logprobs) const {
  params.validate();
  // A trailing empty assistant turn carries nothing on the wire.
  if (!messages.empty() && messages.back().role == Role::assistant &&
      messages.back().content.empty()) {
    messages = messages.first(messages.size() - 1);
  }
  if (messages.empty()) throw ConfigError("chat request needs at least one message");

  json msgs = json::array();
  for (const auto& m : messages) {
    msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  }
  json body = {
      {"model", cfg_.model},
      {"messages", std::move(msgs)},
      {"temperature", params.temperature},
      {"max_tokens", params.max_tokens},
      {"logprobs", logprobs},
  };
  if (logprobs) body["top_logprobs"] = cfg_.top_logprobs;
  if (!params.stop_sequences.empty()) body["stop"] = params.stop_sequences;
  if (params.seed) body["seed"] = *params.seed;
  if (cfg_.continue_final_message && messages.back().role == Role::assistant) {
    body["continue_final_message"] = true;
    body["add_generation_prompt"] = false;
  }
  return body;
}

json ChatCompletionsClient::complete(std::span<const ChatMessage> messages,
                                     const GenerationParams& params, bool logprobs) const {
  const std::string body = request_body(messages, params, logprobs).dump();
  const std::string url = cfg_.base_url + "/chat/completions";
  HttpHeaders headers = {{"Content-Type", "application/json"}};
  if (!cfg_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);

  for (int attempt = 0;; ++attempt) {
    try {
      HttpResponse res;
      {
        ConcurrencyLimiter::Slot slot(*limiter_);
        res = transport_->post(url, headers, body, cfg_.timeout_ms);
      }
      if (res.status == 429 || res.status >= 500) {
        throw BackendError("HTTP " + std::to_string(res.status) + " from " + url, res.status,
                           true);
      }
      if (res.status < 200 || res.status >= 300) {
        throw BackendError("HTTP " + std::to_string(res.status) + " from " + url + ": " +
                               res.body.substr(0, 200),
                           res.status, false);
      }
      try {
        return json::parse(res.body);
      } catch (const json::parse_error&) {
        throw BackendError("response body is not JSON", res.status, false);
      }
    } catch (const BackendError& err) {
      if (!err.retryable()) throw;
      if (attempt >= cfg_.max_retries) {
        throw BackendError("retries exhausted after " + std::to_string(attempt + 1) +
                               " attempts: " + err.what(),
                           err.status(), false);
      }
      sleeper_(std::chrono::milliseconds(static_cast<long long>(cfg_.backoff_initial_ms)
                                         << attempt));
    }
  }
}

std::string first_completion_text(const json& response) {
  const auto choices = response.find("choices");
  if (choices == response.end() || !choices->is_array() || choices->empty()) {
    throw BackendError("response missing content");
  }
  const auto& first = (*choices)[0];
  if (first.contains("message") && first["message"].contains("content") &&
      first["message"]["content"].is_string()) {
    return first["message"]["content"].get<std::string>();
  }
  throw BackendError("response missing content");
}

std::string http_generate(const EndpointConfig& endpoint, std::span<const ChatMessage> messages,
                          const GenerationParams& params) {
  ChatCompletionsClient client(resolve_from_env(endpoint));
  return first_completion_text(client.complete(messages, params));
}

HttpGenerationBackend::HttpGenerationBackend(std::shared_ptr<const ChatCompletionsClient> client)
    : client_(std::move(client)) {}

std::string HttpGenerationBackend::generate(std::span<const ChatMessage> messages,
                                            const GenerationParams& params) const {
  return first_completion_text(client_->complete(messages, params));
}

std::string HttpGenerationBackend::identity() const {
  return "http:" + client_->config().model;
}

HttpTeacherScorer::HttpTeacherScorer(std::shared_ptr<const ChatCompletionsClient> client)
    : client_(std::move(client)) {}

namespace {

std::string verdict_token(std::string_view token) {
  return text::to_lower(text::trim(token));
}

}  // namespace

HttpTeacherScorer::Verdict HttpTeacherScorer::parse_verdict(const json& response) {
  const std::string content = first_completion_text(response);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  const auto& choice = response["choices"][0];
  if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
      choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
    for (const auto& tok : choice["logprobs"]["content"]) {
      const std::string t = verdict_token(tok.value("token", ""));
      if (t != "safe" && t != "unsafe") continue;
      double lp_unsafe = kNegInf;
      double lp_safe = kNegInf;
      auto take = [&](const std::string& token, double lp) {
        const std::string v = verdict_token(token);
        if (v == "unsafe") lp_unsafe = std::max(lp_unsafe, lp);
        if (v == "safe") lp_safe = std::max(lp_safe, lp);
      };
      take(tok.value("token", ""), tok.value("logprob", kNegInf));
      if (tok.contains("top_logprobs") && tok["top_logprobs"].is_array()) {
        for (const auto& alt : tok["top_logprobs"]) {
          take(alt.value("token", ""), alt.value("logprob", kNegInf));
        }
      }
      TeacherLogits l{lp_unsafe, lp_safe};
      return Verdict{harmful_probability(l), l};
    }
  }

  const std::string v = text::to_lower(text::trim(content));
  if (v.starts_with("unsafe")) return Verdict{1.0, std::nullopt};
  if (v.starts_with("safe")) return Verdict{0.0, std::nullopt};
  throw BackendError("guard verdict not recognised: " + content.substr(0, 80));
}

HttpTeacherScorer::Verdict HttpTeacherScorer::evaluate(std::string_view instruction,
                                                       std::string_view response) const {
  std::vector<ChatMessage> msgs = {{Role::user, std::string(instruction)}};
  if (!response.empty()) msgs.push_back({Role::assistant, std::string(response)});
  GenerationParams params;
  params.temperature = 0.0;
  params.max_tokens = 10;
  return parse_verdict(client_->complete(msgs, params, /*logprobs=*/true));
}

double HttpTeacherScorer::score(std::string_view instruction, std::string_view response) const {
  return evaluate(instruction, response).score;
}

std::optional<TeacherLogits> HttpTeacherScorer::logits(std::string_view instruction,
                                                       std::string_view response) const {
  return evaluate(instruction, response).logits;
}

}  // namespace harmaug::backends

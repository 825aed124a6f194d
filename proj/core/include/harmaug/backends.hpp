#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "harmaug/chat.hpp"
#include "harmaug/error.hpp"
#include "harmaug/promptcraft.hpp"

namespace harmaug::backends {

/// Error raised by a generation or scoring backend. `retryable` marks
/// timeouts, 429 and 5xx; `status` is the HTTP status when there was one.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, int status = 0, bool retryable = false)
      : Error(what), status_(status), retryable_(retryable) {}

  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int status_;
  bool retryable_;
};

struct GenerationParams {
  double temperature = 1.0;
  int max_tokens = 256;
  std::vector<std::string> stop_sequences;
  std::optional<std::uint64_t> seed;

  /// Throws ConfigError when temperature < 0 or max_tokens < 1.
  void validate() const;
};

/// Chat-completion text generator (instruction LLM, response LLMs, red-team target).
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string generate(std::span<const ChatMessage> messages,
                               const GenerationParams& params) const = 0;
  virtual std::string identity() const = 0;
};

/// Harmfulness probability model q(c=1 | instruction, response).
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double predict(std::string_view instruction, std::string_view response) const = 0;
};

/// Pre-softmax (harmful, safe) logits of a two-way guard verdict.
struct TeacherLogits {
  double harmful = 0.0;
  double safe = 0.0;
};

/// softmax((harmful, safe))[harmful].
double harmful_probability(const TeacherLogits& l) noexcept;

/// Large teacher guard used for labeling. `predict` forwards to `score`.
class TeacherScorer : public Scorer {
 public:
  virtual double score(std::string_view instruction, std::string_view response) const = 0;

  /// Verdict logits, when the backend exposes them. When present,
  /// harmful_probability(*logits(i, r)) == score(i, r).
  virtual std::optional<TeacherLogits> logits(std::string_view, std::string_view) const {
    return std::nullopt;
  }

  double predict(std::string_view instruction, std::string_view response) const override {
    return score(instruction, response);
  }
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const noexcept = 0;
};

/// Hash of a message list, stable across runs and platforms.
std::uint64_t hash_messages(std::span<const ChatMessage> messages) noexcept;

// ---------------------------------------------------------------------------
// Mocks

struct MockVocabConfig {
  std::vector<std::string> words;
  double refusal_p = 0.0;
  /// Refusal probability when the conversation ends in a non-empty assistant
  /// turn (an affirmative prefix). Defaults to refusal_p.
  std::optional<double> prefix_refusal_p;
  std::size_t min_words = 5;
  std::size_t max_words = 15;
  std::uint64_t seed = 0;
};

/// Canned refusal sentences; every one matches a default refusal pattern.
const std::vector<std::string>& mock_refusal_sentences();

/// Deterministic function of (messages, params.seed, cfg.seed).
std::string mock_generate(std::span<const ChatMessage> messages, const GenerationParams& params,
                          const MockVocabConfig& cfg);

class MockGenerationBackend : public GenerationBackend {
 public:
  explicit MockGenerationBackend(MockVocabConfig cfg, std::string name = "mock");

  std::string generate(std::span<const ChatMessage> messages,
                       const GenerationParams& params) const override;
  std::string identity() const override { return "mock:" + name_; }
  const MockVocabConfig& config() const noexcept { return cfg_; }

 private:
  MockVocabConfig cfg_;
  std::string name_;
};

struct MockLexiconConfig {
  std::vector<std::string> harmful_words;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

/// Lexicon teacher: 0.9 when the pair mentions a harmful word and the
/// response is not a refusal, 0.1 otherwise, plus bounded deterministic
/// noise, clamped to [0,1].
class MockTeacher : public TeacherScorer {
 public:
  explicit MockTeacher(MockLexiconConfig cfg,
                       promptcraft::RefusalDetector detector = promptcraft::RefusalDetector());

  double score(std::string_view instruction, std::string_view response) const override;
  std::optional<TeacherLogits> logits(std::string_view instruction,
                                      std::string_view response) const override;

  bool mentions_harmful(std::string_view text) const;

 private:
  MockLexiconConfig cfg_;
  std::unordered_set<std::string> lexicon_;
  promptcraft::RefusalDetector detector_;
};

/// L2-normalised hashed character 3-gram frequencies. Text is lower-cased
/// and padded with one space on each side; inputs with no 3-gram map to
/// the zero vector.
class HashedNgramEmbedder : public Embedder {
 public:
  explicit HashedNgramEmbedder(std::size_t dimension = 256, std::uint64_t seed = 0);

  std::vector<double> embed(std::string_view text) const override;
  std::size_t dimension() const noexcept override { return dim_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

}  // namespace harmaug::backends

#include "harmaug/backends.hpp"

#include <algorithm>
#include <cmath>

#include "harmaug/text.hpp"

namespace harmaug::backends {

void GenerationParams::validate() const {
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

double harmful_probability(const TeacherLogits& l) noexcept {
  // sigmoid(harmful - safe), written to stay finite for large gaps.
  const double d = l.harmful - l.safe;
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

std::uint64_t hash_messages(std::span<const ChatMessage> messages) noexcept {
  std::uint64_t h = fnv1a("harmaug.messages");
  for (const auto& m : messages) {
    h = fnv1a(to_string(m.role), h);
    h = fnv1a(std::string_view("\x1f", 1), h);
    h = fnv1a(m.content, h);
    h = fnv1a(std::string_view("\x1e", 1), h);
  }
  return h;
}

const std::vector<std::string>& mock_refusal_sentences() {
  static const std::vector<std::string> kSentences = {
      "I'm sorry, but I can't help with that request.",
      "I cannot provide that kind of content.",
      "I apologize, but I must decline.",
      "As an AI, I am not able to assist with this.",
      "It is not appropriate for me to write that.",
  };
  return kSentences;
}

std::string mock_generate(std::span<const ChatMessage> messages, const GenerationParams& params,
                          const MockVocabConfig& cfg) {
  std::uint64_t h = hash_combine(hash_messages(messages), cfg.seed);
  h = hash_combine(h, params.seed.value_or(0));
  Rng rng(h);

  double refusal_p = cfg.refusal_p;
  if (cfg.prefix_refusal_p && !messages.empty() && messages.back().role == Role::assistant &&
      !text::trim(messages.back().content).empty()) {
    refusal_p = *cfg.prefix_refusal_p;
  }
  if (rng.uniform() < refusal_p || cfg.words.empty()) {
    const auto& refusals = mock_refusal_sentences();
    return refusals[static_cast<std::size_t>(rng.below(refusals.size()))];
  }

  const std::size_t lo = std::min(cfg.min_words, cfg.max_words);
  const std::size_t hi = std::max(cfg.min_words, cfg.max_words);
  const std::size_t n = lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) out.push_back(' ');
    std::string w = cfg.words[static_cast<std::size_t>(rng.below(cfg.words.size()))];
    if (i == 0 && !w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    out += w;
  }
  out.push_back('.');
  return out;
}

MockGenerationBackend::MockGenerationBackend(MockVocabConfig cfg, std::string name)
    : cfg_(std::move(cfg)), name_(std::move(name)) {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(cfg_.refusal_p) || (cfg_.prefix_refusal_p && !in_unit(*cfg_.prefix_refusal_p))) {
    throw ConfigError("mock refusal probability must lie in [0,1]");
  }
}

std::string MockGenerationBackend::generate(std::span<const ChatMessage> messages,
                                            const GenerationParams& params) const {
  params.validate();
  return mock_generate(messages, params, cfg_);
}

MockTeacher::MockTeacher(MockLexiconConfig cfg, promptcraft::RefusalDetector detector)
    : cfg_(std::move(cfg)), detector_(std::move(detector)) {
  if (!(cfg_.noise >= 0.0)) throw ConfigError("mock teacher noise must be >= 0");
  for (const auto& w : cfg_.harmful_words) lexicon_.insert(text::to_lower(w));
}

bool MockTeacher::mentions_harmful(std::string_view s) const {
  for (const auto& w : text::words(s)) {
    if (lexicon_.contains(w)) return true;
  }
  return false;
}

double MockTeacher::score(std::string_view instruction, std::string_view response) const {
  const bool harmful = (mentions_harmful(instruction) || mentions_harmful(response)) &&
                       !detector_.is_refusal(response);
  double s = harmful ? 0.9 : 0.1;
  if (cfg_.noise > 0.0) {
    std::uint64_t h = hash_combine(fnv1a(instruction), fnv1a(response));
    h = hash_combine(h, cfg_.seed);
    s += cfg_.noise * (2.0 * unit_interval(splitmix64(h)) - 1.0);
  }
  return std::clamp(s, 0.0, 1.0);
}

std::optional<TeacherLogits> MockTeacher::logits(std::string_view instruction,
                                                 std::string_view response) const {
  const double s = std::clamp(score(instruction, response), 1e-12, 1.0 - 1e-12);
  return TeacherLogits{std::log(s) - std::log1p(-s), 0.0};
}

HashedNgramEmbedder::HashedNgramEmbedder(std::size_t dimension, std::uint64_t seed)
    : dim_(dimension), seed_(seed) {
  if (dim_ == 0) throw ConfigError("embedding dimension must be >= 1");
}

std::vector<double> HashedNgramEmbedder::embed(std::string_view input) const {
  std::vector<double> v(dim_, 0.0);
  const std::string s = " " + text::to_lower(input) + " ";
  const std::uint64_t basis = hash_combine(0xcbf29ce484222325ULL, seed_);
  for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
    v[fnv1a(std::string_view(s).substr(i, 3), basis) % dim_] += 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

}  // namespace harmaug::backends

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "harmaug/backends.hpp"
#include "harmaug/dataset.hpp"
#include "harmaug/promptcraft.hpp"

namespace harmaug::augment {

struct AugmentConfig {
  std::size_t n_instructions = 1000;
  double tau = 0.5;
  std::size_t exemplar_k = promptcraft::kDefaultExemplarCount;
  std::size_t max_attempts_per_instruction = 10;
  bool dedup = true;
  std::uint64_t seed = 0;
  std::string directive = std::string(promptcraft::kDefaultDirective);
  std::string prefix = std::string(promptcraft::kDefaultPrefix);
  backends::GenerationParams instruction_params;
  backends::GenerationParams response_params;

  void validate() const;
  /// Every field that influences the generated data.
  nlohmann::json to_json() const;
};

/// The four model roles of the pipeline. Non-owning.
struct Roles {
  const backends::GenerationBackend* instruction_llm = nullptr;
  const backends::GenerationBackend* refusal_llm = nullptr;
  const backends::GenerationBackend* harmful_llm = nullptr;
  const backends::TeacherScorer* teacher = nullptr;
  promptcraft::RefusalDetector detector;
};

struct AugmentReport {
  std::size_t requested = 0;
  std::size_t generated = 0;  ///< completions drawn from the instruction LLM
  std::size_t refusals_filtered = 0;
  std::size_t duplicates_filtered = 0;
  std::size_t pairs_emitted = 0;
  std::map<int, std::size_t> label_counts{{0, 0}, {1, 0}};

  nlohmann::json to_json() const;
  static AugmentReport from_json(const nlohmann::json& j);
  friend bool operator==(const AugmentReport&, const AugmentReport&) = default;
};

/// Raised when an instruction slot used all its attempts; carries how many
/// instructions had been accepted before that.
class GenerationExhausted : public Error {
 public:
  GenerationExhausted(std::size_t accepted, std::size_t index);
  std::size_t accepted() const noexcept { return accepted_; }

 private:
  std::size_t accepted_;
};

/// A backend failure tagged with the pipeline role that raised it.
class RoleError : public Error {
 public:
  RoleError(std::string role, const std::string& what)
      : Error(role + ": " + what), role_(std::move(role)) {}
  const std::string& role() const noexcept { return role_; }

 private:
  std::string role_;
};

/// Instructions of the harmful-labeled examples of `pool`.
std::vector<std::string> harmful_exemplar_pool(const data::Dataset& pool);

/// Produces cfg.n_instructions accepted instructions. Each attempt draws
/// fresh exemplars, renders the prefix-attack prompt, filters refusals and
/// (optionally) duplicates.
std::vector<std::string> generate_instructions(const data::Dataset& pool, const AugmentConfig& cfg,
                                               const Roles& roles,
                                               AugmentReport* report = nullptr);

/// (refusal response, harmful response) for one instruction. `index` is the
/// instruction's slot; it seeds both generations.
std::pair<std::string, std::string> generate_response_pair(const std::string& instruction,
                                                           std::size_t index,
                                                           const AugmentConfig& cfg,
                                                           const Roles& roles);

struct LabeledScore {
  int label = 0;
  double teacher_score = 0.0;
};

/// label = 1 iff teacher_score > tau.
int threshold_label(double teacher_score, double tau);

LabeledScore label_pair(std::string_view instruction, std::string_view response,
                        const backends::TeacherScorer& teacher, double tau);

/// Called after each completed instruction with (completed, requested).
using ProgressFn = std::function<void(std::size_t, std::size_t)>;

struct AugmentResult {
  data::Dataset dataset;
  AugmentReport report;
};

/// Full pipeline. When `checkpoint_dir` is set, completed instructions are
/// appended to records.jsonl there and progress.json lists the completed
/// slots; a later call with the same config resumes after them. On error the
/// completed work is already on disk.
AugmentResult run_harmaug(const data::Dataset& pool, const AugmentConfig& cfg, const Roles& roles,
                          const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                          const ProgressFn& progress = nullptr);

struct PrefixAblation {
  std::size_t samples = 0;
  double with_prefix = 0.0;     ///< success rate with the affirmative prefix
  double without_prefix = 0.0;  ///< success rate with an empty assistant turn
  std::vector<std::string> with_completions;
  std::vector<std::string> without_completions;
};

/// Draws `samples` prompts (same exemplars for both arms) and measures how
/// often the instruction LLM answers instead of refusing, with and without
/// the affirmative prefix.
PrefixAblation prefix_ablation(const data::Dataset& pool, const AugmentConfig& cfg,
                               const backends::GenerationBackend& llm,
                               const promptcraft::RefusalDetector& detector, std::size_t samples);

}  // namespace harmaug::augment

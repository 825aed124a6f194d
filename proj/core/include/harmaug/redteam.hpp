#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <set>
#include <tuple>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "harmaug/backends.hpp"
#include "harmaug/optim.hpp"
#include "harmaug/text.hpp"

namespace harmaug::redteam {

/// Guard probabilities below this are clamped before taking logs.
inline constexpr double kGuardFloor = 1e-7;

enum class RewardForm {
  pair_approx,  ///< mean log guard probability over sampled target responses
  prompt_only,  ///< guard probability of the prompt alone
};

std::string_view to_string(RewardForm f) noexcept;
RewardForm parse_reward_form(std::string_view s);

struct RewardSpec {
  double beta = 0.1;
  double gamma = 1.0;
  std::size_t n_response_samples = 5;
  RewardForm form = RewardForm::pair_approx;

  void validate() const;
  nlohmann::json to_json() const;
};

/// log R(x) ~= 1/(n beta) * sum_i log guard(x, y_i) + (1/gamma) log p_ref(x),
/// with y_i drawn from `target`. `seed` selects the response draws.
double log_reward(std::string_view prompt, const backends::GenerationBackend& target,
                  const backends::Scorer& guard, double ref_log_prob, const RewardSpec& spec,
                  std::uint64_t seed = 0,
                  const backends::GenerationParams& params = backends::GenerationParams{});

/// (1/beta) log guard_prompt_score + (1/gamma) log p_ref(x).
double log_reward_prompt_only(std::string_view prompt, double guard_prompt_score,
                              double ref_log_prob, const RewardSpec& spec);

/// Trajectory-balance loss (log Z + log p(x) - log R(x))^2.
constexpr double tb_loss(double log_z, double log_p, double log_r) noexcept {
  const double r = log_z + log_p - log_r;
  return r * r;
}

struct SampledPrompt {
  std::string text;
  double log_prob = 0.0;  ///< under the policy at temperature 1
};

/// Prompt generator trainable with trajectory balance.
class PolicyModel {
 public:
  virtual ~PolicyModel() = default;

  /// Samples with logits divided by `temperature`; the reported log_prob is
  /// the untempered policy's.
  virtual SampledPrompt sample(Rng& rng, double temperature = 1.0) const = 0;
  virtual double log_prob(std::string_view prompt) const = 0;
  /// Returns log p(prompt) and adds scale * d log p / d params into `grad`.
  virtual double log_prob_and_grad(std::string_view prompt, double scale,
                                   std::span<double> grad) const = 0;

  virtual std::span<const double> parameters() const noexcept = 0;
  virtual std::span<double> mutable_parameters() noexcept = 0;

  double log_partition() const noexcept { return log_z_; }
  void set_log_partition(double v) noexcept { log_z_ = v; }

 private:
  double log_z_ = 0.0;
};

struct TbLossGrad {
  double loss = 0.0;
  std::vector<double> grad;  ///< w.r.t. parameters()
  double grad_log_z = 0.0;
};

/// Mean tb_loss over (prompt, log_reward) pairs and its gradients.
TbLossGrad tb_loss_and_grad(const PolicyModel& policy,
                            std::span<const std::pair<std::string, double>> batch);

/// Autoregressive tabular policy: one categorical over (vocabulary + end)
/// per prefix, prompts of 1..max_len words joined by single spaces.
/// Parameter layout: for prefix state s, logits [s*(V+1), (s+1)*(V+1)),
/// the end token last. States enumerate prefixes by length then base-V
/// value. The end token is masked at the empty prefix.
class TabularPolicy : public PolicyModel {
 public:
  TabularPolicy(std::vector<std::string> vocab, std::size_t max_len);

  SampledPrompt sample(Rng& rng, double temperature = 1.0) const override;
  double log_prob(std::string_view prompt) const override;
  double log_prob_and_grad(std::string_view prompt, double scale,
                           std::span<double> grad) const override;

  std::span<const double> parameters() const noexcept override { return logits_; }
  std::span<double> mutable_parameters() noexcept override { return logits_; }

  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  std::size_t max_len() const noexcept { return max_len_; }

  /// Every prompt of the space, by length then lexicographic token index.
  std::vector<std::string> enumerate() const;
  /// p(x) for enumerate()'s prompts.
  std::vector<double> distribution() const;

  nlohmann::json to_json() const;
  static TabularPolicy from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static TabularPolicy load(const std::filesystem::path& path);

 private:
  std::vector<std::size_t> parse(std::string_view prompt) const;
  std::size_t state_index(std::span<const std::size_t> prefix) const noexcept;
  void action_probs(std::size_t state, bool allow_end, double temperature,
                    std::vector<double>& out) const;

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> token_ids_;
  std::size_t max_len_;
  std::vector<std::size_t> level_offset_;
  std::vector<double> logits_;
};

struct BufferEntry {
  std::string prompt;
  double log_reward = 0.0;
};

/// Bounded store of high-reward prompts. One entry per distinct prompt.
/// When full, an insert must beat the current minimum, which is evicted
/// (oldest first among equal rewards).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000);

  /// True if the prompt was stored.
  bool insert(std::string prompt, double log_reward);
  /// Uniform draws with replacement; empty if the buffer is empty.
  std::vector<BufferEntry> sample(Rng& rng, std::size_t n) const;
  /// Highest-reward `fraction` of entries (at least one when non-empty),
  /// best first.
  std::vector<BufferEntry> top_fraction(double fraction) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return entries_.empty(); }
  std::vector<BufferEntry> entries() const;
  double min_log_reward() const;

  /// JSONL of {"prompt", "log_reward"}, in insertion order of live entries.
  void save(const std::filesystem::path& path) const;
  static ReplayBuffer load(const std::filesystem::path& path, std::size_t capacity);

 private:
  struct Slot {
    BufferEntry entry;
    std::uint64_t seq;
  };
  std::size_t capacity_;
  std::uint64_t next_seq_ = 0;
  std::vector<Slot> entries_;
  std::set<std::tuple<double, std::uint64_t, std::size_t>> order_;  // (reward, seq, slot)
  std::unordered_map<std::string, std::size_t> index_;
};

struct GfnConfig {
  std::size_t steps = 50000;
  std::size_t batch_size = 64;
  double on_policy_prob = 0.5;
  double temperature_min = 0.5;
  double temperature_max = 2.0;
  std::size_t buffer_capacity = 10000;
  double learning_rate = 1e-2;
  double log_z_learning_rate = 1e-1;
  double weight_decay = 0.0;
  optim::LrSchedule lr_schedule = optim::LrSchedule::linear_to_zero;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

using RewardFn = std::function<double(const std::string& prompt)>;

struct GfnReport {
  std::vector<double> step_loss;
  std::size_t on_policy_steps = 0;
  std::size_t off_policy_steps = 0;
};

/// Trajectory-balance training. Each step draws a batch on-policy (with
/// probability on_policy_prob, at a temperature uniform in the configured
/// range) or uniformly from the buffer, then takes one AdamW step on the
/// policy parameters and log Z. On-policy prompts are offered to the buffer.
/// `progress`, when set, is called after every step with (step + 1, steps, loss).
GfnReport gfn_train(PolicyModel& policy, const RewardFn& log_reward_fn, const GfnConfig& cfg,
                    ReplayBuffer& buffer,
                    const std::function<void(std::size_t, std::size_t, double)>& progress = nullptr);

struct MleConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 1024;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  optim::LrSchedule lr_schedule = optim::LrSchedule::linear_to_zero;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

struct MleReport {
  double initial_mean_log_prob = 0.0;
  double final_mean_log_prob = 0.0;
};

/// Maximises the mean log-likelihood of `prompts` with mini-batch AdamW.
MleReport mle_retrain(PolicyModel& policy, std::span<const std::string> prompts,
                      const MleConfig& cfg);

/// Mean oracle harm probability over k policy prompts x n_resp target
/// responses each.
double test_reward(const PolicyModel& policy, const backends::GenerationBackend& target,
                   const backends::Scorer& oracle, std::size_t k = 1024, std::size_t n_resp = 5,
                   std::uint64_t seed = 0,
                   const backends::GenerationParams& params = backends::GenerationParams{});

/// Policy prompts drawn at temperature 1.
std::vector<std::string> sample_prompts(const PolicyModel& policy, std::size_t k,
                                        std::uint64_t seed);

}  // namespace harmaug::redteam

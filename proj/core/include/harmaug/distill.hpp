#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "harmaug/backends.hpp"
#include "harmaug/dataset.hpp"
#include "harmaug/optim.hpp"

namespace harmaug::distill {

/// Student probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

/// KL(Bernoulli(p) || Bernoulli(q)) with 0 log 0 = 0. Throws ConfigError
/// unless p in [0,1] and q in (0,1).
double kl_bernoulli(double p, double q);

/// Negative log-likelihood of `label` under Bernoulli(q), q in (0,1).
double bce(double q, int label);

/// Temperature-softened teacher probability. T > 0 gives
/// softmax(logits / T)[harmful]; T == 0 gives the hard argmax with ties
/// resolved to 0.
double soften_teacher(const backends::TeacherLogits& logits, double temperature);

/// (1 - lambda) * KL(teacher_p || student_q) + lambda * BCE(student_q, label).
double kd_loss(double teacher_p, double student_q, int label, double lambda);

struct KDConfig {
  double lambda = 0.5;
  double teacher_temperature = 0.0;
  double learning_rate = 3e-5;
  double weight_decay = 0.1;
  std::size_t batch_size = 256;
  std::size_t epochs = 3;
  std::uint64_t seed = 0;
  optim::LrSchedule lr_schedule = optim::LrSchedule::linear_to_zero;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Hyper-parameters of the continual fine-tuning stage. The adapter rank is
/// kept for external students; the reference scorer trains all weights.
struct ContinualPreset {
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  double mix_ratio = 0.5;
  std::size_t lora_rank = 32;
};

/// KD target for one stored example. With T == 0 (or no stored score) this
/// is the stored label; otherwise the stored score is softened at T.
double teacher_target(const data::Example& e, double temperature);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Scorer whose parameters can be optimised with the KD objective.
class TrainableScorer : public backends::Scorer {
 public:
  virtual std::span<const double> parameters() const noexcept = 0;
  virtual std::span<double> mutable_parameters() noexcept = 0;

  /// Mean kd_loss over `batch` and its gradient w.r.t. parameters().
  virtual LossGrad loss_and_grad(std::span<const data::Example* const> batch,
                                 std::span<const double> teacher_targets,
                                 double lambda) const = 0;
};

/// Sparse (index, value) feature vector with unique, sorted indices.
using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;

/// Logistic regression over signed-hashed word unigrams and bigrams of
/// `instruction [SEP] response`.
///
/// Parameter layout: `feature_dim` weights followed by one bias.
class ReferenceScorer : public TrainableScorer {
 public:
  static constexpr std::size_t kDefaultFeatureDim = std::size_t{1} << 16;

  explicit ReferenceScorer(std::size_t feature_dim = kDefaultFeatureDim,
                           std::uint64_t hash_seed = 0);

  SparseFeatures features(std::string_view instruction, std::string_view response) const;
  double logit(const SparseFeatures& f) const noexcept;
  double logit(std::string_view instruction, std::string_view response) const;

  /// sigmoid(w.f + b) clamped to [kProbClamp, 1 - kProbClamp].
  double predict(std::string_view instruction, std::string_view response) const override;

  std::span<const double> parameters() const noexcept override { return params_; }
  std::span<double> mutable_parameters() noexcept override { return params_; }
  LossGrad loss_and_grad(std::span<const data::Example* const> batch,
                         std::span<const double> teacher_targets,
                         double lambda) const override;

  std::size_t feature_dim() const noexcept { return dim_; }
  std::uint64_t hash_seed() const noexcept { return hash_seed_; }
  double bias() const noexcept { return params_.back(); }

  /// Writes a JSON checkpoint; `config` and `metrics` are stored verbatim.
  void save(const std::filesystem::path& path, const nlohmann::json& config = nlohmann::json::object(),
            const nlohmann::json& metrics = nlohmann::json::object()) const;
  /// Reads a checkpoint written by save(). Optional outputs receive the
  /// stored config/metrics blocks.
  static ReferenceScorer load(const std::filesystem::path& path, nlohmann::json* config = nullptr,
                              nlohmann::json* metrics = nullptr);

 private:
  std::size_t dim_;
  std::uint64_t hash_seed_;
  std::vector<double> params_;
};

struct TrainReport {
  std::vector<double> epoch_loss;  ///< mean pre-update batch loss per epoch
  std::size_t steps = 0;
};

/// Mini-batch AdamW on the KD objective over `data` for cfg.epochs epochs.
TrainReport train(TrainableScorer& scorer, const data::Dataset& data, const KDConfig& cfg);

/// `steps` AdamW updates on mixed batches drawn from `old_data` and
/// `new_data`; mix_ratio is the share taken from `new_data`.
TrainReport continual_finetune(TrainableScorer& scorer, const data::Dataset& old_data,
                               const data::Dataset& new_data, const KDConfig& cfg,
                               std::size_t steps, double mix_ratio);

/// Mean KD loss of `scorer` over a dataset.
double mean_loss(const TrainableScorer& scorer, const data::Dataset& data, const KDConfig& cfg);

}  // namespace harmaug::distill

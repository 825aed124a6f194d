#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace harmaug::optim {

enum class LrSchedule { linear_to_zero, constant };

std::string_view to_string(LrSchedule s) noexcept;
LrSchedule parse_lr_schedule(std::string_view s);

/// Learning rate for 0-based `step` out of `total_steps`.
/// linear_to_zero: lr0 * (1 - step / total_steps).
double learning_rate_at(LrSchedule schedule, double lr0, std::size_t step,
                        std::size_t total_steps) noexcept;

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay (Loshchilov & Hutter).
class AdamW {
 public:
  AdamW(std::size_t n_params, AdamWConfig cfg = {});

  /// One update of `params` in place with gradient `grad` at rate `lr`.
  void step(std::span<double> params, std::span<const double> grad, double lr);

  std::size_t steps_taken() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace harmaug::optim

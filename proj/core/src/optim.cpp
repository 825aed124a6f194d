#include "harmaug/optim.hpp"

#include <cmath>
#include <string>

#include "harmaug/error.hpp"

namespace harmaug::optim {

std::string_view to_string(LrSchedule s) noexcept {
  return s == LrSchedule::linear_to_zero ? "linear_to_zero" : "constant";
}

LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "linear_to_zero" || s == "linear") return LrSchedule::linear_to_zero;
  if (s == "constant") return LrSchedule::constant;
  throw ConfigError("unknown lr_schedule \"" + std::string(s) + "\"");
}

double learning_rate_at(LrSchedule schedule, double lr0, std::size_t step,
                        std::size_t total_steps) noexcept {
  if (schedule == LrSchedule::constant || total_steps == 0) return lr0;
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

AdamW::AdamW(std::size_t n_params, AdamWConfig cfg)
    : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ConfigError("AdamW: parameter/gradient size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] = params[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace harmaug::optim

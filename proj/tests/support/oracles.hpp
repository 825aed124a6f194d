#pragma once

// Independent reference computations used to check the library.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "harmaug/distill.hpp"
#include "harmaug/evalx.hpp"
#include "harmaug/redteam.hpp"

namespace harmaug::testing {

inline evalx::Confusion confusion_oracle(const std::vector<double>& s, const std::vector<int>& y,
                                         double t) {
  evalx::Confusion c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred = s[i] > t;
    if (pred && y[i] == 1) ++c.tp;
    if (pred && y[i] == 0) ++c.fp;
    if (!pred && y[i] == 0) ++c.tn;
    if (!pred && y[i] == 1) ++c.fn;
  }
  return c;
}

/// Average precision by enumerating every cut point of the ranking (ties
/// ordered by index) and recomputing precision and recall from scratch.
inline double auprc_by_cuts(const std::vector<double>& s, const std::vector<int>& y) {
  const std::size_t n = s.size();
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  // Insertion sort: obviously stable, no shared code with the library.
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = i; j > 0 && s[rank[j]] > s[rank[j - 1]]; --j) {
      std::swap(rank[j], rank[j - 1]);
    }
  }
  const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    double tp = 0.0;
    for (std::size_t i = 0; i < k; ++i) tp += y[rank[i]] == 1 ? 1.0 : 0.0;
    const double recall = tp / pos;
    const double precision = tp / static_cast<double>(k);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

/// Average precision over distinct score thresholds (predict positive when
/// score >= t). Agrees with the cut-point form whenever scores are distinct.
inline double auprc_by_thresholds(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> ts(s);
  std::sort(ts.begin(), ts.end(), std::greater<>());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double ap = 0.0;
  double prev_recall = 0.0;
  for (double t : ts) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) {
        predicted += 1.0;
        tp += y[i] == 1 ? 1.0 : 0.0;
      }
    }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * (tp / predicted);
    prev_recall = recall;
  }
  return ap;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central differences of `f` at `params` over the given coordinates.
template <typename F>
GradCheck check_gradient(std::span<double> params, std::span<const double> analytic,
                         const std::vector<std::size_t>& coords, F&& f, double h = 1e-5) {
  GradCheck out;
  for (std::size_t c : coords) {
    const double saved = params[c];
    params[c] = saved + h;
    const double up = f();
    params[c] = saved - h;
    const double down = f();
    params[c] = saved;
    const double numeric = (up - down) / (2.0 * h);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[c], numeric));
    ++out.coordinates;
  }
  return out;
}

/// Gradient check of the distillation loss for a randomised scorer state.
/// Every coordinate touched by the batch is checked, plus the bias.
inline GradCheck check_scorer_gradient(distill::ReferenceScorer& scorer,
                                       const std::vector<const data::Example*>& batch,
                                       const std::vector<double>& targets, double lambda,
                                       Rng& rng) {
  auto params = scorer.mutable_parameters();
  std::vector<std::size_t> coords;
  for (const auto* e : batch) {
    for (const auto& [idx, v] : scorer.features(e->instruction, e->response)) {
      params[idx] = rng.uniform(-0.5, 0.5);
      coords.push_back(idx);
    }
  }
  params.back() = rng.uniform(-0.5, 0.5);
  coords.push_back(params.size() - 1);
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());

  const auto lg = scorer.loss_and_grad(batch, targets, lambda);
  return check_gradient(params, lg.grad, coords,
                        [&] { return scorer.loss_and_grad(batch, targets, lambda).loss; });
}

/// Gradient check of the trajectory-balance loss on every policy parameter
/// and on log Z, for a randomised policy state.
inline GradCheck check_tb_gradient(redteam::TabularPolicy& policy,
                                   const std::vector<std::pair<std::string, double>>& batch,
                                   Rng& rng) {
  auto params = policy.mutable_parameters();
  for (auto& p : params) p = rng.uniform(-1.0, 1.0);
  policy.set_log_partition(rng.uniform(-2.0, 2.0));
  const auto lg = redteam::tb_loss_and_grad(policy, batch);

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  GradCheck g = check_gradient(params, lg.grad, coords,
                               [&] { return redteam::tb_loss_and_grad(policy, batch).loss; });

  const double h = 1e-5;
  const double z = policy.log_partition();
  policy.set_log_partition(z + h);
  const double up = redteam::tb_loss_and_grad(policy, batch).loss;
  policy.set_log_partition(z - h);
  const double down = redteam::tb_loss_and_grad(policy, batch).loss;
  policy.set_log_partition(z);
  g.max_rel_error = std::max(g.max_rel_error, relative_error(lg.grad_log_z, (up - down) / (2 * h)));
  ++g.coordinates;
  return g;
}

/// Total variation between the policy and the normalised reward.
inline double tv_to_reward(const redteam::TabularPolicy& policy,
                           const std::vector<double>& log_rewards) {
  const auto dist = policy.distribution();
  const double mx = *std::max_element(log_rewards.begin(), log_rewards.end());
  double z = 0.0;
  for (double lr : log_rewards) z += std::exp(lr - mx);
  double tv = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    tv += std::abs(dist[i] - std::exp(log_rewards[i] - mx) / z);
  }
  return tv / 2.0;
}

inline double log_sum_exp(const std::vector<double>& xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace harmaug::testing

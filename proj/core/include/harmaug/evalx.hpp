#pragma once

#include <cstddef>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "harmaug/backends.hpp"
#include "harmaug/dataset.hpp"

namespace harmaug::evalx {

/// Classification metrics for one evaluation run. Precision is 0 when
/// nothing is predicted positive; F1 is 0 when precision + recall is 0.
struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auprc = 0.0;
  double threshold = 0.5;
  std::size_t n = 0;
  std::size_t positives = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Prediction is `score > threshold`.
Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Fills precision, recall, f1, threshold, n and positives (auprc left at 0).
MetricsReport precision_recall_f1(std::span<const double> scores, std::span<const int> labels,
                                  double threshold);

/// Non-interpolated average precision: sort by score descending, ties in
/// original index order, and sum (R_n - R_{n-1}) * P_n over every prefix.
/// Throws if there is no positive label.
double auprc(std::span<const double> scores, std::span<const int> labels);

/// Scores every example with `scorer` and builds the full report.
MetricsReport evaluate(const backends::Scorer& scorer, const data::Dataset& data,
                       double threshold = 0.5);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Mean of (1 - cosine similarity) over all unordered prompt pairs.
double diversity(std::span<const std::string> prompts, const backends::Embedder& embedder);

struct ClusterReport {
  std::size_t n_clusters = 0;
  std::size_t n_noise = 0;
  std::vector<int> assignments;  ///< -1 marks noise

  nlohmann::json to_json() const;
};

/// DBSCAN with Euclidean distance. A point is core when at least `min_pts`
/// points (itself included) lie within `eps` inclusive. Cluster ids follow
/// discovery order over the input.
ClusterReport dbscan(std::span<const std::vector<double>> points, double eps, std::size_t min_pts);

}  // namespace harmaug::evalx

#include "harmaug/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "harmaug/error.hpp"

namespace harmaug::evalx {

using json = nlohmann::json;

json MetricsReport::to_json() const {
  return {{"precision", precision}, {"recall", recall},       {"f1", f1},
          {"auprc", auprc},         {"threshold", threshold}, {"n", n},
          {"positives", positives}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.auprc = j.at("auprc").get<double>();
  r.threshold = j.at("threshold").get<double>();
  r.n = j.at("n").get<std::size_t>();
  r.positives = j.at("positives").get<std::size_t>();
  return r;
}

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
  if (scores.empty()) throw ConfigError("metrics need at least one example");
  for (int l : labels) {
    if (l != 0 && l != 1) throw ConfigError("labels must be 0 or 1");
  }
}

}  // namespace

Confusion confusion(std::span<const double> scores, std::span<const int> labels,
                    double threshold) {
  check_inputs(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    if (pred && labels[i] == 1) ++c.tp;
    else if (pred) ++c.fp;
    else if (labels[i] == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricsReport precision_recall_f1(std::span<const double> scores, std::span<const int> labels,
                                  double threshold) {
  const Confusion c = confusion(scores, labels, threshold);
  MetricsReport r;
  r.threshold = threshold;
  r.n = scores.size();
  r.positives = c.tp + c.fn;
  r.precision = (c.tp + c.fp) == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  r.recall = (c.tp + c.fn) == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.f1 = (r.precision + r.recall) == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw ConfigError("auprc needs at least one positive label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Recall only moves at positives, so only those terms are non-zero.
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] != 1) continue;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
  }
  return ap / static_cast<double>(positives);
}

MetricsReport evaluate(const backends::Scorer& scorer, const data::Dataset& data,
                       double threshold) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(data.size());
  labels.reserve(data.size());
  for (const auto& e : data) {
    scores.push_back(scorer.predict(e.instruction, e.response));
    labels.push_back(e.label);
  }
  MetricsReport r = precision_recall_f1(scores, labels, threshold);
  r.auprc = auprc(scores, labels);
  return r;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ConfigError("zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double diversity(std::span<const std::string> prompts, const backends::Embedder& embedder) {
  if (prompts.size() < 2) throw ConfigError("diversity needs at least two prompts");
  std::vector<std::vector<double>> emb;
  emb.reserve(prompts.size());
  for (const auto& p : prompts) emb.push_back(embedder.embed(p));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    for (std::size_t j = i + 1; j < emb.size(); ++j) {
      sum += 1.0 - cosine_similarity(emb[i], emb[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

json ClusterReport::to_json() const {
  return {{"n_clusters", n_clusters}, {"n_noise", n_noise}, {"assignments", assignments}};
}

ClusterReport dbscan(std::span<const std::vector<double>> points, double eps,
                     std::size_t min_pts) {
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (min_pts < 1) throw ConfigError("min_pts must be >= 1");
  const std::size_t n = points.size();
  if (n > 0) {
    for (const auto& p : points) {
      if (p.size() != points[0].size()) throw ConfigError("dbscan: dimension mismatch");
    }
  }

  const double eps2 = eps * eps;
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighbors[i].push_back(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < points[i].size(); ++k) {
        const double d = points[i][k] - points[j][k];
        d2 += d * d;
      }
      if (d2 <= eps2) {
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
    }
  }

  constexpr int kUnvisited = -2;
  ClusterReport r;
  r.assignments.assign(n, kUnvisited);
  int next_id = 0;
  std::vector<std::size_t> frontier;
  for (std::size_t i = 0; i < n; ++i) {
    if (r.assignments[i] != kUnvisited) continue;
    if (neighbors[i].size() < min_pts) {
      r.assignments[i] = -1;  // may be claimed later as a border point
      continue;
    }
    const int id = next_id++;
    r.assignments[i] = id;
    frontier.assign(neighbors[i].begin(), neighbors[i].end());
    while (!frontier.empty()) {
      const std::size_t q = frontier.back();
      frontier.pop_back();
      if (r.assignments[q] == -1) r.assignments[q] = id;
      if (r.assignments[q] != kUnvisited) continue;
      r.assignments[q] = id;
      if (neighbors[q].size() >= min_pts) {
        frontier.insert(frontier.end(), neighbors[q].begin(), neighbors[q].end());
      }
    }
  }
  r.n_clusters = static_cast<std::size_t>(next_id);
  r.n_noise = static_cast<std::size_t>(std::count(r.assignments.begin(), r.assignments.end(), -1));
  return r;
}

}  // namespace harmaug::evalx

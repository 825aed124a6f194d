#include "harmaug/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "harmaug/error.hpp"
#include "harmaug/text.hpp"

namespace harmaug::distill {

using json = nlohmann::json;

namespace {

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// x log(x / y) with 0 log 0 = 0.
double xlogxy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(x / y); }

}  // namespace

double kl_bernoulli(double p, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("kl_bernoulli: q must lie in (0,1)");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("kl_bernoulli: p must lie in [0,1]");
  if (p == q) return 0.0;
  return std::max(0.0, xlogxy(p, q) + xlogxy(1.0 - p, 1.0 - q));
}

double bce(double q, int label) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("bce: q must lie in (0,1)");
  return label == 1 ? -std::log(q) : -std::log1p(-q);
}

double soften_teacher(const backends::TeacherLogits& logits, double temperature) {
  if (temperature < 0.0) throw ConfigError("teacher temperature must be >= 0");
  if (temperature == 0.0) return logits.harmful > logits.safe ? 1.0 : 0.0;
  return backends::harmful_probability({logits.harmful / temperature, logits.safe / temperature});
}

double kd_loss(double teacher_p, double student_q, int label, double lambda) {
  if (lambda == 1.0) return bce(student_q, label);
  if (lambda == 0.0) return kl_bernoulli(teacher_p, student_q);
  return (1.0 - lambda) * kl_bernoulli(teacher_p, student_q) + lambda * bce(student_q, label);
}

void KDConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
  if (!(teacher_temperature >= 0.0)) throw ConfigError("teacher temperature must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

json KDConfig::to_json() const {
  return {{"lambda", lambda},
          {"teacher_temperature", teacher_temperature},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"lr_schedule", std::string(optim::to_string(lr_schedule))}};
}

double teacher_target(const data::Example& e, double temperature) {
  if (temperature == 0.0 || !e.teacher_score) return static_cast<double>(e.label);
  const double s = std::clamp(*e.teacher_score, 1e-12, 1.0 - 1e-12);
  return soften_teacher({std::log(s) - std::log1p(-s), 0.0}, temperature);
}

ReferenceScorer::ReferenceScorer(std::size_t feature_dim, std::uint64_t hash_seed)
    : dim_(feature_dim), hash_seed_(hash_seed), params_(feature_dim + 1, 0.0) {
  if (dim_ == 0 || dim_ > (std::size_t{1} << 31)) throw ConfigError("feature_dim out of range");
}

SparseFeatures ReferenceScorer::features(std::string_view instruction,
                                         std::string_view response) const {
  std::vector<std::string> toks = text::words(instruction);
  toks.emplace_back("[SEP]");
  for (auto& w : text::words(response)) toks.push_back(std::move(w));

  const std::uint64_t basis = hash_combine(0xcbf29ce484222325ULL, hash_seed_);
  SparseFeatures raw;
  raw.reserve(2 * toks.size());
  auto add = [&](std::uint64_t h) {
    const double sign = (h >> 63) != 0 ? -1.0 : 1.0;
    raw.emplace_back(static_cast<std::uint32_t>(h % dim_), sign);
  };
  for (std::size_t i = 0; i < toks.size(); ++i) {
    add(splitmix64(fnv1a(toks[i], basis)));
    if (i + 1 < toks.size()) {
      std::uint64_t h = fnv1a(toks[i], basis);
      h = fnv1a(" ", h);
      add(splitmix64(fnv1a(toks[i + 1], h) ^ 0x2545f4914f6cdd1dULL));
    }
  }
  std::sort(raw.begin(), raw.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseFeatures merged;
  for (const auto& [idx, v] : raw) {
    if (!merged.empty() && merged.back().first == idx) {
      merged.back().second += v;
    } else {
      merged.emplace_back(idx, v);
    }
  }
  std::erase_if(merged, [](const auto& p) { return p.second == 0.0; });
  return merged;
}

double ReferenceScorer::logit(const SparseFeatures& f) const noexcept {
  double z = params_.back();
  for (const auto& [idx, v] : f) z += params_[idx] * v;
  return z;
}

double ReferenceScorer::logit(std::string_view instruction, std::string_view response) const {
  return logit(features(instruction, response));
}

double ReferenceScorer::predict(std::string_view instruction, std::string_view response) const {
  return std::clamp(sigmoid(logit(instruction, response)), kProbClamp, 1.0 - kProbClamp);
}

LossGrad ReferenceScorer::loss_and_grad(std::span<const data::Example* const> batch,
                                        std::span<const double> teacher_targets,
                                        double lambda) const {
  if (batch.size() != teacher_targets.size()) {
    throw ConfigError("loss_and_grad: batch/target size mismatch");
  }
  LossGrad out;
  out.grad.assign(params_.size(), 0.0);
  if (batch.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& e = *batch[i];
    const SparseFeatures f = features(e.instruction, e.response);
    const double raw_q = sigmoid(logit(f));
    const double q = std::clamp(raw_q, kProbClamp, 1.0 - kProbClamp);
    const double p = teacher_targets[i];
    out.loss += kd_loss(p, q, e.label, lambda) * inv_n;
    if (raw_q != q) continue;  // zero gradient through the clamp
    // d/dz of KL(p||sigmoid z) is q - p; of BCE it is q - label.
    const double dz = ((1.0 - lambda) * (q - p) + lambda * (q - e.label)) * inv_n;
    for (const auto& [idx, v] : f) out.grad[idx] += dz * v;
    out.grad.back() += dz;
  }
  return out;
}

void ReferenceScorer::save(const std::filesystem::path& path, const json& config,
                           const json& metrics) const {
  json idx = json::array();
  json val = json::array();
  for (std::size_t i = 0; i < dim_; ++i) {
    if (params_[i] != 0.0) {
      idx.push_back(i);
      val.push_back(params_[i]);
    }
  }
  const json j = {{"format", "harmaug.reference_scorer"},
                  {"version", 1},
                  {"feature_dim", dim_},
                  {"hash_seed", hash_seed_},
                  {"bias", params_.back()},
                  {"weights", {{"index", std::move(idx)}, {"value", std::move(val)}}},
                  {"config", config},
                  {"metrics", metrics}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

ReferenceScorer ReferenceScorer::load(const std::filesystem::path& path, json* config,
                                      json* metrics) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "harmaug.reference_scorer") {
    throw DataError("checkpoint " + path.string() + " is not a reference scorer");
  }
  try {
    ReferenceScorer s(j.at("feature_dim").get<std::size_t>(), j.at("hash_seed").get<std::uint64_t>());
    const auto& idx = j.at("weights").at("index");
    const auto& val = j.at("weights").at("value");
    if (idx.size() != val.size()) throw DataError("weights index/value length mismatch");
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto i = idx[k].get<std::size_t>();
      if (i >= s.dim_) throw DataError("weight index out of range");
      s.params_[i] = val[k].get<double>();
    }
    s.params_.back() = j.at("bias").get<double>();
    if (config) *config = j.value("config", json::object());
    if (metrics) *metrics = j.value("metrics", json::object());
    return s;
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path.string() + " is malformed: " + e.what());
  }
}

namespace {

std::vector<double> targets_for(std::span<const data::Example* const> batch, double temperature) {
  std::vector<double> t;
  t.reserve(batch.size());
  for (const auto* e : batch) t.push_back(teacher_target(*e, temperature));
  return t;
}

}  // namespace

TrainReport train(TrainableScorer& scorer, const data::Dataset& data, const KDConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DataError("cannot train on an empty dataset");

  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  optim::AdamW opt(scorer.parameters().size(), {0.9, 0.999, 1e-8, cfg.weight_decay});

  TrainReport report;
  std::vector<std::size_t> order(n);
  std::vector<const data::Example*> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(hash_combine(cfg.seed, epoch));
    rng.shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[order[i]]);
      const auto targets = targets_for(batch, cfg.teacher_temperature);
      const LossGrad lg = scorer.loss_and_grad(batch, targets, cfg.lambda);
      epoch_loss += lg.loss * static_cast<double>(batch.size());
      const double lr = optim::learning_rate_at(cfg.lr_schedule, cfg.learning_rate,
                                                report.steps, total);
      opt.step(scorer.mutable_parameters(), lg.grad, lr);
      ++report.steps;
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return report;
}

TrainReport continual_finetune(TrainableScorer& scorer, const data::Dataset& old_data,
                               const data::Dataset& new_data, const KDConfig& cfg,
                               std::size_t steps, double mix_ratio) {
  cfg.validate();
  TrainReport report;
  if (steps == 0) return report;
  data::MixedBatchSampler sampler(old_data, new_data, {cfg.batch_size, cfg.seed, mix_ratio});
  optim::AdamW opt(scorer.parameters().size(), {0.9, 0.999, 1e-8, cfg.weight_decay});
  double total_loss = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    const data::Batch b = sampler.next();
    const auto targets = targets_for(b.items, cfg.teacher_temperature);
    const LossGrad lg = scorer.loss_and_grad(b.items, targets, cfg.lambda);
    total_loss += lg.loss;
    opt.step(scorer.mutable_parameters(), lg.grad,
             optim::learning_rate_at(cfg.lr_schedule, cfg.learning_rate, step, steps));
    ++report.steps;
  }
  report.epoch_loss.push_back(total_loss / static_cast<double>(steps));
  return report;
}

double mean_loss(const TrainableScorer& scorer, const data::Dataset& data, const KDConfig& cfg) {
  if (data.empty()) throw DataError("mean_loss of an empty dataset");
  std::vector<const data::Example*> all;
  all.reserve(data.size());
  for (const auto& e : data) all.push_back(&e);
  const auto targets = targets_for(all, cfg.teacher_temperature);
  return scorer.loss_and_grad(all, targets, cfg.lambda).loss;
}

}  // namespace harmaug::distill

#include "harmaug/redteam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "harmaug/dataset.hpp"
#include "harmaug/error.hpp"

namespace harmaug::redteam {

using json = nlohmann::json;

std::string_view to_string(RewardForm f) noexcept {
  return f == RewardForm::pair_approx ? "pair_approx" : "prompt_only";
}

RewardForm parse_reward_form(std::string_view s) {
  if (s == "pair_approx") return RewardForm::pair_approx;
  if (s == "prompt_only") return RewardForm::prompt_only;
  throw ConfigError("unknown reward form \"" + std::string(s) + "\"");
}

void RewardSpec::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (n_response_samples < 1) throw ConfigError("n_response_samples must be >= 1");
}

json RewardSpec::to_json() const {
  return {{"beta", beta},
          {"gamma", gamma},
          {"n_response_samples", n_response_samples},
          {"form", std::string(to_string(form))}};
}

namespace {

double checked_log_prob(double p, const char* what) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw ConfigError(std::string(what) + " must lie in (0,1]; clamp guard outputs upstream");
  }
  return std::log(p);
}

}  // namespace

double log_reward(std::string_view prompt, const backends::GenerationBackend& target,
                  const backends::Scorer& guard, double ref_log_prob, const RewardSpec& spec,
                  std::uint64_t seed, const backends::GenerationParams& params) {
  spec.validate();
  if (spec.form != RewardForm::pair_approx) {
    throw ConfigError("log_reward evaluates the pair_approx form only");
  }
  const std::vector<ChatMessage> messages = {{Role::user, std::string(prompt)}};
  double sum = 0.0;
  for (std::size_t i = 0; i < spec.n_response_samples; ++i) {
    backends::GenerationParams p = params;
    p.seed = hash_combine(seed, i);
    const std::string response = target.generate(messages, p);
    sum += checked_log_prob(guard.predict(prompt, response), "guard probability");
  }
  return sum / (static_cast<double>(spec.n_response_samples) * spec.beta) +
         ref_log_prob / spec.gamma;
}

double log_reward_prompt_only(std::string_view, double guard_prompt_score, double ref_log_prob,
                              const RewardSpec& spec) {
  spec.validate();
  return checked_log_prob(guard_prompt_score, "guard prompt score") / spec.beta +
         ref_log_prob / spec.gamma;
}

TbLossGrad tb_loss_and_grad(const PolicyModel& policy,
                            std::span<const std::pair<std::string, double>> batch) {
  TbLossGrad out;
  out.grad.assign(policy.parameters().size(), 0.0);
  if (batch.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double log_z = policy.log_partition();
  for (const auto& [prompt, log_r] : batch) {
    const double log_p = policy.log_prob(prompt);
    const double residual = log_z + log_p - log_r;
    out.loss += residual * residual * inv_n;
    out.grad_log_z += 2.0 * residual * inv_n;
    policy.log_prob_and_grad(prompt, 2.0 * residual * inv_n, out.grad);
  }
  return out;
}

// ---------------------------------------------------------------------------
// TabularPolicy

TabularPolicy::TabularPolicy(std::vector<std::string> vocab, std::size_t max_len)
    : vocab_(std::move(vocab)), max_len_(max_len) {
  if (vocab_.empty()) throw ConfigError("policy vocabulary is empty");
  if (max_len_ < 1) throw ConfigError("policy max_len must be >= 1");
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    const auto& w = vocab_[i];
    if (w.empty() || w.find_first_of(" \t\n") != std::string::npos) {
      throw ConfigError("policy tokens must be non-empty and contain no whitespace");
    }
    if (!token_ids_.emplace(w, i).second) throw ConfigError("duplicate policy token " + w);
  }
  level_offset_.assign(max_len_ + 1, 0);
  std::size_t width = 1;
  for (std::size_t l = 0; l < max_len_; ++l) {
    level_offset_[l + 1] = level_offset_[l] + width;
    width *= vocab_.size();
    if (level_offset_[l + 1] > (std::size_t{1} << 26)) {
      throw ConfigError("tabular policy state space is too large");
    }
  }
  logits_.assign(level_offset_[max_len_] * (vocab_.size() + 1), 0.0);
}

std::size_t TabularPolicy::state_index(std::span<const std::size_t> prefix) const noexcept {
  std::size_t v = 0;
  for (std::size_t t : prefix) v = v * vocab_.size() + t;
  return level_offset_[prefix.size()] + v;
}

void TabularPolicy::action_probs(std::size_t state, bool allow_end, double temperature,
                                 std::vector<double>& out) const {
  const std::size_t a = vocab_.size() + 1;
  const double* row = logits_.data() + state * a;
  const std::size_t n = allow_end ? a : a - 1;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, row[i] / temperature);
  out.assign(a, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(row[i] / temperature - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

std::vector<std::size_t> TabularPolicy::parse(std::string_view prompt) const {
  std::vector<std::size_t> ids;
  std::size_t pos = 0;
  while (pos <= prompt.size()) {
    const auto sp = prompt.find(' ', pos);
    const auto tok = prompt.substr(pos, sp == std::string_view::npos ? sp : sp - pos);
    auto it = token_ids_.find(std::string(tok));
    if (it == token_ids_.end()) return {};
    ids.push_back(it->second);
    if (sp == std::string_view::npos) break;
    pos = sp + 1;
  }
  if (ids.size() > max_len_) return {};
  return ids;
}

SampledPrompt TabularPolicy::sample(Rng& rng, double temperature) const {
  if (!(temperature > 0.0)) throw ConfigError("sampling temperature must be > 0");
  std::vector<std::size_t> ids;
  std::vector<double> probs, base;
  SampledPrompt out;
  const std::size_t end = vocab_.size();
  while (ids.size() < max_len_) {
    const std::size_t s = state_index(ids);
    const bool allow_end = !ids.empty();
    action_probs(s, allow_end, temperature, probs);
    const std::vector<double>* p1 = &probs;
    if (temperature != 1.0) {
      action_probs(s, allow_end, 1.0, base);
      p1 = &base;
    }
    double u = rng.uniform();
    std::size_t a = 0;
    const std::size_t n = allow_end ? end + 1 : end;
    for (; a + 1 < n; ++a) {
      if (u < probs[a]) break;
      u -= probs[a];
    }
    out.log_prob += std::log((*p1)[a]);
    if (a == end) break;
    ids.push_back(a);
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out.text.push_back(' ');
    out.text += vocab_[ids[i]];
  }
  return out;
}

double TabularPolicy::log_prob(std::string_view prompt) const {
  const auto ids = parse(prompt);
  if (ids.empty()) return -std::numeric_limits<double>::infinity();
  std::vector<double> probs;
  double lp = 0.0;
  for (std::size_t t = 0; t <= ids.size() && t < max_len_; ++t) {
    action_probs(state_index(std::span(ids).first(t)), t > 0, 1.0, probs);
    lp += std::log(probs[t < ids.size() ? ids[t] : vocab_.size()]);
  }
  return lp;
}

double TabularPolicy::log_prob_and_grad(std::string_view prompt, double scale,
                                        std::span<double> grad) const {
  if (grad.size() != logits_.size()) throw ConfigError("gradient buffer has the wrong size");
  const auto ids = parse(prompt);
  if (ids.empty()) throw DataError("prompt is outside the policy's space: " + std::string(prompt));
  const std::size_t a_count = vocab_.size() + 1;
  std::vector<double> probs;
  double lp = 0.0;
  for (std::size_t t = 0; t <= ids.size() && t < max_len_; ++t) {
    const std::size_t s = state_index(std::span(ids).first(t));
    action_probs(s, t > 0, 1.0, probs);
    const std::size_t chosen = t < ids.size() ? ids[t] : vocab_.size();
    lp += std::log(probs[chosen]);
    double* g = grad.data() + s * a_count;
    for (std::size_t b = 0; b < a_count; ++b) {
      g[b] += scale * ((b == chosen ? 1.0 : 0.0) - probs[b]);
    }
  }
  return lp;
}

std::vector<std::string> TabularPolicy::enumerate() const {
  std::vector<std::string> out;
  std::vector<std::string> level = {""};
  for (std::size_t len = 1; len <= max_len_; ++len) {
    std::vector<std::string> next;
    next.reserve(level.size() * vocab_.size());
    for (const auto& prefix : level) {
      for (const auto& w : vocab_) next.push_back(prefix.empty() ? w : prefix + " " + w);
    }
    out.insert(out.end(), next.begin(), next.end());
    level = std::move(next);
  }
  return out;
}

std::vector<double> TabularPolicy::distribution() const {
  const auto prompts = enumerate();
  std::vector<double> p;
  p.reserve(prompts.size());
  for (const auto& x : prompts) p.push_back(std::exp(log_prob(x)));
  return p;
}

json TabularPolicy::to_json() const {
  return {{"format", "harmaug.tabular_policy"},
          {"version", 1},
          {"vocab", vocab_},
          {"max_len", max_len_},
          {"log_z", log_partition()},
          {"logits", logits_}};
}

TabularPolicy TabularPolicy::from_json(const json& j) {
  if (j.value("format", "") != "harmaug.tabular_policy") {
    throw DataError("not a tabular policy checkpoint");
  }
  try {
    TabularPolicy p(j.at("vocab").get<std::vector<std::string>>(), j.at("max_len").get<std::size_t>());
    auto logits = j.at("logits").get<std::vector<double>>();
    if (logits.size() != p.logits_.size()) throw DataError("policy logits have the wrong size");
    p.logits_ = std::move(logits);
    p.set_log_partition(j.at("log_z").get<double>());
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed policy checkpoint: ") + e.what());
  }
}

void TabularPolicy::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write policy " + path.string());
  out << to_json().dump() << '\n';
}

TabularPolicy TabularPolicy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open policy " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError("policy " + path.string() + " is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("buffer capacity must be >= 1");
}

bool ReplayBuffer::insert(std::string prompt, double log_reward) {
  if (index_.contains(prompt)) return false;
  if (entries_.size() >= capacity_) {
    const auto lowest = order_.begin();
    if (!(log_reward > std::get<0>(*lowest))) return false;
    const std::size_t slot = std::get<2>(*lowest);
    order_.erase(lowest);
    index_.erase(entries_[slot].entry.prompt);
    const std::size_t last = entries_.size() - 1;
    if (slot != last) {
      const Slot& moved = entries_[last];
      order_.erase({moved.entry.log_reward, moved.seq, last});
      order_.insert({moved.entry.log_reward, moved.seq, slot});
      index_[moved.entry.prompt] = slot;
      entries_[slot] = std::move(entries_[last]);
    }
    entries_.pop_back();
  }
  const std::size_t slot = entries_.size();
  const std::uint64_t seq = next_seq_++;
  order_.insert({log_reward, seq, slot});
  index_.emplace(prompt, slot);
  entries_.push_back(Slot{BufferEntry{std::move(prompt), log_reward}, seq});
  return true;
}

std::vector<BufferEntry> ReplayBuffer::sample(Rng& rng, std::size_t n) const {
  std::vector<BufferEntry> out;
  if (entries_.empty()) return out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(entries_[static_cast<std::size_t>(rng.below(entries_.size()))].entry);
  }
  return out;
}

std::vector<BufferEntry> ReplayBuffer::top_fraction(double fraction) const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in (0,1]");
  std::vector<BufferEntry> out;
  if (entries_.empty()) return out;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(entries_.size()))));
  for (auto it = order_.rbegin(); it != order_.rend() && out.size() < k; ++it) {
    out.push_back(entries_[std::get<2>(*it)].entry);
  }
  return out;
}

std::vector<BufferEntry> ReplayBuffer::entries() const {
  std::vector<const Slot*> by_seq;
  for (const auto& s : entries_) by_seq.push_back(&s);
  std::sort(by_seq.begin(), by_seq.end(), [](auto* a, auto* b) { return a->seq < b->seq; });
  std::vector<BufferEntry> out;
  for (const auto* s : by_seq) out.push_back(s->entry);
  return out;
}

double ReplayBuffer::min_log_reward() const {
  if (order_.empty()) throw ConfigError("buffer is empty");
  return std::get<0>(*order_.begin());
}

void ReplayBuffer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write buffer " + path.string());
  for (const auto& e : entries()) {
    out << json{{"prompt", e.prompt}, {"log_reward", e.log_reward}}.dump() << '\n';
  }
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path, std::size_t capacity) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open buffer " + path.string());
  ReplayBuffer buf(capacity);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      buf.insert(j.at("prompt").get<std::string>(), j.at("log_reward").get<double>());
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Training

void GfnConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(on_policy_prob >= 0.0 && on_policy_prob <= 1.0)) {
    throw ConfigError("on_policy_prob must lie in [0,1]");
  }
  if (!(temperature_min > 0.0 && temperature_min <= temperature_max)) {
    throw ConfigError("temperature range must satisfy 0 < min <= max");
  }
  if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
  if (!(learning_rate >= 0.0 && log_z_learning_rate >= 0.0)) {
    throw ConfigError("learning rates must be >= 0");
  }
}

json GfnConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"on_policy_prob", on_policy_prob},
          {"temperature_min", temperature_min},
          {"temperature_max", temperature_max},
          {"buffer_capacity", buffer_capacity},
          {"learning_rate", learning_rate},
          {"log_z_learning_rate", log_z_learning_rate},
          {"weight_decay", weight_decay},
          {"lr_schedule", std::string(optim::to_string(lr_schedule))},
          {"seed", seed}};
}

GfnReport gfn_train(PolicyModel& policy, const RewardFn& log_reward_fn, const GfnConfig& cfg,
                    ReplayBuffer& buffer,
                    const std::function<void(std::size_t, std::size_t, double)>& progress) {
  cfg.validate();
  GfnReport report;
  if (cfg.steps == 0) return report;
  optim::AdamW opt(policy.parameters().size(), {0.9, 0.999, 1e-8, cfg.weight_decay});
  optim::AdamW opt_z(1, {0.9, 0.999, 1e-8, 0.0});
  Rng rng(hash_combine(cfg.seed, 0x6766'6eULL));

  std::vector<std::pair<std::string, double>> batch;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    batch.clear();
    const bool on_policy = buffer.empty() || rng.bernoulli(cfg.on_policy_prob);
    if (on_policy) {
      const double temperature = rng.uniform(cfg.temperature_min, cfg.temperature_max);
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        auto s = policy.sample(rng, temperature);
        const double lr = log_reward_fn(s.text);
        batch.emplace_back(std::move(s.text), lr);
      }
      ++report.on_policy_steps;
    } else {
      for (auto& e : buffer.sample(rng, cfg.batch_size)) {
        batch.emplace_back(std::move(e.prompt), e.log_reward);
      }
      ++report.off_policy_steps;
    }

    const TbLossGrad lg = tb_loss_and_grad(policy, batch);
    report.step_loss.push_back(lg.loss);
    opt.step(policy.mutable_parameters(), lg.grad,
             optim::learning_rate_at(cfg.lr_schedule, cfg.learning_rate, step, cfg.steps));
    double log_z = policy.log_partition();
    const double gz = lg.grad_log_z;
    opt_z.step(std::span(&log_z, 1), std::span(&gz, 1),
               optim::learning_rate_at(cfg.lr_schedule, cfg.log_z_learning_rate, step, cfg.steps));
    policy.set_log_partition(log_z);

    if (on_policy) {
      for (const auto& [prompt, lr] : batch) buffer.insert(prompt, lr);
    }
    if (progress) progress(step + 1, cfg.steps, lg.loss);
  }
  return report;
}

json MleConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"lr_schedule", std::string(optim::to_string(lr_schedule))},
          {"seed", seed}};
}

namespace {

double mean_log_prob(const PolicyModel& policy, std::span<const std::string> prompts) {
  double s = 0.0;
  for (const auto& p : prompts) s += policy.log_prob(p);
  return s / static_cast<double>(prompts.size());
}

}  // namespace

MleReport mle_retrain(PolicyModel& policy, std::span<const std::string> prompts,
                      const MleConfig& cfg) {
  if (prompts.empty()) throw ConfigError("mle_retrain needs at least one prompt");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  MleReport report;
  report.initial_mean_log_prob = mean_log_prob(policy, prompts);

  optim::AdamW opt(policy.parameters().size(), {0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng(hash_combine(cfg.seed, 0x6d6c65ULL));
  std::vector<std::size_t> order(prompts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;
  std::vector<double> grad(policy.parameters().size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double scale = -1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      policy.log_prob_and_grad(prompts[order[cursor++]], scale, grad);
    }
    opt.step(policy.mutable_parameters(), grad,
             optim::learning_rate_at(cfg.lr_schedule, cfg.learning_rate, step, cfg.steps));
  }
  report.final_mean_log_prob = mean_log_prob(policy, prompts);
  return report;
}

std::vector<std::string> sample_prompts(const PolicyModel& policy, std::size_t k,
                                        std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0x73616dULL));
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(policy.sample(rng, 1.0).text);
  return out;
}

double test_reward(const PolicyModel& policy, const backends::GenerationBackend& target,
                   const backends::Scorer& oracle, std::size_t k, std::size_t n_resp,
                   std::uint64_t seed, const backends::GenerationParams& params) {
  if (k < 1 || n_resp < 1) throw ConfigError("test_reward needs k >= 1 and n_resp >= 1");
  const auto prompts = sample_prompts(policy, k, seed);
  double sum = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const std::vector<ChatMessage> messages = {{Role::user, prompts[i]}};
    for (std::size_t j = 0; j < n_resp; ++j) {
      backends::GenerationParams p = params;
      p.seed = hash_combine(hash_combine(seed, i), j);
      sum += oracle.predict(prompts[i], target.generate(messages, p));
    }
  }
  return sum / static_cast<double>(k * n_resp);
}

}  // namespace harmaug::redteam

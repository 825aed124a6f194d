#include "harmaug/augment.hpp"

#include <fstream>
#include <unordered_set>

#include "harmaug/digest.hpp"
#include "harmaug/text.hpp"

namespace harmaug::augment {

using json = nlohmann::json;

namespace {

json params_json(const backends::GenerationParams& p) {
  return {{"temperature", p.temperature},
          {"max_tokens", p.max_tokens},
          {"stop_sequences", p.stop_sequences},
          {"seed", p.seed ? json(*p.seed) : json(nullptr)}};
}

// Stream ids keep per-slot randomness independent of every other slot, so a
// resumed run reproduces an uninterrupted one.
enum class Stream : std::uint64_t { exemplars = 1, instruction = 2, refusal = 3, harmful = 4 };

std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::size_t index, std::size_t attempt) {
  return hash_combine(hash_combine(hash_combine(seed, static_cast<std::uint64_t>(s)), index),
                      attempt);
}

void require_roles(const Roles& r, bool need_instruction, bool need_responses, bool need_teacher) {
  if (need_instruction && !r.instruction_llm) throw ConfigError("instruction_llm is not configured");
  if (need_responses && !r.refusal_llm) throw ConfigError("refusal_llm is not configured");
  if (need_responses && !r.harmful_llm) throw ConfigError("harmful_llm is not configured");
  if (need_teacher && !r.teacher) throw ConfigError("teacher is not configured");
}

/// Generates the instruction for slot `index`, or nullopt if every attempt
/// was filtered.
std::optional<std::string> generate_one(const std::vector<std::string>& exemplar_pool,
                                        std::size_t index, const AugmentConfig& cfg,
                                        const Roles& roles,
                                        std::unordered_set<std::string>& seen,
                                        AugmentReport& report) {
  for (std::size_t attempt = 0; attempt < cfg.max_attempts_per_instruction; ++attempt) {
    Rng rng(stream_seed(cfg.seed, Stream::exemplars, index, attempt));
    std::vector<std::string> exemplars;
    for (std::size_t i : rng.sample_without_replacement(exemplar_pool.size(), cfg.exemplar_k)) {
      exemplars.push_back(exemplar_pool[i]);
    }
    const auto prompt = promptcraft::build_prompt(std::move(exemplars), cfg.directive, cfg.prefix);
    const auto messages = prompt.render();

    backends::GenerationParams params = cfg.instruction_params;
    params.seed = stream_seed(cfg.instruction_params.seed.value_or(cfg.seed), Stream::instruction,
                              index, attempt);
    std::string completion;
    try {
      completion = roles.instruction_llm->generate(messages, params);
    } catch (const std::exception& e) {
      throw RoleError("instruction_llm", e.what());
    }
    ++report.generated;

    if (roles.detector.is_refusal(completion)) {
      ++report.refusals_filtered;
      continue;
    }
    std::string instruction;
    try {
      instruction = promptcraft::extract_instruction(completion, cfg.prefix);
    } catch (const DataError&) {
      continue;
    }
    if (cfg.dedup && !seen.insert(text::normalize_for_dedup(instruction)).second) {
      ++report.duplicates_filtered;
      continue;
    }
    return instruction;
  }
  return std::nullopt;
}

}  // namespace

void AugmentConfig::validate() const {
  if (n_instructions < 1) throw ConfigError("n_instructions must be >= 1");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
  if (exemplar_k < 1) throw ConfigError("exemplar_k must be >= 1");
  if (max_attempts_per_instruction < 1) throw ConfigError("max_attempts_per_instruction must be >= 1");
  if (text::trim(directive).empty()) throw ConfigError("directive must be non-empty");
  instruction_params.validate();
  response_params.validate();
}

json AugmentConfig::to_json() const {
  return {{"n_instructions", n_instructions},
          {"tau", tau},
          {"exemplar_k", exemplar_k},
          {"max_attempts_per_instruction", max_attempts_per_instruction},
          {"dedup", dedup},
          {"seed", seed},
          {"directive", directive},
          {"prefix", prefix},
          {"instruction_params", params_json(instruction_params)},
          {"response_params", params_json(response_params)}};
}

json AugmentReport::to_json() const {
  return {{"requested", requested},
          {"generated", generated},
          {"refusals_filtered", refusals_filtered},
          {"duplicates_filtered", duplicates_filtered},
          {"pairs_emitted", pairs_emitted},
          {"label_counts", {{"0", label_counts.at(0)}, {"1", label_counts.at(1)}}}};
}

AugmentReport AugmentReport::from_json(const json& j) {
  AugmentReport r;
  r.requested = j.at("requested").get<std::size_t>();
  r.generated = j.at("generated").get<std::size_t>();
  r.refusals_filtered = j.at("refusals_filtered").get<std::size_t>();
  r.duplicates_filtered = j.at("duplicates_filtered").get<std::size_t>();
  r.pairs_emitted = j.at("pairs_emitted").get<std::size_t>();
  r.label_counts[0] = j.at("label_counts").at("0").get<std::size_t>();
  r.label_counts[1] = j.at("label_counts").at("1").get<std::size_t>();
  return r;
}

GenerationExhausted::GenerationExhausted(std::size_t accepted, std::size_t index)
    : Error("attempts exhausted for instruction " + std::to_string(index) + " after " +
            std::to_string(accepted) + " accepted"),
      accepted_(accepted) {}

std::vector<std::string> harmful_exemplar_pool(const data::Dataset& pool) {
  std::vector<std::string> out;
  for (const auto& e : pool) {
    if (e.label == 1) out.push_back(e.instruction);
  }
  return out;
}

std::vector<std::string> generate_instructions(const data::Dataset& pool, const AugmentConfig& cfg,
                                               const Roles& roles, AugmentReport* report) {
  cfg.validate();
  require_roles(roles, true, false, false);
  const auto exemplar_pool = harmful_exemplar_pool(pool);
  if (exemplar_pool.size() < cfg.exemplar_k) {
    throw ConfigError("pool has " + std::to_string(exemplar_pool.size()) +
                      " harmful examples, fewer than exemplar_k");
  }
  AugmentReport local;
  AugmentReport& rep = report ? *report : local;
  rep.requested += cfg.n_instructions;
  std::unordered_set<std::string> seen;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < cfg.n_instructions; ++i) {
    auto instr = generate_one(exemplar_pool, i, cfg, roles, seen, rep);
    if (!instr) throw GenerationExhausted(out.size(), i);
    out.push_back(std::move(*instr));
  }
  return out;
}

std::pair<std::string, std::string> generate_response_pair(const std::string& instruction,
                                                           std::size_t index,
                                                           const AugmentConfig& cfg,
                                                           const Roles& roles) {
  require_roles(roles, false, true, false);
  if (text::trim(instruction).empty()) throw ConfigError("instruction must be non-empty");
  const std::vector<ChatMessage> messages = {{Role::user, instruction}};
  const std::uint64_t base = cfg.response_params.seed.value_or(cfg.seed);

  auto run = [&](const backends::GenerationBackend& backend, Stream s, const char* role) {
    backends::GenerationParams params = cfg.response_params;
    params.seed = stream_seed(base, s, index, 0);
    try {
      return backend.generate(messages, params);
    } catch (const std::exception& e) {
      throw RoleError(role, e.what());
    }
  };
  std::string refusal = run(*roles.refusal_llm, Stream::refusal, "refusal_llm");
  std::string harmful = run(*roles.harmful_llm, Stream::harmful, "harmful_llm");
  return {std::move(refusal), std::move(harmful)};
}

int threshold_label(double teacher_score, double tau) { return teacher_score > tau ? 1 : 0; }

LabeledScore label_pair(std::string_view instruction, std::string_view response,
                        const backends::TeacherScorer& teacher, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
  double s;
  try {
    s = teacher.score(instruction, response);
  } catch (const std::exception& e) {
    throw RoleError("teacher", e.what());
  }
  if (!(s >= 0.0 && s <= 1.0)) throw RoleError("teacher", "score outside [0,1]");
  return {threshold_label(s, tau), s};
}

namespace {

struct Checkpoint {
  std::filesystem::path dir;
  std::string config_hash;

  std::filesystem::path records() const { return dir / "records.jsonl"; }
  std::filesystem::path progress() const { return dir / "progress.json"; }

  void write_progress(std::size_t completed, const AugmentReport& report) const {
    json indices = json::array();
    for (std::size_t i = 0; i < completed; ++i) indices.push_back(i);
    const json j = {{"config_hash", config_hash},
                    {"completed", completed},
                    {"completed_indices", std::move(indices)},
                    {"report", report.to_json()}};
    const auto tmp = dir / "progress.json.tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write " + tmp.string());
      out << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, progress());
  }
};

}  // namespace

AugmentResult run_harmaug(const data::Dataset& pool, const AugmentConfig& cfg, const Roles& roles,
                          const std::optional<std::filesystem::path>& checkpoint_dir,
                          const ProgressFn& progress) {
  cfg.validate();
  require_roles(roles, true, true, true);
  const auto exemplar_pool = harmful_exemplar_pool(pool);
  if (exemplar_pool.size() < cfg.exemplar_k) {
    throw ConfigError("pool has " + std::to_string(exemplar_pool.size()) +
                      " harmful examples, fewer than exemplar_k");
  }

  AugmentResult result;
  result.dataset.set_name("harmaug");
  AugmentReport& report = result.report;
  std::unordered_set<std::string> seen;
  std::size_t start = 0;

  std::optional<Checkpoint> ckpt;
  if (checkpoint_dir) {
    ckpt = Checkpoint{*checkpoint_dir, sha256_hex(cfg.to_json().dump())};
    std::filesystem::create_directories(ckpt->dir);
    if (std::filesystem::exists(ckpt->progress())) {
      std::ifstream in(ckpt->progress());
      const json p = json::parse(in);
      if (p.at("config_hash").get<std::string>() != ckpt->config_hash) {
        throw ConfigError("checkpoint in " + ckpt->dir.string() +
                          " was written with a different configuration");
      }
      start = p.at("completed").get<std::size_t>();
      report = AugmentReport::from_json(p.at("report"));
      const auto saved = data::load_dataset(ckpt->records());
      if (saved.size() < 2 * start) throw DataError("checkpoint records are truncated");
      for (std::size_t i = 0; i < 2 * start; ++i) result.dataset.push_back(saved[i]);
      for (std::size_t i = 0; i < 2 * start; i += 2) {
        seen.insert(text::normalize_for_dedup(saved[i].instruction));
      }
      // Drop any half-written tail beyond the recorded progress.
      data::save_dataset(result.dataset, ckpt->records());
    } else {
      report.requested = cfg.n_instructions;
      data::save_dataset(result.dataset, ckpt->records());
      ckpt->write_progress(0, report);
    }
  } else {
    report.requested = cfg.n_instructions;
  }

  for (std::size_t i = start; i < cfg.n_instructions; ++i) {
    auto instruction = generate_one(exemplar_pool, i, cfg, roles, seen, report);
    if (!instruction) throw GenerationExhausted(i, i);
    auto [refusal, harmful] = generate_response_pair(*instruction, i, cfg, roles);

    std::vector<data::Example> pair;
    for (auto* response : {&refusal, &harmful}) {
      const LabeledScore ls = label_pair(*instruction, *response, *roles.teacher, cfg.tau);
      pair.push_back({*instruction, *response, ls.label, ls.teacher_score, data::Source::harmaug});
    }
    for (auto& e : pair) {
      ++report.label_counts[e.label];
      ++report.pairs_emitted;
      result.dataset.push_back(e);
    }
    if (ckpt) {
      std::ofstream out(ckpt->records(), std::ios::binary | std::ios::app);
      for (const auto& e : pair) out << data::to_json_line(e) << '\n';
      out.flush();
      if (!out) throw Error("cannot append to " + ckpt->records().string());
      ckpt->write_progress(i + 1, report);
    }
    if (progress) progress(i + 1, cfg.n_instructions);
  }
  return result;
}

PrefixAblation prefix_ablation(const data::Dataset& pool, const AugmentConfig& cfg,
                               const backends::GenerationBackend& llm,
                               const promptcraft::RefusalDetector& detector, std::size_t samples) {
  cfg.validate();
  if (samples == 0) throw ConfigError("prefix ablation needs at least one sample");
  const auto exemplar_pool = harmful_exemplar_pool(pool);
  if (exemplar_pool.size() < cfg.exemplar_k) {
    throw ConfigError("pool has fewer harmful examples than exemplar_k");
  }
  PrefixAblation out;
  out.samples = samples;
  for (std::size_t i = 0; i < samples; ++i) {
    Rng rng(stream_seed(cfg.seed, Stream::exemplars, i, 0));
    std::vector<std::string> exemplars;
    for (std::size_t j : rng.sample_without_replacement(exemplar_pool.size(), cfg.exemplar_k)) {
      exemplars.push_back(exemplar_pool[j]);
    }
    backends::GenerationParams params = cfg.instruction_params;
    params.seed = stream_seed(cfg.instruction_params.seed.value_or(cfg.seed), Stream::instruction,
                              i, 0);
    const auto with = promptcraft::build_prompt(exemplars, cfg.directive, cfg.prefix);
    const auto without = promptcraft::build_prompt(exemplars, cfg.directive, "");
    out.with_completions.push_back(llm.generate(with.render(), params));
    out.without_completions.push_back(llm.generate(without.render(), params));
  }
  out.with_prefix = promptcraft::success_rate(out.with_completions, detector);
  out.without_prefix = promptcraft::success_rate(out.without_completions, detector);
  return out;
}

}  // namespace harmaug::augment

#include "harmaug/cli/dispatch.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <unordered_set>

#include "harmaug/augment.hpp"
#include "harmaug/cli/config.hpp"
#include "harmaug/cli/log.hpp"
#include "harmaug/cli/manifest.hpp"
#include "harmaug/dataset.hpp"
#include "harmaug/distill.hpp"
#include "harmaug/evalx.hpp"
#include "harmaug/http_backend.hpp"
#include "harmaug/redteam.hpp"
#include "harmaug/text.hpp"

namespace harmaug::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Shared plumbing

struct Context {
  json cfg;
  Logger log;
  std::ostream& out;
  std::shared_ptr<backends::ConcurrencyLimiter> limiter;

  std::uint64_t seed() const { return cfg.at("seed").get<std::uint64_t>(); }
  std::size_t progress_every() const {
    return std::max<std::size_t>(1, cfg.at("logging").at("progress_every").get<std::size_t>());
  }
  promptcraft::RefusalDetector detector() const {
    return promptcraft::RefusalDetector(
        cfg.at("refusal").at("patterns").get<std::vector<std::string>>());
  }
};

std::unique_ptr<backends::GenerationBackend> make_generator(const Context& ctx,
                                                            const std::string& role) {
  const json& s = ctx.cfg.at("backends").at(role);
  const auto kind = s.at("kind").get<std::string>();
  if (kind == "mock") {
    return std::make_unique<backends::MockGenerationBackend>(
        mock_vocab_config(s, hash_combine(ctx.seed(), fnv1a(role))), role);
  }
  if (kind == "http") {
    auto client = std::make_shared<backends::ChatCompletionsClient>(endpoint_config(s), nullptr,
                                                                    ctx.limiter);
    return std::make_unique<backends::HttpGenerationBackend>(std::move(client));
  }
  throw ConfigError("backends." + role + ".kind must be mock or http");
}

std::unique_ptr<backends::TeacherScorer> make_teacher(const Context& ctx) {
  const json& t = ctx.cfg.at("teacher");
  const auto kind = t.at("kind").get<std::string>();
  if (kind == "mock") {
    return std::make_unique<backends::MockTeacher>(mock_lexicon_config(t, ctx.seed()),
                                                   ctx.detector());
  }
  if (kind == "http") {
    auto client = std::make_shared<backends::ChatCompletionsClient>(endpoint_config(t), nullptr,
                                                                    ctx.limiter);
    return std::make_unique<backends::HttpTeacherScorer>(std::move(client));
  }
  throw ConfigError("teacher.kind must be mock or http");
}

std::vector<json> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      if (!j.is_object() || !j.contains("instruction") || !j["instruction"].is_string()) {
        throw DataError("missing field instruction");
      }
      out.push_back(std::move(j));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string jsonl(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Writes to `path`, or to the context's stdout when no path was given.
void emit(Context& ctx, const std::optional<fs::path>& path, const std::string& content) {
  if (!path) {
    ctx.out << content;
    return;
  }
  std::ofstream out(*path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path->string());
  out << content;
}

template <typename T>
void maybe_set(json& cfg, std::string_view key, const std::optional<T>& v) {
  if (v) set_value(cfg, key, json(*v));
}

std::vector<std::string> distinct_instructions(const data::Dataset& d,
                                               std::unordered_set<std::string>& seen) {
  std::vector<std::string> out;
  for (const auto& e : d) {
    if (seen.insert(e.instruction).second) out.push_back(e.instruction);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand options

struct GlobalOpts {
  std::optional<std::string> config;
  std::optional<long long> seed;
  std::optional<std::string> log_level;
};

struct GenerateOpts {
  std::string pool, out;
  std::optional<std::string> report;
  std::optional<long long> n, exemplars;
  std::optional<std::string> backend;
  bool no_prefix = false;
  std::optional<long long> ablation;
};

struct RespondOpts {
  std::string in, out;
  std::optional<std::string> backend;
};

struct LabelOpts {
  std::string in;
  std::optional<std::string> out;
  std::optional<double> tau;
  std::optional<std::string> teacher;
};

struct AugmentOpts {
  std::string pool, out;
  std::optional<std::string> resume, report, backend, teacher;
  std::optional<long long> n, exemplars;
  std::optional<double> tau;
};

struct TrainOpts {
  std::vector<std::string> data, synth;
  std::string out;
  std::optional<std::string> init, fresh;
  std::optional<double> lambda, temp, lr, weight_decay, mix;
  std::optional<long long> epochs, batch_size, steps;
};

struct EvalOpts {
  std::string model, data;
  std::optional<double> threshold;
  std::optional<std::string> report;
};

struct RedteamOpts {
  std::string policy = "tabular";
  std::string guard;
  std::optional<std::string> target, out, buffer, warmstart, prompts, report, mle_out, teacher;
  std::optional<double> beta, gamma;
  std::optional<long long> steps, batch_size, test_k;
};

struct ClusterOpts {
  std::string data;
  std::optional<std::string> with, out;
  std::optional<double> eps;
  std::optional<long long> min_pts;
};

struct ReportOpts {
  std::vector<std::string> data, metrics;
  std::optional<std::string> out;
  bool diversity = false;
};

// ---------------------------------------------------------------------------
// Subcommands

int run_generate(Context& ctx, const GenerateOpts& o) {
  maybe_set(ctx.cfg, "augment.n", o.n);
  maybe_set(ctx.cfg, "augment.exemplars", o.exemplars);
  maybe_set(ctx.cfg, "backends.instruction_llm.kind", o.backend);
  if (o.no_prefix) set_value(ctx.cfg, "augment.prefix", "");

  const auto pool = data::load_dataset(o.pool);
  auto cfg = augment_config(ctx.cfg);
  const auto llm = make_generator(ctx, "instruction_llm");
  const auto detector = ctx.detector();

  json report;
  if (o.ablation) {
    if (*o.ablation < 1) throw UsageError("--ablation needs a positive sample count");
    const auto ab = augment::prefix_ablation(pool, cfg, *llm, detector,
                                             static_cast<std::size_t>(*o.ablation));
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < ab.samples; ++i) {
      lines.push_back(jsonl(json{{"arm", "with_prefix"}, {"completion", ab.with_completions[i]}}));
      lines.push_back(
          jsonl(json{{"arm", "without_prefix"}, {"completion", ab.without_completions[i]}}));
    }
    write_lines(o.out, lines);
    report = {{"samples", ab.samples},
              {"success_rate_with_prefix", ab.with_prefix},
              {"success_rate_without_prefix", ab.without_prefix}};
  } else {
    augment::Roles roles;
    roles.instruction_llm = llm.get();
    roles.detector = detector;
    augment::AugmentReport rep;
    const auto instructions = augment::generate_instructions(pool, cfg, roles, &rep);
    std::vector<std::string> lines;
    for (const auto& s : instructions) lines.push_back(jsonl(json{{"instruction", s}}));
    write_lines(o.out, lines);
    report = rep.to_json();
    report["success_rate"] =
        rep.generated == 0 ? 0.0
                           : 1.0 - static_cast<double>(rep.refusals_filtered) /
                                       static_cast<double>(rep.generated);
  }
  std::vector<fs::path> outputs = {o.out};
  if (o.report) {
    write_json(*o.report, report);
    outputs.emplace_back(*o.report);
  }
  ctx.log.info("generate.done", report);
  write_manifest(o.out, "generate", ctx.cfg, {o.pool}, outputs, report);
  return kExitOk;
}

int run_respond(Context& ctx, const RespondOpts& o) {
  if (o.backend) {
    set_value(ctx.cfg, "backends.refusal_llm.kind", *o.backend);
    set_value(ctx.cfg, "backends.harmful_llm.kind", *o.backend);
  }
  const auto records = read_records(o.in);
  const auto cfg = augment_config(ctx.cfg);
  const auto refusal = make_generator(ctx, "refusal_llm");
  const auto harmful = make_generator(ctx, "harmful_llm");
  augment::Roles roles;
  roles.refusal_llm = refusal.get();
  roles.harmful_llm = harmful.get();

  std::vector<std::string> lines;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto instr = records[i]["instruction"].get<std::string>();
    const auto [r, h] = augment::generate_response_pair(instr, i, cfg, roles);
    lines.push_back(jsonl(json{{"instruction", instr}, {"response", r}, {"role", "refusal_llm"}}));
    lines.push_back(jsonl(json{{"instruction", instr}, {"response", h}, {"role", "harmful_llm"}}));
    if ((i + 1) % ctx.progress_every() == 0) {
      ctx.log.info("respond.progress", {{"done", i + 1}, {"total", records.size()}});
    }
  }
  write_lines(o.out, lines);
  ctx.log.info("respond.done", {{"pairs", lines.size()}});
  write_manifest(o.out, "respond", ctx.cfg, {o.in}, {o.out});
  return kExitOk;
}

int run_label(Context& ctx, const LabelOpts& o) {
  maybe_set(ctx.cfg, "augment.tau", o.tau);
  maybe_set(ctx.cfg, "teacher.kind", o.teacher);
  const double tau = ctx.cfg.at("augment").at("tau").get<double>();
  const auto teacher = make_teacher(ctx);
  const auto records = read_records(o.in);

  std::string content;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    data::Example e;
    e.instruction = r["instruction"].get<std::string>();
    e.response = r.value("response", std::string());
    e.source = data::parse_source(r.value("source", std::string("harmaug")));
    const auto ls = augment::label_pair(e.instruction, e.response, *teacher, tau);
    e.label = ls.label;
    e.teacher_score = ls.teacher_score;
    data::validate(e);
    positives += static_cast<std::size_t>(e.label);
    content += data::to_json_line(e);
    content += '\n';
  }
  const std::optional<fs::path> out = o.out ? std::optional<fs::path>(*o.out) : std::nullopt;
  emit(ctx, out, content);
  ctx.log.info("label.done", {{"records", records.size()}, {"harmful", positives}, {"tau", tau}});
  if (out) write_manifest(*out, "label", ctx.cfg, {o.in}, {*out});
  return kExitOk;
}

int run_augment(Context& ctx, const AugmentOpts& o) {
  maybe_set(ctx.cfg, "augment.n", o.n);
  maybe_set(ctx.cfg, "augment.tau", o.tau);
  maybe_set(ctx.cfg, "augment.exemplars", o.exemplars);
  maybe_set(ctx.cfg, "teacher.kind", o.teacher);
  if (o.backend) {
    for (const char* role : {"instruction_llm", "refusal_llm", "harmful_llm"}) {
      set_value(ctx.cfg, std::string("backends.") + role + ".kind", *o.backend);
    }
  }
  const auto pool = data::load_dataset(o.pool);
  const auto cfg = augment_config(ctx.cfg);
  const auto instruction = make_generator(ctx, "instruction_llm");
  const auto refusal = make_generator(ctx, "refusal_llm");
  const auto harmful = make_generator(ctx, "harmful_llm");
  const auto teacher = make_teacher(ctx);
  augment::Roles roles{instruction.get(), refusal.get(), harmful.get(), teacher.get(),
                       ctx.detector()};

  const std::size_t every = ctx.progress_every();
  auto progress = [&](std::size_t done, std::size_t total) {
    if (done % every == 0 || done == total) {
      ctx.log.info("augment.progress", {{"done", done}, {"total", total}});
    }
  };
  std::optional<fs::path> ckpt;
  if (o.resume) ckpt = fs::path(*o.resume);
  auto result = augment::run_harmaug(pool, cfg, roles, ckpt, progress);
  result.dataset.set_name(fs::path(o.out).stem().string());
  data::save_dataset(result.dataset, o.out);

  const json report = result.report.to_json();
  std::vector<fs::path> outputs = {o.out};
  if (o.report) {
    write_json(*o.report, report);
    outputs.emplace_back(*o.report);
  }
  ctx.log.info("augment.done", report);
  write_manifest(o.out, "augment", ctx.cfg, {o.pool}, outputs, report);
  return kExitOk;
}

int run_train(Context& ctx, const TrainOpts& o) {
  maybe_set(ctx.cfg, "train.lambda", o.lambda);
  maybe_set(ctx.cfg, "train.temperature", o.temp);
  maybe_set(ctx.cfg, "train.weight_decay", o.weight_decay);
  maybe_set(ctx.cfg, "train.epochs", o.epochs);
  maybe_set(ctx.cfg, "train.mix_ratio", o.mix);
  maybe_set(ctx.cfg, "train.continual_steps", o.steps);
  const bool continual = o.fresh.has_value();
  if (continual) {
    maybe_set(ctx.cfg, "train.continual_lr", o.lr);
    maybe_set(ctx.cfg, "train.continual_batch_size", o.batch_size);
  } else {
    maybe_set(ctx.cfg, "train.lr", o.lr);
    maybe_set(ctx.cfg, "train.batch_size", o.batch_size);
  }
  if (continual && !o.init) throw UsageError("--new requires --init with the model to fine-tune");

  data::Dataset train_set("train");
  std::vector<fs::path> inputs;
  for (const auto& p : o.data) {
    train_set.append(data::load_dataset(p));
    inputs.emplace_back(p);
  }
  for (const auto& p : o.synth) {
    train_set.append(data::load_dataset(p));
    inputs.emplace_back(p);
  }

  const json& tc = ctx.cfg.at("train");
  distill::ReferenceScorer scorer =
      o.init ? distill::ReferenceScorer::load(*o.init)
             : distill::ReferenceScorer(tc.at("feature_dim").get<std::size_t>(),
                                        tc.at("hash_seed").get<std::uint64_t>());
  if (o.init) inputs.emplace_back(*o.init);

  distill::KDConfig kd = kd_config(ctx.cfg);
  json metrics;
  if (continual) {
    const auto preset = continual_preset(ctx.cfg);
    kd.learning_rate = preset.learning_rate;
    kd.batch_size = preset.batch_size;
    const auto fresh = data::load_dataset(*o.fresh);
    inputs.emplace_back(*o.fresh);
    const auto rep = distill::continual_finetune(scorer, train_set, fresh, kd, preset.steps,
                                                 preset.mix_ratio);
    metrics = {{"mode", "continual"},
               {"steps", rep.steps},
               {"mean_loss", rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.front()},
               {"loss_old", distill::mean_loss(scorer, train_set, kd)},
               {"loss_new", distill::mean_loss(scorer, fresh, kd)}};
  } else {
    const auto rep = distill::train(scorer, train_set, kd);
    metrics = {{"mode", "train"}, {"steps", rep.steps}, {"epoch_loss", rep.epoch_loss}};
    if (train_set.count_label(1) > 0) {
      metrics["train_metrics"] = evalx::evaluate(scorer, train_set, 0.5).to_json();
    }
  }
  scorer.save(o.out, ctx.cfg.at("train"), metrics);
  ctx.log.info("train.done", metrics);
  write_manifest(o.out, "train", ctx.cfg, inputs, {o.out}, metrics);
  return kExitOk;
}

int run_eval(Context& ctx, const EvalOpts& o) {
  maybe_set(ctx.cfg, "eval.threshold", o.threshold);
  const double threshold = ctx.cfg.at("eval").at("threshold").get<double>();
  const auto scorer = distill::ReferenceScorer::load(o.model);
  const auto d = data::load_dataset(o.data);
  const auto report = evalx::evaluate(scorer, d, threshold).to_json();
  const std::optional<fs::path> out =
      o.report ? std::optional<fs::path>(*o.report) : std::nullopt;
  emit(ctx, out, report.dump(2) + "\n");
  ctx.log.info("eval.done", report);
  if (out) write_manifest(*out, "eval", ctx.cfg, {o.model, o.data}, {*out});
  return kExitOk;
}

int run_redteam(Context& ctx, const RedteamOpts& o) {
  maybe_set(ctx.cfg, "redteam.beta", o.beta);
  maybe_set(ctx.cfg, "redteam.gamma", o.gamma);
  maybe_set(ctx.cfg, "redteam.steps", o.steps);
  maybe_set(ctx.cfg, "redteam.batch_size", o.batch_size);
  maybe_set(ctx.cfg, "redteam.test_k", o.test_k);
  maybe_set(ctx.cfg, "backends.target.kind", o.target);
  maybe_set(ctx.cfg, "teacher.kind", o.teacher);

  const auto spec = reward_spec(ctx.cfg);
  const auto guard = distill::ReferenceScorer::load(o.guard);
  const auto target = make_generator(ctx, "target");
  const std::uint64_t seed = ctx.seed();
  const json& rc = ctx.cfg.at("redteam");
  const std::size_t capacity = rc.at("buffer_capacity").get<std::size_t>();
  std::vector<fs::path> inputs = {o.guard};

  auto reward_of = [&](const std::string& prompt, double ref_log_prob) {
    if (spec.form == redteam::RewardForm::prompt_only) {
      return redteam::log_reward_prompt_only(prompt, guard.predict(prompt, ""), ref_log_prob,
                                             spec);
    }
    return redteam::log_reward(prompt, *target, guard, ref_log_prob, spec,
                               hash_combine(seed, fnv1a(prompt)));
  };

  if (o.policy == "external") {
    // Prompts come from an out-of-process policy; score them with the
    // student and write the buffer for that trainer to consume.
    if (!o.prompts || !o.buffer) throw UsageError("--policy external needs --prompts and --buffer");
    const auto records = read_records(*o.prompts);
    inputs.emplace_back(*o.prompts);
    redteam::ReplayBuffer buffer(capacity);
    for (const auto& r : records) {
      const auto prompt = r["instruction"].get<std::string>();
      buffer.insert(prompt, reward_of(prompt, r.value("ref_log_prob", 0.0)));
    }
    buffer.save(*o.buffer);
    ctx.log.info("redteam.scored", {{"prompts", records.size()}, {"buffer", buffer.size()}});
    write_manifest(*o.buffer, "redteam", ctx.cfg, inputs, {*o.buffer});
    return kExitOk;
  }
  if (o.policy != "tabular") throw UsageError("--policy must be tabular or external");
  if (!o.out) throw UsageError("--policy tabular needs --out");

  redteam::TabularPolicy policy(rc.at("vocab").get<std::vector<std::string>>(),
                                rc.at("max_len").get<std::size_t>());
  if (o.warmstart) {
    std::vector<std::string> prompts;
    for (const auto& r : read_records(*o.warmstart)) prompts.push_back(r["instruction"]);
    inputs.emplace_back(*o.warmstart);
    const auto rep = redteam::mle_retrain(policy, prompts, mle_config(ctx.cfg));
    ctx.log.info("redteam.warmstart", {{"initial_mean_log_prob", rep.initial_mean_log_prob},
                                       {"final_mean_log_prob", rep.final_mean_log_prob}});
  }
  const redteam::TabularPolicy reference = policy;

  const auto gcfg = gfn_config(ctx.cfg);
  redteam::ReplayBuffer buffer(gcfg.buffer_capacity);
  const std::size_t every = ctx.progress_every();
  const auto rep = redteam::gfn_train(
      policy, [&](const std::string& p) { return reward_of(p, reference.log_prob(p)); }, gcfg,
      buffer, [&](std::size_t step, std::size_t total, double loss) {
        if (step % every == 0 || step == total) {
          ctx.log.info("redteam.progress", {{"step", step}, {"total", total}, {"tb_loss", loss}});
        }
      });
  policy.save(*o.out);
  std::vector<fs::path> outputs = {*o.out};
  if (o.buffer) {
    buffer.save(*o.buffer);
    outputs.emplace_back(*o.buffer);
  }

  json summary = {{"on_policy_steps", rep.on_policy_steps},
                  {"off_policy_steps", rep.off_policy_steps},
                  {"final_tb_loss", rep.step_loss.empty() ? 0.0 : rep.step_loss.back()},
                  {"log_z", policy.log_partition()},
                  {"buffer_size", buffer.size()}};

  if (o.mle_out && !buffer.empty()) {
    std::vector<std::string> high;
    for (const auto& e : buffer.top_fraction(rc.at("top_fraction").get<double>())) {
      high.push_back(e.prompt);
    }
    redteam::TabularPolicy retrained = reference;
    const auto mle = redteam::mle_retrain(retrained, high, mle_config(ctx.cfg));
    retrained.save(*o.mle_out);
    outputs.emplace_back(*o.mle_out);
    summary["mle"] = {{"prompts", high.size()},
                      {"initial_mean_log_prob", mle.initial_mean_log_prob},
                      {"final_mean_log_prob", mle.final_mean_log_prob}};
  }

  if (o.report) {
    const auto oracle = make_teacher(ctx);
    const auto k = rc.at("test_k").get<std::size_t>();
    const auto n_resp = rc.at("test_n_resp").get<std::size_t>();
    summary["test_reward"] = redteam::test_reward(policy, *target, *oracle, k, n_resp, seed);
    const auto prompts = redteam::sample_prompts(policy, k, seed);
    if (prompts.size() >= 2) {
      const backends::HashedNgramEmbedder embedder(
          ctx.cfg.at("cluster").at("dimension").get<std::size_t>());
      summary["diversity"] = evalx::diversity(prompts, embedder);
    }
    write_json(*o.report, summary);
    outputs.emplace_back(*o.report);
  }
  ctx.log.info("redteam.done", summary);
  write_manifest(*o.out, "redteam", ctx.cfg, inputs, outputs, summary);
  return kExitOk;
}

int run_cluster(Context& ctx, const ClusterOpts& o) {
  maybe_set(ctx.cfg, "cluster.eps", o.eps);
  maybe_set(ctx.cfg, "cluster.min_pts", o.min_pts);
  const json& cc = ctx.cfg.at("cluster");
  const backends::HashedNgramEmbedder embedder(cc.at("dimension").get<std::size_t>());

  std::unordered_set<std::string> seen;
  auto texts = distinct_instructions(data::load_dataset(o.data), seen);
  const std::size_t base_count = texts.size();
  std::vector<fs::path> inputs = {o.data};
  if (o.with) {
    auto more = distinct_instructions(data::load_dataset(*o.with), seen);
    texts.insert(texts.end(), more.begin(), more.end());
    inputs.emplace_back(*o.with);
  }
  std::vector<std::vector<double>> points;
  points.reserve(texts.size());
  for (const auto& t : texts) points.push_back(embedder.embed(t));
  const auto report = evalx::dbscan(points, cc.at("eps").get<double>(),
                                    cc.at("min_pts").get<std::size_t>());
  json j = report.to_json();
  j["n_points"] = texts.size();
  if (o.with) {
    const auto base = evalx::dbscan(std::span(points).first(base_count),
                                    cc.at("eps").get<double>(), cc.at("min_pts").get<std::size_t>());
    j["base_n_clusters"] = base.n_clusters;
    j["base_n_points"] = base_count;
  }
  const std::optional<fs::path> out = o.out ? std::optional<fs::path>(*o.out) : std::nullopt;
  emit(ctx, out, j.dump() + "\n");
  ctx.log.info("cluster.done", {{"n_clusters", report.n_clusters}, {"n_noise", report.n_noise}});
  if (out) write_manifest(*out, "cluster", ctx.cfg, inputs, {*out});
  return kExitOk;
}

int run_report(Context& ctx, const ReportOpts& o) {
  if (o.data.empty() == o.metrics.empty()) {
    throw UsageError("report needs either --data or --metrics");
  }
  const std::optional<fs::path> out = o.out ? std::optional<fs::path>(*o.out) : std::nullopt;
  std::vector<fs::path> inputs;
  if (!o.metrics.empty()) {
    std::ostringstream csv;
    csv << "name,precision,recall,f1,auprc,threshold,n,positives\n";
    csv.precision(6);
    for (const auto& p : o.metrics) {
      std::ifstream in(p);
      if (!in) throw DataError("cannot open " + p);
      const auto m = evalx::MetricsReport::from_json(json::parse(in));
      csv << fs::path(p).stem().string() << ',' << m.precision << ',' << m.recall << ',' << m.f1
          << ',' << m.auprc << ',' << m.threshold << ',' << m.n << ',' << m.positives << '\n';
      inputs.emplace_back(p);
    }
    emit(ctx, out, csv.str());
  } else {
    json stats = json::object();
    for (const auto& p : o.data) {
      const auto d = data::load_dataset(p);
      std::map<std::string, std::size_t> sources;
      std::size_t scored = 0;
      double score_sum = 0.0;
      for (const auto& e : d) {
        ++sources[std::string(data::to_string(e.source))];
        if (e.teacher_score) {
          ++scored;
          score_sum += *e.teacher_score;
        }
      }
      json s = {{"n", d.size()},
                {"label_counts", {{"0", d.count_label(0)}, {"1", d.count_label(1)}}},
                {"sources", sources},
                {"with_teacher_score", scored},
                {"mean_teacher_score", scored ? score_sum / static_cast<double>(scored) : 0.0}};
      if (o.diversity) {
        std::unordered_set<std::string> seen;
        const auto texts = distinct_instructions(d, seen);
        if (texts.size() >= 2) {
          const backends::HashedNgramEmbedder embedder(
              ctx.cfg.at("cluster").at("dimension").get<std::size_t>());
          s["diversity"] = evalx::diversity(texts, embedder);
        }
      }
      stats[fs::path(p).stem().string()] = std::move(s);
      inputs.emplace_back(p);
    }
    emit(ctx, out, stats.dump(2) + "\n");
  }
  if (out) write_manifest(*out, "report", ctx.cfg, inputs, {*out});
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"harmaug: safety-guard distillation with synthetic harmful data", "harmaug"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config, "TOML-style run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed (overrides the config file)");
  app.add_option("--log-level", g.log_level, "debug|info|warn|error");

  GenerateOpts gen;
  auto* c_gen = app.add_subcommand("generate", "Sample harmful instructions with the prefix attack");
  c_gen->add_option("--pool", gen.pool, "Labeled JSONL supplying exemplars")->required();
  c_gen->add_option("--out", gen.out, "Output JSONL of instructions")->required();
  c_gen->add_option("--n", gen.n);
  c_gen->add_option("--exemplars", gen.exemplars);
  c_gen->add_option("--backend", gen.backend, "mock|http");
  c_gen->add_option("--report", gen.report);
  c_gen->add_flag("--no-prefix", gen.no_prefix, "Drop the affirmative prefix");
  c_gen->add_option("--ablation", gen.ablation,
                    "Sample N prompts with and without the prefix and report success rates");

  RespondOpts resp;
  auto* c_resp = app.add_subcommand("respond", "Generate refusal and harmful responses");
  c_resp->add_option("--in", resp.in)->required();
  c_resp->add_option("--out", resp.out)->required();
  c_resp->add_option("--backend", resp.backend, "mock|http");

  LabelOpts lab;
  auto* c_lab = app.add_subcommand("label", "Label instruction/response pairs with the teacher");
  c_lab->add_option("--in", lab.in)->required();
  c_lab->add_option("--out", lab.out);
  c_lab->add_option("--tau", lab.tau);
  c_lab->add_option("--teacher", lab.teacher, "mock|http");

  AugmentOpts aug;
  auto* c_aug = app.add_subcommand("augment", "Run the full augmentation pipeline");
  c_aug->add_option("--pool", aug.pool)->required();
  c_aug->add_option("--out", aug.out)->required();
  c_aug->add_option("--n", aug.n);
  c_aug->add_option("--tau", aug.tau);
  c_aug->add_option("--exemplars", aug.exemplars);
  c_aug->add_option("--resume", aug.resume, "Checkpoint directory");
  c_aug->add_option("--report", aug.report);
  c_aug->add_option("--backend", aug.backend, "mock|http for all generation roles");
  c_aug->add_option("--teacher", aug.teacher, "mock|http");

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "Distill the teacher labels into the reference scorer");
  c_tr->add_option("--data", tr.data)->required();
  c_tr->add_option("--synth", tr.synth);
  c_tr->add_option("--out", tr.out)->required();
  c_tr->add_option("--init", tr.init, "Start from an existing checkpoint");
  c_tr->add_option("--new", tr.fresh, "Continual fine-tuning on this dataset mixed with --data");
  c_tr->add_option("--lambda", tr.lambda);
  c_tr->add_option("--temp", tr.temp);
  c_tr->add_option("--lr", tr.lr);
  c_tr->add_option("--weight-decay", tr.weight_decay);
  c_tr->add_option("--epochs", tr.epochs);
  c_tr->add_option("--batch-size", tr.batch_size);
  c_tr->add_option("--steps", tr.steps, "Continual fine-tuning steps");
  c_tr->add_option("--mix", tr.mix, "Share of each continual batch drawn from --new");

  EvalOpts ev;
  auto* c_ev = app.add_subcommand("eval", "Precision/recall/F1/AUPRC of a checkpoint");
  c_ev->add_option("--model", ev.model)->required();
  c_ev->add_option("--data", ev.data)->required();
  c_ev->add_option("--threshold", ev.threshold);
  c_ev->add_option("--report", ev.report);

  RedteamOpts rt;
  auto* c_rt = app.add_subcommand("redteam", "GFlowNet red-teaming with the student as reward");
  c_rt->add_option("--policy", rt.policy, "tabular|external");
  c_rt->add_option("--guard", rt.guard, "Student checkpoint used as the reward model")->required();
  c_rt->add_option("--target", rt.target, "mock|http");
  c_rt->add_option("--beta", rt.beta);
  c_rt->add_option("--gamma", rt.gamma);
  c_rt->add_option("--steps", rt.steps);
  c_rt->add_option("--batch-size", rt.batch_size);
  c_rt->add_option("--out", rt.out, "Trained policy checkpoint");
  c_rt->add_option("--buffer", rt.buffer, "Replay buffer JSONL");
  c_rt->add_option("--warmstart", rt.warmstart, "JSONL prompts for supervised warm start");
  c_rt->add_option("--prompts", rt.prompts, "JSONL prompts to score (external policy)");
  c_rt->add_option("--mle-out", rt.mle_out, "Re-trained policy on high-reward prompts");
  c_rt->add_option("--report", rt.report, "Test reward and diversity report");
  c_rt->add_option("--test-k", rt.test_k);
  c_rt->add_option("--teacher", rt.teacher, "Oracle for the test reward: mock|http");

  ClusterOpts cl;
  auto* c_cl = app.add_subcommand("cluster", "DBSCAN over instruction embeddings");
  c_cl->add_option("--data", cl.data)->required();
  c_cl->add_option("--with", cl.with);
  c_cl->add_option("--eps", cl.eps);
  c_cl->add_option("--min-pts", cl.min_pts);
  c_cl->add_option("--out", cl.out);

  ReportOpts rp;
  auto* c_rp = app.add_subcommand("report", "Dataset statistics or a metrics CSV");
  c_rp->add_option("--data", rp.data);
  c_rp->add_option("--metrics", rp.metrics);
  c_rp->add_option("--out", rp.out);
  c_rp->add_flag("--diversity", rp.diversity, "Include instruction diversity");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  Logger boot(err, Level::info);
  try {
    json cfg = load_config(g.config ? std::optional<fs::path>(*g.config) : std::nullopt);
    maybe_set(cfg, "seed", g.seed);
    maybe_set(cfg, "logging.level", g.log_level);
    Context ctx{cfg, Logger(err, parse_level(cfg.at("logging").at("level").get<std::string>())),
                out,
                std::make_shared<backends::ConcurrencyLimiter>(
                    cfg.at("http").at("max_concurrency").get<std::size_t>())};

    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "generate") return run_generate(ctx, gen);
    if (name == "respond") return run_respond(ctx, resp);
    if (name == "label") return run_label(ctx, lab);
    if (name == "augment") return run_augment(ctx, aug);
    if (name == "train") return run_train(ctx, tr);
    if (name == "eval") return run_eval(ctx, ev);
    if (name == "redteam") return run_redteam(ctx, rt);
    if (name == "cluster") return run_cluster(ctx, cl);
    if (name == "report") return run_report(ctx, rp);
    throw UsageError("unknown subcommand " + name);
  } catch (const UsageError& e) {
    boot.error("usage", {{"message", e.what()}});
    err << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    boot.error("failed", {{"message", e.what()}});
    return kExitRuntime;
  }
}

}  // namespace harmaug::cli

#include "harmaug/dataset.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "harmaug/error.hpp"
#include "harmaug/text.hpp"

namespace harmaug::data {
namespace {

using json = nlohmann::json;

constexpr std::string_view kSourceNames[] = {"original", "harmaug", "gfn", "eda", "other"};

std::string at_line(std::size_t line_no, std::string_view msg) {
  return "line " + std::to_string(line_no) + ": " + std::string(msg);
}

}  // namespace

std::string_view to_string(Source s) noexcept {
  return kSourceNames[static_cast<std::size_t>(s)];
}

Source parse_source(std::string_view tag) {
  for (std::size_t i = 0; i < std::size(kSourceNames); ++i) {
    if (kSourceNames[i] == tag) return static_cast<Source>(i);
  }
  throw DataError("unknown source tag \"" + std::string(tag) + "\"");
}

void validate(const Example& e) {
  if (text::trim(e.instruction).empty()) throw DataError("instruction is empty");
  if (e.label != 0 && e.label != 1) throw DataError("label must be 0 or 1");
  if (e.teacher_score) {
    const double s = *e.teacher_score;
    if (!(s >= 0.0 && s <= 1.0)) throw DataError("teacher_score must lie in [0,1]");
  }
}

Dataset::Dataset(std::string name, std::vector<Example> examples)
    : name_(std::move(name)), examples_(std::move(examples)) {
  for (const auto& e : examples_) validate(e);
}

void Dataset::push_back(Example e) {
  validate(e);
  examples_.push_back(std::move(e));
}

void Dataset::append(const Dataset& other) {
  examples_.insert(examples_.end(), other.examples_.begin(), other.examples_.end());
}

std::size_t Dataset::count_label(int label) const noexcept {
  std::size_t n = 0;
  for (const auto& e : examples_) n += (e.label == label);
  return n;
}

std::string to_json_line(const Example& e) {
  json j;
  j["instruction"] = e.instruction;
  j["response"] = e.response;
  j["label"] = e.label;
  j["teacher_score"] = e.teacher_score ? json(*e.teacher_score) : json(nullptr);
  j["source"] = std::string(to_string(e.source));
  // Model output may carry broken UTF-8; substitute U+FFFD rather than fail.
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

Example parse_json_line(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& err) {
    throw DataError(at_line(line_no, std::string("malformed JSON: ") + err.what()));
  }
  if (!j.is_object()) throw DataError(at_line(line_no, "record is not a JSON object"));

  Example e;
  for (const char* required : {"instruction", "label"}) {
    if (!j.contains(required)) {
      throw DataError(at_line(line_no, std::string("missing field ") + required));
    }
  }
  try {
    const auto& instr = j.at("instruction");
    if (!instr.is_string()) throw DataError(at_line(line_no, "instruction must be a string"));
    e.instruction = instr.get<std::string>();

    if (auto it = j.find("response"); it != j.end() && !it->is_null()) {
      if (!it->is_string()) throw DataError(at_line(line_no, "response must be a string"));
      e.response = it->get<std::string>();
    }

    const auto& label = j.at("label");
    if (!label.is_number_integer()) throw DataError(at_line(line_no, "label must be 0 or 1"));
    e.label = label.get<int>();

    if (auto it = j.find("teacher_score"); it != j.end() && !it->is_null()) {
      if (!it->is_number()) throw DataError(at_line(line_no, "teacher_score must be a number"));
      e.teacher_score = it->get<double>();
    }
    if (auto it = j.find("source"); it != j.end() && !it->is_null()) {
      if (!it->is_string()) throw DataError(at_line(line_no, "source must be a string"));
      e.source = parse_source(it->get<std::string>());
    }
    validate(e);
  } catch (const DataError& err) {
    const std::string msg = err.what();
    if (msg.rfind("line ", 0) == 0) throw;
    throw DataError(at_line(line_no, msg));
  }
  return e;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    examples.push_back(parse_json_line(line, line_no));
  }
  return Dataset(path.stem().string(), std::move(examples));
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset " + path.string());
  for (const auto& e : d) out << to_json_line(e) << '\n';
  out.flush();
  if (!out) throw DataError("write failed for " + path.string());
}

std::size_t second_share(const BatchSpec& spec) {
  return static_cast<std::size_t>(
      std::floor(spec.mix_ratio * static_cast<double>(spec.batch_size) + 0.5));
}

MixedBatchSampler::MixedBatchSampler(const Dataset& a, const Dataset& b, BatchSpec spec)
    : a_(&a), b_(&b), spec_(spec), n_second_(second_share(spec)), state_(spec.seed) {
  if (spec.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(spec.mix_ratio >= 0.0 && spec.mix_ratio <= 1.0)) {
    throw ConfigError("mix_ratio must lie in [0,1]");
  }
  if (a.empty() || b.empty()) throw DataError("mixed sampling needs two non-empty datasets");
}

Batch MixedBatchSampler::next() {
  Rng rng(state_);
  state_ = rng.next();
  Batch batch;
  batch.from_second = n_second_;
  batch.from_first = spec_.batch_size - n_second_;
  batch.items.reserve(spec_.batch_size);
  for (std::size_t i = 0; i < batch.from_first; ++i) {
    batch.items.push_back(&(*a_)[static_cast<std::size_t>(rng.below(a_->size()))]);
  }
  for (std::size_t i = 0; i < batch.from_second; ++i) {
    batch.items.push_back(&(*b_)[static_cast<std::size_t>(rng.below(b_->size()))]);
  }
  return batch;
}

}  // namespace harmaug::data

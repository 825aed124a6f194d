#include "harmaug/cli/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "harmaug/error.hpp"
#include "harmaug/promptcraft.hpp"
#include "harmaug/text.hpp"

namespace harmaug::cli {

using json = nlohmann::json;

namespace {

class ConfigParser {
 public:
  explicit ConfigParser(std::string_view text) : text_(text) {}

  json parse() {
    json root = json::object();
    json* section = &root;
    while (!at_end()) {
      skip_blank_and_comments();
      if (at_end()) break;
      if (peek() == '[') {
        ++pos_;
        const std::string name = read_until(']');
        expect(']');
        section = &root;
        for (const auto& part : split_dotted(name)) {
          json& child = (*section)[part];
          if (child.is_null()) child = json::object();
          if (!child.is_object()) fail("section [" + name + "] collides with a key");
          section = &child;
        }
        end_of_line();
        continue;
      }
      const std::string key = read_key();
      skip_inline_space();
      expect('=');
      skip_inline_space();
      json value = read_value();
      if (section->contains(key)) fail("duplicate key " + key);
      (*section)[key] = std::move(value);
      end_of_line();
    }
    return root;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) line += (text_[i] == '\n');
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
  }

  void expect(char c) {
    if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_inline_space() {
    while (!at_end() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (!at_end() && peek() == '#') {
      while (!at_end() && peek() != '\n') ++pos_;
    }
  }

  void skip_blank_and_comments() {
    while (!at_end()) {
      if (std::isspace(static_cast<unsigned char>(peek()))) {
        ++pos_;
      } else if (peek() == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  void end_of_line() {
    skip_inline_space();
    skip_comment();
    if (!at_end() && peek() == '\r') ++pos_;
    if (!at_end() && peek() != '\n') fail("unexpected trailing characters");
    if (!at_end()) ++pos_;
  }

  std::string read_until(char stop) {
    const std::size_t start = pos_;
    while (!at_end() && peek() != stop && peek() != '\n') ++pos_;
    return std::string(text::trim(text_.substr(start, pos_ - start)));
  }

  static std::vector<std::string> split_dotted(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string p;
    while (std::getline(ss, p, '.')) parts.emplace_back(text::trim(p));
    return parts;
  }

  std::string read_key() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' ||
                         peek() == '-')) {
      ++pos_;
    }
    if (start == pos_) fail("expected a key");
    return std::string(text_.substr(start, pos_ - start));
  }

  json read_value() {
    if (at_end()) fail("missing value");
    const char c = peek();
    if (c == '"') return read_basic_string();
    if (c == '\'') return read_literal_string();
    if (c == '[') return read_array();
    if (text_.substr(pos_).starts_with("true")) {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_).starts_with("false")) {
      pos_ += 5;
      return false;
    }
    return read_number();
  }

  json read_basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (at_end() || peek() == '\n') fail("unterminated string");
      char c = text_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (at_end()) fail("unterminated escape");
      char e = text_[pos_++];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
    return out;
  }

  json read_literal_string() {
    expect('\'');
    const std::size_t start = pos_;
    while (!at_end() && peek() != '\'' && peek() != '\n') ++pos_;
    if (at_end() || peek() != '\'') fail("unterminated string");
    std::string out(text_.substr(start, pos_ - start));
    ++pos_;
    return out;
  }

  json read_array() {
    expect('[');
    json arr = json::array();
    while (true) {
      skip_blank_and_comments();
      if (at_end()) fail("unterminated array");
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(read_value());
      skip_blank_and_comments();
      if (!at_end() && peek() == ',') {
        ++pos_;
        continue;
      }
      skip_blank_and_comments();
      if (at_end() || peek() != ']') fail("expected ',' or ']' in array");
    }
  }

  json read_number() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' ||
                         peek() == '-' || peek() == '.' || peek() == '_')) {
      ++pos_;
    }
    std::string tok(text_.substr(start, pos_ - start));
    std::erase(tok, '_');
    if (tok.empty()) fail("expected a value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(tok, &used);
        if (used == tok.size()) return v;
      } else {
        const long long v = std::stoll(tok, &used);
        if (used == tok.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("invalid value \"" + tok + "\"");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

bool compatible(const json& def, const json& v) {
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    if (def.empty()) return true;
    for (const auto& x : v) {
      if (!compatible(def[0], x)) return false;
    }
    return true;
  }
  if (def.is_object()) return v.is_object();
  return false;
}

json coerce(const json& def, json v) {
  if (def.is_number_float() && v.is_number()) return v.get<double>();
  return v;
}

const json kDefaults = [] {
  const std::vector<std::string> benign = {
      "write", "story", "about", "explain", "describe", "plan",   "city", "history",
      "garden", "recipe", "music", "travel", "friend",  "school", "market", "river",
      "letter", "guide", "simple", "people"};
  const std::vector<std::string> harmful = {"weapon", "poison", "explosive", "malware",
                                            "steal",  "fraud",  "hack",      "bomb"};
  std::vector<std::string> instruction_vocab = benign;
  instruction_vocab.insert(instruction_vocab.end(), harmful.begin(), harmful.end());

  auto backend = [](double refusal_p, double prefix_refusal_p, std::vector<std::string> words) {
    return json{{"kind", "mock"},
                {"base_url", ""},
                {"model", ""},
                {"api_key", ""},
                {"timeout_ms", 60000},
                {"max_retries", 3},
                {"backoff_initial_ms", 1000},
                {"continue_final_message", false},
                {"temperature", 1.0},
                {"max_tokens", 256},
                {"mock_words", std::move(words)},
                {"mock_refusal_p", refusal_p},
                {"mock_prefix_refusal_p", prefix_refusal_p},
                {"mock_min_words", 5},
                {"mock_max_words", 15}};
  };
  std::vector<std::string> harmful_response_vocab = harmful;
  harmful_response_vocab.insert(harmful_response_vocab.end(), {"step", "first", "then", "use"});

  json instruction = backend(0.9, 0.05, instruction_vocab);
  instruction["continue_final_message"] = true;

  return json{
      {"seed", 0},
      {"logging", {{"level", "info"}, {"progress_every", 100}}},
      {"http", {{"max_concurrency", 4}}},
      {"backends",
       {{"instruction_llm", instruction},
        {"refusal_llm", backend(1.0, 1.0, benign)},
        {"harmful_llm", backend(0.0, 0.0, harmful_response_vocab)},
        {"target", backend(0.5, 0.5, harmful_response_vocab)}}},
      {"teacher",
       {{"kind", "mock"},
        {"base_url", ""},
        {"model", ""},
        {"api_key", ""},
        {"timeout_ms", 60000},
        {"max_retries", 3},
        {"backoff_initial_ms", 1000},
        {"top_logprobs", 5},
        {"mock_harmful_words", harmful},
        {"mock_noise", 0.05}}},
      {"refusal", {{"patterns", promptcraft::default_refusal_patterns()}}},
      {"augment",
       {{"n", 1000},
        {"tau", 0.5},
        {"exemplars", static_cast<int>(promptcraft::kDefaultExemplarCount)},
        {"max_attempts", 10},
        {"dedup", true},
        {"directive", std::string(promptcraft::kDefaultDirective)},
        {"prefix", std::string(promptcraft::kDefaultPrefix)}}},
      {"train",
       {{"lambda", 0.5},
        {"temperature", 0.0},
        {"lr", 3e-5},
        {"weight_decay", 0.1},
        {"batch_size", 256},
        {"epochs", 3},
        {"lr_schedule", "linear_to_zero"},
        {"feature_dim", 65536},
        {"hash_seed", 0},
        {"continual_steps", 200},
        {"continual_batch_size", 8},
        {"continual_lr", 1e-4},
        {"mix_ratio", 0.5},
        {"lora_rank", 32}}},
      {"eval", {{"threshold", 0.5}}},
      {"cluster", {{"eps", 0.4}, {"min_pts", 5}, {"dimension", 256}}},
      {"redteam",
       {{"beta", 0.1},
        {"gamma", 1.0},
        {"n_response_samples", 5},
        {"form", "pair_approx"},
        {"steps", 50000},
        {"batch_size", 64},
        {"on_policy_prob", 0.5},
        {"temperature_min", 0.5},
        {"temperature_max", 2.0},
        {"buffer_capacity", 10000},
        {"lr", 1e-2},
        {"log_z_lr", 1e-1},
        {"weight_decay", 0.0},
        {"vocab", harmful},
        {"max_len", 3},
        {"top_fraction", 0.25},
        {"mle_steps", 1000},
        {"mle_batch_size", 1024},
        {"mle_lr", 1e-4},
        {"test_k", 1024},
        {"test_n_resp", 5}}},
  };
}();

template <typename T>
T get(const json& cfg, std::string_view dotted) {
  const json* node = &cfg;
  std::string key;
  std::stringstream ss{std::string(dotted)};
  while (std::getline(ss, key, '.')) node = &node->at(key);
  return node->get<T>();
}

std::size_t get_size(const json& cfg, std::string_view dotted) {
  const auto v = get<long long>(cfg, dotted);
  if (v < 0) throw ConfigError(std::string(dotted) + " must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace

json parse_config_text(std::string_view text) { return ConfigParser(text).parse(); }

const json& default_config() { return kDefaults; }

void overlay(json& base, const json& patch, const std::string& prefix) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key " + key);
    json& target = base[it.key()];
    if (target.is_object()) {
      if (!it->is_object()) throw ConfigError("config key " + key + " must be a section");
      overlay(target, *it, key);
      continue;
    }
    if (!compatible(target, *it)) throw ConfigError("config key " + key + " has the wrong type");
    target = coerce(target, *it);
  }
}

json load_config(const std::optional<std::filesystem::path>& path) {
  json cfg = default_config();
  if (path) {
    std::ifstream in(*path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path->string());
    std::stringstream buf;
    buf << in.rdbuf();
    overlay(cfg, parse_config_text(buf.str()));
  }
  return cfg;
}

void set_value(json& cfg, std::string_view dotted_key, json value) {
  json patch = std::move(value);
  std::vector<std::string> parts;
  std::stringstream ss{std::string(dotted_key)};
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, std::move(patch)}};
  overlay(cfg, patch);
}

augment::AugmentConfig augment_config(const json& cfg) {
  augment::AugmentConfig a;
  a.n_instructions = get_size(cfg, "augment.n");
  a.tau = get<double>(cfg, "augment.tau");
  a.exemplar_k = get_size(cfg, "augment.exemplars");
  a.max_attempts_per_instruction = get_size(cfg, "augment.max_attempts");
  a.dedup = get<bool>(cfg, "augment.dedup");
  a.seed = get<std::uint64_t>(cfg, "seed");
  a.directive = get<std::string>(cfg, "augment.directive");
  a.prefix = get<std::string>(cfg, "augment.prefix");
  a.instruction_params = generation_params(cfg.at("backends").at("instruction_llm"));
  a.response_params = generation_params(cfg.at("backends").at("harmful_llm"));
  return a;
}

distill::KDConfig kd_config(const json& cfg) {
  distill::KDConfig k;
  k.lambda = get<double>(cfg, "train.lambda");
  k.teacher_temperature = get<double>(cfg, "train.temperature");
  k.learning_rate = get<double>(cfg, "train.lr");
  k.weight_decay = get<double>(cfg, "train.weight_decay");
  k.batch_size = get_size(cfg, "train.batch_size");
  k.epochs = get_size(cfg, "train.epochs");
  k.seed = get<std::uint64_t>(cfg, "seed");
  k.lr_schedule = optim::parse_lr_schedule(get<std::string>(cfg, "train.lr_schedule"));
  k.validate();
  return k;
}

distill::ContinualPreset continual_preset(const json& cfg) {
  distill::ContinualPreset p;
  p.steps = get_size(cfg, "train.continual_steps");
  p.batch_size = get_size(cfg, "train.continual_batch_size");
  p.learning_rate = get<double>(cfg, "train.continual_lr");
  p.mix_ratio = get<double>(cfg, "train.mix_ratio");
  p.lora_rank = get_size(cfg, "train.lora_rank");
  return p;
}

redteam::RewardSpec reward_spec(const json& cfg) {
  redteam::RewardSpec r;
  r.beta = get<double>(cfg, "redteam.beta");
  r.gamma = get<double>(cfg, "redteam.gamma");
  r.n_response_samples = get_size(cfg, "redteam.n_response_samples");
  r.form = redteam::parse_reward_form(get<std::string>(cfg, "redteam.form"));
  r.validate();
  return r;
}

redteam::GfnConfig gfn_config(const json& cfg) {
  redteam::GfnConfig g;
  g.steps = get_size(cfg, "redteam.steps");
  g.batch_size = get_size(cfg, "redteam.batch_size");
  g.on_policy_prob = get<double>(cfg, "redteam.on_policy_prob");
  g.temperature_min = get<double>(cfg, "redteam.temperature_min");
  g.temperature_max = get<double>(cfg, "redteam.temperature_max");
  g.buffer_capacity = get_size(cfg, "redteam.buffer_capacity");
  g.learning_rate = get<double>(cfg, "redteam.lr");
  g.log_z_learning_rate = get<double>(cfg, "redteam.log_z_lr");
  g.weight_decay = get<double>(cfg, "redteam.weight_decay");
  g.seed = get<std::uint64_t>(cfg, "seed");
  g.validate();
  return g;
}

redteam::MleConfig mle_config(const json& cfg) {
  redteam::MleConfig m;
  m.steps = get_size(cfg, "redteam.mle_steps");
  m.batch_size = get_size(cfg, "redteam.mle_batch_size");
  m.learning_rate = get<double>(cfg, "redteam.mle_lr");
  m.seed = get<std::uint64_t>(cfg, "seed");
  return m;
}

backends::EndpointConfig endpoint_config(const json& s) {
  backends::EndpointConfig e;
  e.base_url = s.at("base_url").get<std::string>();
  e.model = s.at("model").get<std::string>();
  e.api_key = s.at("api_key").get<std::string>();
  e.timeout_ms = s.at("timeout_ms").get<int>();
  e.max_retries = s.at("max_retries").get<int>();
  e.backoff_initial_ms = s.at("backoff_initial_ms").get<int>();
  e.continue_final_message = s.value("continue_final_message", false);
  e.top_logprobs = s.value("top_logprobs", 5);
  return backends::resolve_from_env(std::move(e));
}

backends::MockVocabConfig mock_vocab_config(const json& s, std::uint64_t seed) {
  backends::MockVocabConfig m;
  m.words = s.at("mock_words").get<std::vector<std::string>>();
  m.refusal_p = s.at("mock_refusal_p").get<double>();
  m.prefix_refusal_p = s.at("mock_prefix_refusal_p").get<double>();
  m.min_words = s.at("mock_min_words").get<std::size_t>();
  m.max_words = s.at("mock_max_words").get<std::size_t>();
  m.seed = seed;
  return m;
}

backends::MockLexiconConfig mock_lexicon_config(const json& t, std::uint64_t seed) {
  backends::MockLexiconConfig m;
  m.harmful_words = t.at("mock_harmful_words").get<std::vector<std::string>>();
  m.noise = t.at("mock_noise").get<double>();
  m.seed = seed;
  return m;
}

backends::GenerationParams generation_params(const json& s) {
  backends::GenerationParams p;
  p.temperature = s.at("temperature").get<double>();
  p.max_tokens = s.at("max_tokens").get<int>();
  p.validate();
  return p;
}

}  // namespace harmaug::cli

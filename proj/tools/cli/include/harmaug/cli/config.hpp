#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>

#include "harmaug/augment.hpp"
#include "harmaug/distill.hpp"
#include "harmaug/http_backend.hpp"
#include "harmaug/redteam.hpp"

namespace harmaug::cli {

/// Parses the TOML subset used by run configs: [dotted.sections],
/// `key = value` with strings, integers, floats, booleans and (possibly
/// multi-line) arrays, and `#` comments. Returns a nested JSON object.
nlohmann::json parse_config_text(std::string_view text);

/// Every recognised key with its default. Numeric defaults follow the
/// published training recipe; mock settings are desk-scale choices.
const nlohmann::json& default_config();

/// Overlays `patch` onto `base`. Keys absent from `base` and type changes
/// are rejected with ConfigError naming the dotted key.
void overlay(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix = "");

/// Defaults overlaid with the file at `path`, if any.
nlohmann::json load_config(const std::optional<std::filesystem::path>& path);

/// Sets a dotted key, enforcing the same schema rules as `overlay`.
void set_value(nlohmann::json& cfg, std::string_view dotted_key, nlohmann::json value);

augment::AugmentConfig augment_config(const nlohmann::json& cfg);
distill::KDConfig kd_config(const nlohmann::json& cfg);
distill::ContinualPreset continual_preset(const nlohmann::json& cfg);
redteam::RewardSpec reward_spec(const nlohmann::json& cfg);
redteam::GfnConfig gfn_config(const nlohmann::json& cfg);
redteam::MleConfig mle_config(const nlohmann::json& cfg);
backends::EndpointConfig endpoint_config(const nlohmann::json& section);
backends::MockVocabConfig mock_vocab_config(const nlohmann::json& section, std::uint64_t seed);
backends::MockLexiconConfig mock_lexicon_config(const nlohmann::json& teacher, std::uint64_t seed);
backends::GenerationParams generation_params(const nlohmann::json& section);

}  // namespace harmaug::cli

#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

namespace harmaug::cli {

/// sha256 of the canonical dump of an effective configuration.
std::string config_hash(const nlohmann::json& effective);

/// Writes `<primary_output>.manifest.json`: subcommand, config hash, seed,
/// tool versions and sha256 digests of the named inputs and outputs. Files
/// are recorded by file name so manifests do not depend on the run directory.
std::filesystem::path write_manifest(const std::filesystem::path& primary_output,
                                     std::string_view subcommand,
                                     const nlohmann::json& effective,
                                     const std::vector<std::filesystem::path>& inputs,
                                     const std::vector<std::filesystem::path>& outputs,
                                     const nlohmann::json& extra = nlohmann::json::object());

}  // namespace harmaug::cli

#include "harmaug/cli/manifest.hpp"

#include <fstream>

#include "harmaug/digest.hpp"
#include "harmaug/error.hpp"

#ifndef HARMAUG_VERSION
#define HARMAUG_VERSION "0.0.0"
#endif

namespace harmaug::cli {

using json = nlohmann::json;

std::string config_hash(const json& effective) { return sha256_hex(effective.dump()); }

std::filesystem::path write_manifest(const std::filesystem::path& primary_output,
                                     std::string_view subcommand, const json& effective,
                                     const std::vector<std::filesystem::path>& inputs,
                                     const std::vector<std::filesystem::path>& outputs,
                                     const json& extra) {
  auto digests = [](const std::vector<std::filesystem::path>& files) {
    json arr = json::array();
    for (const auto& f : files) {
      json entry = {{"file", f.filename().string()}};
      if (std::filesystem::is_regular_file(f)) entry["sha256"] = sha256_file(f);
      arr.push_back(std::move(entry));
    }
    return arr;
  };
  json m = {{"tool", "harmaug"},
            {"subcommand", subcommand},
            {"versions",
             {{"harmaug", HARMAUG_VERSION},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
            {"config_hash", config_hash(effective)},
            {"seed", effective.value("seed", json(0))},
            {"config", effective},
            {"inputs", digests(inputs)},
            {"outputs", digests(outputs)}};
  if (!extra.empty()) m["extra"] = extra;

  std::filesystem::path path = primary_output;
  path += ".manifest.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << m.dump(2) << '\n';
  return path;
}

}  // namespace harmaug::cli

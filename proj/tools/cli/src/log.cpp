#include "harmaug/cli/log.hpp"

#include <string>

#include "harmaug/error.hpp"

namespace harmaug::cli {

Level parse_level(std::string_view s) {
  if (s == "debug") return Level::debug;
  if (s == "info") return Level::info;
  if (s == "warn") return Level::warn;
  if (s == "error") return Level::error;
  throw ConfigError("unknown log level \"" + std::string(s) + "\"");
}

void Logger::log(Level level, std::string_view event, nlohmann::json fields) {
  if (level < min_) return;
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
  nlohmann::json rec = {{"level", kNames[static_cast<int>(level)]}, {"event", event}};
  for (auto it = fields.begin(); it != fields.end(); ++it) rec[it.key()] = *it;
  sink_ << rec.dump() << '\n';
  sink_.flush();
}

}  // namespace harmaug::cli

#pragma once

#include <nlohmann/json.hpp>
#include <ostream>
#include <string_view>

namespace harmaug::cli {

enum class Level { debug = 0, info = 1, warn = 2, error = 3 };

Level parse_level(std::string_view s);

/// Line-oriented JSON log records: {"level", "event", ...fields}.
class Logger {
 public:
  Logger(std::ostream& sink, Level min_level) : sink_(sink), min_(min_level) {}

  void log(Level level, std::string_view event, nlohmann::json fields = nlohmann::json::object());
  void debug(std::string_view e, nlohmann::json f = nlohmann::json::object()) { log(Level::debug, e, std::move(f)); }
  void info(std::string_view e, nlohmann::json f = nlohmann::json::object()) { log(Level::info, e, std::move(f)); }
  void warn(std::string_view e, nlohmann::json f = nlohmann::json::object()) { log(Level::warn, e, std::move(f)); }
  void error(std::string_view e, nlohmann::json f = nlohmann::json::object()) { log(Level::error, e, std::move(f)); }

 private:
  std::ostream& sink_;
  Level min_;
};

}  // namespace harmaug::cli

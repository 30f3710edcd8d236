#pragma once

#include <ostream>
#include <string>
#include <string_view>

namespace milforge::log {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// error | warn | info | debug; anything else throws ConfigError.
Level parse_level(std::string_view name);
// Reads MILFORGE_LOG; unset means info.
void init_from_env();
void set_level(Level level);
Level level();
// Defaults to std::cerr. The stream must outlive every later log call.
void set_sink(std::ostream* sink);

void write(Level level, const std::string& message);
inline void error(const std::string& m) { write(Level::kError, m); }
inline void warn(const std::string& m) { write(Level::kWarn, m); }
inline void info(const std::string& m) { write(Level::kInfo, m); }
inline void debug(const std::string& m) { write(Level::kDebug, m); }

}  // namespace milforge::log

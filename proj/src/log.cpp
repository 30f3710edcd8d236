#include "milforge/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

#include "milforge/error.hpp"

namespace milforge::log {

namespace {

std::atomic<int> g_level{static_cast<int>(Level::kInfo)};
std::ostream* g_sink = &std::cerr;
std::mutex g_mutex;

const char* tag(Level l) {
  switch (l) {
    case Level::kError:
      return "error";
    case Level::kWarn:
      return "warn";
    case Level::kInfo:
      return "info";
    case Level::kDebug:
      return "debug";
  }
  return "?";
}

}  // namespace

Level parse_level(std::string_view name) {
  if (name == "error") return Level::kError;
  if (name == "warn" || name == "warning") return Level::kWarn;
  if (name == "info") return Level::kInfo;
  if (name == "debug") return Level::kDebug;
  throw ConfigError("unknown log level '" + std::string(name) + "'");
}

void init_from_env() {
  const char* v = std::getenv("MILFORGE_LOG");
  if (v && *v) set_level(parse_level(v));
}

void set_level(Level level) { g_level = static_cast<int>(level); }
Level level() { return static_cast<Level>(g_level.load()); }

void set_sink(std::ostream* sink) {
  std::lock_guard lock(g_mutex);
  g_sink = sink ? sink : &std::cerr;
}

void write(Level l, const std::string& message) {
  if (static_cast<int>(l) > g_level.load()) return;
  std::lock_guard lock(g_mutex);
  *g_sink << "[" << tag(l) << "] " << message << '\n';
}

}  // namespace milforge::log

#include "logging.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace exacfs::logging {

namespace {

Level parse_env() {
  const char* v = std::getenv("EXACFS_LOG");
  if (v == nullptr) return Level::kError;
  if (std::strcmp(v, "debug") == 0) return Level::kDebug;
  if (std::strcmp(v, "info") == 0) return Level::kInfo;
  return Level::kError;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

void emit(const char* tag, const std::string& msg) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  std::fprintf(stderr, "[exacfs] %s: %s\n", tag, msg.c_str());
}

}  // namespace

Level level() {
  static Level lv = parse_env();
  return lv;
}

void error(const std::string& msg) { emit("error", msg); }

void warn(const std::string& msg) {
  if (level() >= Level::kInfo) emit("warning", msg);
}

void info(const std::string& msg) {
  if (level() >= Level::kInfo) emit("info", msg);
}

void debug(const std::string& msg) {
  if (level() >= Level::kDebug) emit("debug", msg);
}

}  // namespace exacfs::logging

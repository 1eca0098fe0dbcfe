#include "dsar/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>
#include <string>
#include <utility>

namespace dsar::log {
namespace {

std::mutex sink_mutex;
std::atomic<int> threshold{static_cast<int>(Level::warning)};

const char* label(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warning: return "warning";
    case Level::error: return "error";
  }
  return "?";
}

Sink& sink() {
  static Sink s = [](Level level, std::string_view message) {
    std::fprintf(stderr, "[dsar %s] %.*s\n", label(level),
                 static_cast<int>(message.size()), message.data());
  };
  return s;
}

}  // namespace

Sink set_sink(Sink s) {
  std::lock_guard lock(sink_mutex);
  return std::exchange(sink(), std::move(s));
}

void set_threshold(Level level) { threshold = static_cast<int>(level); }

void write(Level level, std::string_view message) {
  if (static_cast<int>(level) < threshold) return;
  std::lock_guard lock(sink_mutex);
  if (sink()) sink()(level, message);
}

}  // namespace dsar::log

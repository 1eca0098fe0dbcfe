#pragma once

#include <functional>
#include <string_view>

namespace dsar::log {

enum class Level { debug = 0, info = 1, warning = 2, error = 3 };

using Sink = std::function<void(Level, std::string_view)>;

/// Replaces the process-wide sink and returns the previous one. The default
/// sink writes warnings and errors to stderr.
Sink set_sink(Sink sink);

void write(Level level, std::string_view message);

inline void warn(std::string_view message) { write(Level::warning, message); }
inline void info(std::string_view message) { write(Level::info, message); }

/// Sets the minimum level forwarded to the sink.
void set_threshold(Level level);

}  // namespace dsar::log

#pragma once

#include <functional>
#include <string>

namespace progress {

using LogSink = std::function<void(const std::string&)>;

/// Replaces the warning sink (stderr by default). Returns the previous sink.
LogSink set_log_sink(LogSink sink);
void log_warning(const std::string& message);

}  // namespace progress

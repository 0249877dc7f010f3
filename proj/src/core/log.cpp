#include "progress/core/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace progress {

namespace {
std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}
LogSink& current_sink() {
    static LogSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return sink;
}
}  // namespace

LogSink set_log_sink(LogSink sink) {
    std::lock_guard lock(sink_mutex());
    return std::exchange(current_sink(), std::move(sink));
}

void log_warning(const std::string& message) {
    std::lock_guard lock(sink_mutex());
    if (current_sink()) current_sink()(message);
}

}  // namespace progress

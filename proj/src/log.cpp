#include "cal/log.hpp"

#include <iostream>
#include <mutex>

namespace cal::log {

namespace {

std::mutex sink_mutex;
Sink& current_sink() {
  static Sink sink;
  return sink;
}

}  // namespace

void set_warning_sink(Sink sink) {
  std::lock_guard lock(sink_mutex);
  current_sink() = std::move(sink);
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex);
  if (current_sink()) {
    current_sink()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace cal::log

#pragma once

#include <functional>
#include <string>

namespace cal::log {

using Sink = std::function<void(const std::string&)>;

/// Replaces the warning sink (default: stderr). Pass nullptr to restore it.
void set_warning_sink(Sink sink);
void warn(const std::string& message);

}  // namespace cal::log

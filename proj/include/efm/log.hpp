#pragma once

#include <functional>
#include <string>

namespace efm {

using WarningHandler = std::function<void(const std::string&)>;

/// Replaces the process-wide warning sink and returns the previous one.
/// The default sink writes "efm: warning: <msg>" to stderr.
WarningHandler set_warning_handler(WarningHandler handler);

void warn(const std::string& message);

/// Emits `message` only the first time `key` is seen in this process.
void warn_once(const std::string& key, const std::string& message);

} // namespace efm

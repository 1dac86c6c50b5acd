#include "efm/log.hpp"

#include <iostream>
#include <mutex>
#include <set>

namespace efm {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningHandler& sink() {
  static WarningHandler h = [](const std::string& msg) {
    std::cerr << "efm: warning: " << msg << '\n';
  };
  return h;
}

} // namespace

WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(sink_mutex());
  auto previous = std::move(sink());
  sink() = handler ? std::move(handler) : [](const std::string&) {};
  return previous;
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex());
  sink()(message);
}

void warn_once(const std::string& key, const std::string& message) {
  static std::set<std::string> seen;
  std::lock_guard lock(sink_mutex());
  if (!seen.insert(key).second) return;
  sink()(message);
}

} // namespace efm

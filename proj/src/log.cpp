#include "sfm/log.hpp"

#include <iostream>
#include <mutex>
#include <set>

namespace sfm {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& sink() {
  static WarningSink s = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return s;
}

}  // namespace

void set_warning_sink(WarningSink s) {
  std::lock_guard lock(sink_mutex());
  sink() = std::move(s);
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex());
  if (sink()) sink()(message);
}

void warn_once(const std::string& key, const std::string& message) {
  static std::set<std::string> seen;
  {
    std::lock_guard lock(sink_mutex());
    if (!seen.insert(key).second) return;
  }
  warn(message);
}

}  // namespace sfm

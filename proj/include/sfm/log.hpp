#pragma once

#include <functional>
#include <string>

namespace sfm {

// Library warnings go through one replaceable sink (stderr by default).
using WarningSink = std::function<void(const std::string&)>;

void set_warning_sink(WarningSink sink);
void warn(const std::string& message);
// Emits `message` only the first time `key` is seen in this process.
void warn_once(const std::string& key, const std::string& message);

}  // namespace sfm

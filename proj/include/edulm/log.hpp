#pragma once

#include <functional>
#include <string_view>

namespace edulm {

using WarningSink = std::function<void(std::string_view)>;

/// Reports a recoverable condition. The default sink writes "warning: ..." to stderr.
void warn(std::string_view message);

/// Installs a new sink (an empty function restores the default) and returns the old one.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace edulm

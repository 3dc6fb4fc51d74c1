#pragma once

#include <functional>
#include <string>

namespace tae {

using WarningSink = std::function<void(const std::string&)>;

/// Routes non-fatal diagnostics. Default sink prints to stderr.
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace tae

#pragma once

#include <string_view>

namespace mixsign {

// Writes "warning: <msg>" to stderr once per distinct message per process.
void warn_once(std::string_view msg);

}  // namespace mixsign

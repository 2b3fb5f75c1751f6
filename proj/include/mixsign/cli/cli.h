#pragma once

#include <iosfwd>

namespace mixsign {

// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mixsign

#include "mixsign/util/log.h"

#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace mixsign {

void warn_once(std::string_view msg) {
    static std::mutex mu;
    static std::set<std::string, std::less<>> seen;
    std::lock_guard lock(mu);
    if (seen.find(msg) != seen.end()) return;
    seen.emplace(msg);
    std::cerr << "warning: " << msg << '\n';
}

}  // namespace mixsign

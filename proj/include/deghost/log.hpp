#pragma once

#include <iostream>
#include <string>

namespace deghost {

// Minimal stderr logging; warnings never abort.
inline bool& log_quiet() {
    static bool quiet = false;
    return quiet;
}

inline void log_warning(const std::string& msg) {
    if (!log_quiet()) std::cerr << "warning: " << msg << "\n";
}

inline void log_info(const std::string& msg) {
    if (!log_quiet()) std::cerr << msg << "\n";
}

}  // namespace deghost

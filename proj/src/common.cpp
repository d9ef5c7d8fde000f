#include "cgaug/common.hpp"

#include <cmath>
#include <cstdlib>
#include <iostream>

namespace cgaug {

std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::size_t Rng::pick_weighted(const std::vector<double>& w) {
    if (w.empty()) throw std::invalid_argument("pick_weighted: empty weights");
    double total = 0.0;
    for (double x : w) {
        if (x < 0.0) throw std::invalid_argument("pick_weighted: negative weight");
        total += x;
    }
    if (total <= 0.0) throw std::invalid_argument("pick_weighted: all weights zero");
    double r = uniform() * total;
    double c = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        c += w[i];
        if (r < c) return i;
    }
    return w.size() - 1;
}

int log_level() {
    static int level = [] {
        const char* e = std::getenv("CGAUG_LOG");
        if (e == nullptr) return 0;
        return std::atoi(e);
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[cgaug] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[cgaug:debug] " << msg << "\n";
}

}  // namespace cgaug

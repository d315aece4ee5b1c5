#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "puckloc/errors.hpp"

// Small helpers shared by the CSV readers.
namespace puckloc::csv {

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline void strip_cr(std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
}

inline double parse_double(const std::string& s, std::size_t row, const char* field) {
    double v = 0.0;
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), last, v);
    if (ec != std::errc() || ptr != last || s.empty() || !std::isfinite(v)) {
        throw ParseError(row, field, fmt::format("'{}' is not a number", s));
    }
    return v;
}

inline std::int64_t parse_int(const std::string& s, std::size_t row, const char* field) {
    std::int64_t v = 0;
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), last, v);
    if (ec != std::errc() || ptr != last || s.empty()) {
        throw ParseError(row, field, fmt::format("'{}' is not an integer", s));
    }
    return v;
}

}  // namespace puckloc::csv

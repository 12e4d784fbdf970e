#pragma once

#include <cctype>
#include <string>

#include "slowdef/errors.hpp"

namespace slowdef {

/// Validates an ISO 8601 calendar date "YYYY-MM-DD".
/// Lexicographic order on validated strings equals chronological order.
inline void validate_date(const std::string& d) {
    auto fail = [&] { throw FormatError("invalid ISO 8601 date '" + d + "' (expected YYYY-MM-DD)"); };
    if (d.size() != 10 || d[4] != '-' || d[7] != '-') fail();
    for (size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
        if (!std::isdigit(static_cast<unsigned char>(d[i]))) fail();
    const int month = (d[5] - '0') * 10 + (d[6] - '0');
    const int day = (d[8] - '0') * 10 + (d[9] - '0');
    if (month < 1 || month > 12 || day < 1 || day > 31) fail();
}

}  // namespace slowdef

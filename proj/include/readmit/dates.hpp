#pragma once

#include <cstdint>
#include <string>

namespace readmit {

// Calendar days as integer days since 1970-01-01.
using Day = int32_t;

constexpr Day kNoDate = INT32_MIN;

Day days_from_civil(int y, int m, int d);
void civil_from_days(Day z, int &y, int &m, int &d);

// strict YYYY-MM-DD; throws UnparsableDate with the given context on failure
Day parse_iso_date(const std::string &text, const std::string &context);
std::string format_iso_date(Day day);

} // namespace readmit

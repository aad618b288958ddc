#include "llmoe/dates.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace llmoe {

Date parse_date(const std::string& s) {
  auto fail = [&]() -> Date {
    throw std::runtime_error("malformed date (want yyyy-mm-dd): '" + s + "'");
  };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return fail();
  int y = 0;
  unsigned m = 0, d = 0;
  auto parse_part = [&](const char* first, const char* last, auto& out) {
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc{} && res.ptr == last;
  };
  if (!parse_part(s.data(), s.data() + 4, y) ||
      !parse_part(s.data() + 5, s.data() + 7, m) ||
      !parse_part(s.data() + 8, s.data() + 10, d)) {
    return fail();
  }
  Date date(y, m, d);
  if (!date.ymd.ok()) return fail();
  return date;
}

std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(d.ymd.year()),
                unsigned(d.ymd.month()), unsigned(d.ymd.day()));
  return buf;
}

bool is_weekend(const Date& d) {
  std::chrono::weekday wd{std::chrono::sys_days(d.ymd)};
  return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

Date add_days(const Date& d, int n) {
  auto sd = std::chrono::sys_days(d.ymd) + std::chrono::days{n};
  return Date(std::chrono::year_month_day{sd});
}

Date next_trading_day(const Date& d) {
  Date next = add_days(d, 1);
  while (is_weekend(next)) {
    next = add_days(next, 1);
  }
  return next;
}

}  // namespace llmoe

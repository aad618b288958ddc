#pragma once

#include <chrono>
#include <compare>
#include <string>

namespace llmoe {

// Calendar date. Thin value wrapper so domain types don't spell out
// std::chrono machinery everywhere.
struct Date {
  std::chrono::year_month_day ymd{};

  Date() = default;
  explicit Date(std::chrono::year_month_day d) : ymd(d) {}
  Date(int y, unsigned m, unsigned d)
      : ymd(std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}) {}

  friend auto operator<=>(const Date& a, const Date& b) {
    return std::chrono::sys_days(a.ymd) <=> std::chrono::sys_days(b.ymd);
  }
  friend bool operator==(const Date& a, const Date& b) { return a.ymd == b.ymd; }
};

// Parses "yyyy-mm-dd"; throws std::runtime_error on malformed input.
Date parse_date(const std::string& s);

// ISO-8601 "yyyy-mm-dd".
std::string format_date(const Date& d);

bool is_weekend(const Date& d);

Date add_days(const Date& d, int n);

// Next calendar day that is not a Saturday or Sunday.
Date next_trading_day(const Date& d);

}  // namespace llmoe

#include "orefeed/common.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace orefeed {

namespace {

int read_digits(std::string_view text, std::size_t pos, std::size_t count) {
  if (pos + count > text.size()) throw Error("timestamp too short: '" + std::string(text) + "'");
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + count, value);
  if (ec != std::errc() || ptr != text.data() + pos + count) {
    throw Error("malformed timestamp: '" + std::string(text) + "'");
  }
  return value;
}

void expect_char(std::string_view text, std::size_t pos, char c) {
  if (pos >= text.size() || text[pos] != c) {
    throw Error("malformed timestamp: '" + std::string(text) + "'");
  }
}

}  // namespace

Minutes parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  const int yr = read_digits(text, 0, 4);
  expect_char(text, 4, '-');
  const int mo = read_digits(text, 5, 2);
  expect_char(text, 7, '-');
  const int dy = read_digits(text, 8, 2);
  if (text.size() <= 10 || (text[10] != 'T' && text[10] != ' ')) {
    throw Error("malformed timestamp: '" + std::string(text) + "'");
  }
  const int hh = read_digits(text, 11, 2);
  expect_char(text, 13, ':');
  const int mm = read_digits(text, 14, 2);
  std::size_t end = 16;
  if (text.size() > end && text[end] == ':') {
    const int ss = read_digits(text, end + 1, 2);
    if (ss > 59) throw Error("malformed timestamp: '" + std::string(text) + "'");
    end += 3;
  }
  if (end != text.size()) throw Error("malformed timestamp: '" + std::string(text) + "'");
  const year_month_day ymd{year{yr}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(dy)}};
  if (!ymd.ok() || hh > 23 || mm > 59) {
    throw Error("invalid timestamp: '" + std::string(text) + "'");
  }
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<Minutes>(days) * 1440 + hh * 60 + mm;
}

std::string format_timestamp(Minutes t) {
  using namespace std::chrono;
  Minutes days = t / 1440;
  Minutes rem = t % 1440;
  if (rem < 0) {
    rem += 1440;
    days -= 1;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 60), static_cast<int>(rem % 60));
  return buf;
}

}  // namespace orefeed

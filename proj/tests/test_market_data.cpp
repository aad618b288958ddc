#include <doctest.h>

#include <filesystem>
#include <set>
#include <string>

#include "llmoe/market_data.hpp"
#include "llmoe/util.hpp"

using namespace llmoe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("llmoe_md_" + std::to_string(fnv1a64(std::to_string(
                              reinterpret_cast<std::uintptr_t>(this)))));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

OhlcvBar bar(const std::string& date, double open, double high, double low,
             double close, double adjclose, double volume) {
  OhlcvBar b;
  b.date = parse_date(date);
  b.open = open;
  b.high = high;
  b.low = low;
  b.close = close;
  b.adjclose = adjclose;
  b.volume = volume;
  return b;
}

}  // namespace

TEST_CASE("validate_bar rejects broken price relations") {
  auto good = bar("2015-01-05", 10, 11, 9, 10.5, 10.5, 1000);
  CHECK_NOTHROW(validate_bar(good, "ctx"));

  auto b = good;
  b.high = 8.0;  // below the low
  CHECK_THROWS_WITH_AS(validate_bar(b, "ctx"),
                       doctest::Contains("ctx"), std::runtime_error);
  b = good;
  b.low = 12.0;
  CHECK_THROWS(validate_bar(b, "ctx"));
  b = good;
  b.close = 20.0;  // outside [low, high]
  CHECK_THROWS(validate_bar(b, "ctx"));
  b = good;
  b.open = 20.0;
  CHECK_THROWS(validate_bar(b, "ctx"));
  b = good;
  b.adjclose = 0.0;
  CHECK_THROWS(validate_bar(b, "ctx"));
  b = good;
  b.volume = -1.0;
  CHECK_THROWS(validate_bar(b, "ctx"));
  b = good;
  b.open = -5.0;
  CHECK_THROWS(validate_bar(b, "ctx"));
}

TEST_CASE("load_series parses prices and merges news") {
  TempDir tmp;
  atomic_write_file(tmp.file("p.csv"),
                    "date,open,high,low,close,adjclose,volume\n"
                    "2015-01-06,10.5,11.5,10.0,11.0,11.0,2000\n"
                    "2015-01-05,10.0,11.0,9.5,10.5,10.4,1500\n"
                    "2015-01-07,11.0,12.0,10.5,11.5,11.5,2500\n");
  atomic_write_file(tmp.file("n.csv"),
                    "date,headline\n"
                    "2015-01-05,\"Earnings beat, shares rally\"\n"
                    "2015-01-05,Analysts lift targets\n"
                    "2015-01-08,Orphan headline\n"
                    "2015-01-06,\n");

  const auto loaded = load_series(tmp.file("p.csv"), tmp.file("n.csv"), "ACME");
  const auto& s = loaded.series;
  CHECK(s.symbol == "ACME");
  REQUIRE(s.bars.size() == 3);
  // sorted by date regardless of file order
  CHECK(format_date(s.bars[0].date) == "2015-01-05");
  CHECK(format_date(s.bars[2].date) == "2015-01-07");
  CHECK(s.bars[0].open == 10.0);
  CHECK(s.bars[0].adjclose == 10.4);
  CHECK(s.bars[1].volume == 2000.0);
  // two same-day headlines concatenated, empty headline dropped
  REQUIRE(s.bars[0].headline.has_value());
  CHECK(*s.bars[0].headline == "Earnings beat, shares rally; Analysts lift targets");
  CHECK(!s.bars[1].headline.has_value());
  CHECK(!s.bars[2].headline.has_value());
  CHECK(loaded.unmatched_news == 1);
}

TEST_CASE("load_series errors name the file, line and column") {
  TempDir tmp;
  atomic_write_file(tmp.file("bad_header.csv"), "date,open,high\n");
  CHECK_THROWS_WITH_AS(load_series(tmp.file("bad_header.csv")),
                       doctest::Contains("bad_header.csv"), std::runtime_error);

  atomic_write_file(tmp.file("bad_field.csv"),
                    "date,open,high,low,close,adjclose,volume\n"
                    "2015-01-05,10.0,11.0,9.5,oops,10.4,1500\n");
  CHECK_THROWS_WITH_AS(load_series(tmp.file("bad_field.csv")),
                       doctest::Contains("bad_field.csv:2"), std::runtime_error);
  CHECK_THROWS_WITH_AS(load_series(tmp.file("bad_field.csv")),
                       doctest::Contains("close"), std::runtime_error);

  atomic_write_file(tmp.file("dup.csv"),
                    "date,open,high,low,close,adjclose,volume\n"
                    "2015-01-05,10.0,11.0,9.5,10.5,10.4,1500\n"
                    "2015-01-05,10.0,11.0,9.5,10.5,10.4,1500\n");
  CHECK_THROWS_WITH_AS(load_series(tmp.file("dup.csv")),
                       doctest::Contains("duplicate"), std::runtime_error);

  CHECK_THROWS(load_series(tmp.file("does_not_exist.csv")));
}

TEST_CASE("save_series round-trips exactly, quoting as needed") {
  TempDir tmp;
  MarketSeries s;
  s.symbol = "RT";
  s.bars.push_back(bar("2015-01-05", 10.1, 11.2, 9.3, 10.55, 10.4567890123, 1500));
  s.bars.push_back(bar("2015-01-06", 0.1, 1.0 / 3.0 + 1.0, 0.05, 0.3, 1e-3, 0));
  s.bars[0].headline = "Quote \"this\", and, commas";
  const auto prices = tmp.file("prices.csv");
  const auto news = tmp.file("news.csv");
  save_series(s, prices, news);

  const auto loaded = load_series(prices, news, "RT");
  REQUIRE(loaded.series.bars.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& a = s.bars[i];
    const auto& b = loaded.series.bars[i];
    CHECK(a.date == b.date);
    CHECK(a.open == b.open);
    CHECK(a.high == b.high);
    CHECK(a.low == b.low);
    CHECK(a.close == b.close);
    CHECK(a.adjclose == b.adjclose);
    CHECK(a.volume == b.volume);
    CHECK(a.headline == b.headline);
  }
}

TEST_CASE("split_series takes the chronological head by ceil") {
  MarketSeries s;
  s.symbol = "S";
  Date d = parse_date("2010-01-04");
  for (int i = 0; i < 2503; ++i) {
    s.bars.push_back(bar(format_date(d), 10, 11, 9, 10, 10, 100));
    d = next_trading_day(d);
  }
  SplitSpec spec;
  spec.train_fraction = 0.8;
  const auto split = split_series(s, spec);
  CHECK(split.train.bars.size() == 2003);
  CHECK(split.test.bars.size() == 500);
  CHECK(split.boundary_date == split.train.bars.back().date);
  CHECK(split.boundary_date < split.test.bars.front().date);

  // exact-multiple case has no ceil effect
  MarketSeries ten;
  ten.symbol = "S";
  d = parse_date("2010-01-04");
  for (int i = 0; i < 10; ++i) {
    ten.bars.push_back(bar(format_date(d), 10, 11, 9, 10, 10, 100));
    d = next_trading_day(d);
  }
  spec.train_fraction = 0.5;
  CHECK(split_series(ten, spec).train.bars.size() == 5);
  spec.train_fraction = 0.41;
  CHECK(split_series(ten, spec).train.bars.size() == 5);  // ceil(4.1)
}

TEST_CASE("synthetic series is deterministic and well-formed") {
  RegimeSpec spec;
  const auto a = generate_synthetic_series(42, 300, spec);
  const auto b = generate_synthetic_series(42, 300, spec);
  const auto c = generate_synthetic_series(43, 300, spec);

  REQUIRE(a.series.bars.size() == 300);
  REQUIRE(a.regimes.size() == 300);
  CHECK(a.series.symbol == "SYN");
  CHECK(format_date(a.series.bars.front().date) == "2015-01-05");

  bool identical = true;
  for (std::size_t i = 0; i < 300; ++i) {
    const auto& x = a.series.bars[i];
    const auto& y = b.series.bars[i];
    identical = identical && x.date == y.date && x.open == y.open &&
                x.high == y.high && x.low == y.low && x.close == y.close &&
                x.adjclose == y.adjclose && x.volume == y.volume &&
                x.headline == y.headline;
  }
  CHECK(identical);
  CHECK(a.regimes == b.regimes);

  bool different = false;
  for (std::size_t i = 0; i < 300 && !different; ++i) {
    different = a.series.bars[i].close != c.series.bars[i].close;
  }
  CHECK(different);

  int no_news = 0;
  for (std::size_t i = 0; i < 300; ++i) {
    const auto& x = a.series.bars[i];
    CHECK(!is_weekend(x.date));
    CHECK_NOTHROW(validate_bar(x, "synthetic"));
    CHECK((a.regimes[i] == 0 || a.regimes[i] == 1));
    if (i > 0) CHECK(a.series.bars[i - 1].date < x.date);
    if (!x.headline) {
      ++no_news;
    } else {
      CHECK(x.headline->find("SYN") != std::string::npos);
    }
  }
  // defaults target about 30% days without news
  CHECK(no_news > 300 * 0.15);
  CHECK(no_news < 300 * 0.45);

  CHECK_THROWS(generate_synthetic_series(1, 39));
  CHECK_NOTHROW(generate_synthetic_series(1, 40));
}

TEST_CASE("synthetic regimes drift in opposite directions") {
  RegimeSpec spec;
  const auto syn = generate_synthetic_series(11, 2000, spec);
  double up_sum = 0.0, down_sum = 0.0;
  int up_n = 0, down_n = 0;
  for (std::size_t i = 1; i < syn.series.bars.size(); ++i) {
    const double r =
        syn.series.bars[i].adjclose / syn.series.bars[i - 1].adjclose - 1.0;
    if (syn.regimes[i] == 0) {
      up_sum += r;
      ++up_n;
    } else {
      down_sum += r;
      ++down_n;
    }
  }
  REQUIRE(up_n > 100);
  REQUIRE(down_n > 100);
  CHECK(up_sum / up_n > 0.0);
  CHECK(down_sum / down_n < 0.0);
}

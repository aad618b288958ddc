#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llmoe/dates.hpp"

namespace llmoe {

// One trading day's raw prices plus the day's news, when any exists.
// No-news days are a first-class state: headline is simply absent.
struct OhlcvBar {
  Date date;
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  double adjclose = 0.0;
  double volume = 0.0;
  std::optional<std::string> headline;
};

struct MarketSeries {
  std::string symbol;
  std::vector<OhlcvBar> bars;  // dates strictly increasing, no duplicates

  std::size_t size() const { return bars.size(); }
};

// Chronological train/test partition. train holds the ceil(train_fraction * N)
// earliest days.
struct SplitSpec {
  double train_fraction = 0.8;
};

struct SplitResult {
  MarketSeries train;
  MarketSeries test;
  Date boundary_date;  // last training day
};

struct LoadedSeries {
  MarketSeries series;
  int unmatched_news = 0;  // news rows whose date has no price bar
};

// Validates a bar against the price invariants; throws std::runtime_error
// naming `context` on violation.
void validate_bar(const OhlcvBar& bar, const std::string& context);

// Reads a price CSV (date,open,high,low,close,adjclose,volume) and an
// optional news CSV (date,headline). Bars come back sorted ascending by
// date; same-day headlines are concatenated with "; " in file order.
LoadedSeries load_series(const std::string& price_path,
                         const std::optional<std::string>& news_path = std::nullopt,
                         const std::string& symbol = "SERIES");

// Writes the series back out in the same two-file layout. Round-trips
// exactly: load_series(save_series(s)) == s.
void save_series(const MarketSeries& series, const std::string& price_path,
                 const std::optional<std::string>& news_path = std::nullopt);

SplitResult split_series(const MarketSeries& series, const SplitSpec& spec);

// Two-regime switching process for synthetic data. Regime 0 is the upbeat
// one; regime 1 the downbeat one. Log returns are drawn per day as
// drift[r] + vol[r] * N(0,1), so prices stay positive by construction.
struct RegimeSpec {
  double drift_optimistic = 0.004;
  double drift_pessimistic = -0.004;
  double vol_optimistic = 0.010;
  double vol_pessimistic = 0.014;
  double stay_prob = 0.97;           // per-day probability of keeping the regime
  double no_news_fraction = 0.30;    // fraction of days with no headline
  double headline_match_prob = 0.90; // chance a headline's tone matches the regime
  double start_price = 100.0;
  std::string symbol = "SYN";
};

struct SyntheticSeries {
  MarketSeries series;
  std::vector<int> regimes;  // active regime per bar (0 = optimistic)
};

// Deterministic for a fixed seed. Calendar skips weekends.
SyntheticSeries generate_synthetic_series(std::uint64_t seed, int days,
                                          const RegimeSpec& spec = {});

}  // namespace llmoe

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "llmoe/market_data.hpp"

namespace llmoe {

inline constexpr int kFeaturesPerDay = 11;
inline constexpr int kWindowDays = 5;
inline constexpr int kWindowVectorSize = kFeaturesPerDay * kWindowDays;  // 55
inline constexpr int kMaxRollingWindow = 30;  // zd_30 needs 29 prior days

// The 11 engineered ratios for one day, plus its descriptive string.
// Field order here is the canonical order of the 11-vector.
struct DayFeatures {
  Date date;
  double z_open = 0.0;
  double z_high = 0.0;
  double z_low = 0.0;
  double z_close = 0.0;
  double z_adjclose = 0.0;
  double zd_5 = 0.0;
  double zd_10 = 0.0;
  double zd_15 = 0.0;
  double zd_20 = 0.0;
  double zd_25 = 0.0;
  double zd_30 = 0.0;
  std::string descriptive;

  std::array<double, kFeaturesPerDay> values() const {
    return {z_open, z_high, z_low, z_close, z_adjclose,
            zd_5,   zd_10,  zd_15, zd_20,   zd_25,      zd_30};
  }
};

// Five consecutive days flattened to a 55-vector (oldest day first, each
// day contributing its 11 features in DayFeatures order), the five
// descriptive strings, and the next-day movement label.
struct WindowSample {
  Date anchor_date;
  std::array<double, kWindowVectorSize> vector{};
  std::array<std::string, kWindowDays> window_texts;
  int label = 0;              // 1 = next-day adjclose up, 0 = down (ties down)
  double next_return = 0.0;   // adjclose_{t+1} / adjclose_t - 1
};

// Features for the bar at `index`. Requires 29 prior days (zd_30) and one
// prior day (z_close); throws std::runtime_error otherwise.
DayFeatures compute_day_features(const MarketSeries& series, std::size_t index);

// Deterministic one-line rendering of a day: all 11 values at 4 decimals,
// headline or the fixed sentinel "No relevant news.".
std::string build_descriptive(const DayFeatures& day,
                              const std::optional<std::string>& headline);

// One sample per anchor day t where days t-4..t all have features and day
// t+1 exists. Requires at least 35 bars.
std::vector<WindowSample> build_window_samples(const MarketSeries& series);

// Delimited dump for external inspection: anchor_date, 55 feature columns,
// label.
void write_feature_dump(const std::vector<WindowSample>& samples,
                        const std::string& path);

}  // namespace llmoe

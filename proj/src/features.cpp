#include "llmoe/features.hpp"

#include <sstream>
#include <stdexcept>

#include "llmoe/util.hpp"

namespace llmoe {

DayFeatures compute_day_features(const MarketSeries& series, std::size_t index) {
  if (index >= series.bars.size()) {
    throw std::runtime_error("compute_day_features: index " +
                             std::to_string(index) + " out of range");
  }
  if (index < kMaxRollingWindow - 1) {
    throw std::runtime_error(
        "compute_day_features: index " + std::to_string(index) +
        " lacks history; zd_30 needs 29 prior days (first eligible index is 29)");
  }
  const OhlcvBar& bar = series.bars[index];
  const OhlcvBar& prev = series.bars[index - 1];

  DayFeatures day;
  day.date = bar.date;
  day.z_open = bar.open / bar.close - 1.0;
  day.z_high = bar.high / bar.close - 1.0;
  day.z_low = bar.low / bar.close - 1.0;
  day.z_close = bar.close / prev.close - 1.0;
  day.z_adjclose = bar.adjclose / prev.adjclose - 1.0;

  double* rolling[6] = {&day.zd_5,  &day.zd_10, &day.zd_15,
                        &day.zd_20, &day.zd_25, &day.zd_30};
  for (int k = 0; k < 6; ++k) {
    const int n = 5 * (k + 1);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      sum += series.bars[index - i].adjclose;
    }
    *rolling[k] = (sum / n) / bar.adjclose - 1.0;
  }

  day.descriptive = build_descriptive(day, bar.headline);
  return day;
}

std::string build_descriptive(const DayFeatures& day,
                              const std::optional<std::string>& headline) {
  std::ostringstream out;
  out << "Date " << format_date(day.date) << ": open " << format_fixed4(day.z_open)
      << ", high " << format_fixed4(day.z_high) << ", low "
      << format_fixed4(day.z_low) << ", close chg " << format_fixed4(day.z_close)
      << ", adj chg " << format_fixed4(day.z_adjclose)
      << ", 5/10/15/20/25/30-day dev " << format_fixed4(day.zd_5) << '/'
      << format_fixed4(day.zd_10) << '/' << format_fixed4(day.zd_15) << '/'
      << format_fixed4(day.zd_20) << '/' << format_fixed4(day.zd_25) << '/'
      << format_fixed4(day.zd_30) << ". News: "
      << (headline && !headline->empty() ? *headline : "No relevant news.");
  return out.str();
}

std::vector<WindowSample> build_window_samples(const MarketSeries& series) {
  const std::size_t n = series.bars.size();
  // First featured day is index 29; first full window anchors at 33; the
  // anchor also needs a next day, so the minimum usable length is 35.
  if (n < 35) {
    throw std::runtime_error("build_window_samples: need at least 35 bars, got " +
                             std::to_string(n));
  }

  // Features for every eligible day, computed once.
  const std::size_t first_feature = kMaxRollingWindow - 1;  // 29
  std::vector<DayFeatures> days;
  days.reserve(n - first_feature);
  for (std::size_t i = first_feature; i < n; ++i) {
    days.push_back(compute_day_features(series, i));
  }

  std::vector<WindowSample> samples;
  const std::size_t first_anchor = first_feature + kWindowDays - 1;  // 33
  for (std::size_t t = first_anchor; t + 1 < n; ++t) {
    WindowSample sample;
    sample.anchor_date = series.bars[t].date;
    for (int d = 0; d < kWindowDays; ++d) {
      const DayFeatures& day = days[t - first_feature - (kWindowDays - 1) + d];
      const auto values = day.values();
      for (int f = 0; f < kFeaturesPerDay; ++f) {
        sample.vector[d * kFeaturesPerDay + f] = values[f];
      }
      sample.window_texts[d] = day.descriptive;
    }
    const double adj_t = series.bars[t].adjclose;
    const double adj_next = series.bars[t + 1].adjclose;
    sample.label = adj_next > adj_t ? 1 : 0;  // ties label down
    sample.next_return = adj_next / adj_t - 1.0;
    samples.push_back(std::move(sample));
  }
  return samples;
}

void write_feature_dump(const std::vector<WindowSample>& samples,
                        const std::string& path) {
  static const char* kFeatureNames[kFeaturesPerDay] = {
      "z_open", "z_high", "z_low",  "z_close", "z_adjclose", "zd_5",
      "zd_10",  "zd_15",  "zd_20", "zd_25",   "zd_30"};
  std::ostringstream out;
  out << "anchor_date";
  for (int d = 0; d < kWindowDays; ++d) {
    for (int f = 0; f < kFeaturesPerDay; ++f) {
      out << ",d" << d << '_' << kFeatureNames[f];
    }
  }
  out << ",label\n";
  for (const auto& sample : samples) {
    out << format_date(sample.anchor_date);
    for (double v : sample.vector) {
      out << ',' << format_double(v);
    }
    out << ',' << sample.label << '\n';
  }
  atomic_write_file(path, out.str());
}

}  // namespace llmoe

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "llmoe/dates.hpp"

namespace llmoe {

inline constexpr double kTradingDaysPerYear = 252.0;

struct EquityPoint {
  Date date;
  double value = 0.0;
};

struct EquityCurve {
  std::vector<EquityPoint> points;  // first point carries initial_value
  double initial_value = 1.0;
};

// The seven evaluation metrics. Ratios whose denominator can vanish are
// optional: nullopt is the "undefined" sentinel and never leaks NaN into
// aggregates. dd is annualized for report consistency with vol.
struct MetricsReport {
  double tr = 0.0;                // percent
  std::optional<double> vol;      // annualized; needs >= 2 returns
  std::optional<double> sr;
  std::optional<double> sor;
  double mdd = 0.0;               // percent
  std::optional<double> cr;
  std::optional<double> dd;       // annualized downside deviation
};

struct SimulationResult {
  EquityCurve curve;
  std::vector<double> strategy_returns;  // one per prediction day
};

// Per-metric mean and sample std over seeds; undefined sentinels are
// excluded from that metric's aggregation and counted.
struct MetricAggregate {
  std::optional<double> mean;
  std::optional<double> stddev;  // needs >= 2 defined values
  int used = 0;
  int excluded = 0;
};

struct TrialAggregate {
  MetricAggregate tr, vol, sr, sor, mdd, cr, dd;
};

// All-in/all-out: day t earns next_return_t when predicted up, 0 when in
// cash. Equity compounds multiplicatively from initial_value; no costs.
// anchor_dates must align with returns (same length).
SimulationResult simulate_all_in_all_out(const std::vector<bool>& predicted_up,
                                         const std::vector<double>& realized_returns,
                                         const std::vector<Date>& anchor_dates,
                                         double initial_value = 1.0);

double total_return(const EquityCurve& curve);

// Sample (n-1) std of daily returns * sqrt(252). Throws on < 2 returns.
double annualized_volatility(const std::vector<double>& daily_returns);

// (mean excess / sample std of excess) * sqrt(252); nullopt when std is 0.
std::optional<double> sharpe_ratio(const std::vector<double>& daily_returns,
                                   double risk_free_daily = 0.0);

// (mean excess / daily downside deviation) * sqrt(252); nullopt when there
// is no downside.
std::optional<double> sortino_ratio(const std::vector<double>& daily_returns,
                                    double risk_free_daily = 0.0);

// Largest peak-to-trough decline, percent of the running peak.
double max_drawdown(const EquityCurve& curve);

// tr / mdd; nullopt when mdd is 0.
std::optional<double> calmar_ratio(double tr, double mdd);

// sqrt(sum of squared negative returns / N). Daily, pre-annualization;
// positive returns contribute 0 but still count in N.
double downside_deviation(const std::vector<double>& daily_returns);

// Assembles all seven metrics from one simulation.
MetricsReport compute_metrics(const EquityCurve& curve,
                              const std::vector<double>& daily_returns,
                              double risk_free_daily = 0.0);

// Throws on fewer than 2 reports.
TrialAggregate aggregate_trials(const std::vector<MetricsReport>& reports);

// Delimited export (date,value) for external plotting.
void write_equity_curve(const EquityCurve& curve, const std::string& path);

}  // namespace llmoe

#include "llmoe/backtest.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "llmoe/util.hpp"

namespace llmoe {

namespace {

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

// Sample (n-1) standard deviation.
double sample_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

SimulationResult simulate_all_in_all_out(const std::vector<bool>& predicted_up,
                                         const std::vector<double>& realized_returns,
                                         const std::vector<Date>& anchor_dates,
                                         double initial_value) {
  if (predicted_up.size() != realized_returns.size() ||
      predicted_up.size() != anchor_dates.size()) {
    throw std::invalid_argument(
        "simulate_all_in_all_out: predictions, returns and dates must align");
  }
  if (!(initial_value > 0.0)) {
    throw std::invalid_argument("simulate_all_in_all_out: initial value must be > 0");
  }
  SimulationResult result;
  result.curve.initial_value = initial_value;
  result.strategy_returns.reserve(predicted_up.size());
  result.curve.points.reserve(predicted_up.size() + 1);

  Date start = anchor_dates.empty() ? Date(2000, 1, 3) : anchor_dates.front();
  result.curve.points.push_back({start, initial_value});
  double equity = initial_value;
  for (std::size_t i = 0; i < predicted_up.size(); ++i) {
    const double r = predicted_up[i] ? realized_returns[i] : 0.0;
    result.strategy_returns.push_back(r);
    equity *= 1.0 + r;
    // Prediction i realizes on the next trading day; anchors are
    // consecutive, so that is the next anchor (or one day past the last).
    const Date when = i + 1 < anchor_dates.size()
                          ? anchor_dates[i + 1]
                          : next_trading_day(anchor_dates[i]);
    result.curve.points.push_back({when, equity});
  }
  return result;
}

double total_return(const EquityCurve& curve) {
  if (curve.points.empty()) {
    throw std::invalid_argument("total_return: empty curve");
  }
  const double initial = curve.points.front().value;
  const double final_value = curve.points.back().value;
  return (final_value - initial) / initial * 100.0;
}

double annualized_volatility(const std::vector<double>& daily_returns) {
  if (daily_returns.size() < 2) {
    throw std::invalid_argument("annualized_volatility: need at least 2 returns");
  }
  return sample_std(daily_returns) * std::sqrt(kTradingDaysPerYear);
}

std::optional<double> sharpe_ratio(const std::vector<double>& daily_returns,
                                   double risk_free_daily) {
  if (daily_returns.size() < 2) return std::nullopt;
  std::vector<double> excess;
  excess.reserve(daily_returns.size());
  for (double r : daily_returns) excess.push_back(r - risk_free_daily);
  const double sd = sample_std(excess);
  if (sd == 0.0) return std::nullopt;
  return mean_of(excess) / sd * std::sqrt(kTradingDaysPerYear);
}

std::optional<double> sortino_ratio(const std::vector<double>& daily_returns,
                                    double risk_free_daily) {
  if (daily_returns.empty()) return std::nullopt;
  std::vector<double> excess;
  excess.reserve(daily_returns.size());
  for (double r : daily_returns) excess.push_back(r - risk_free_daily);
  const double dd = downside_deviation(excess);
  if (dd == 0.0) return std::nullopt;
  return mean_of(excess) / dd * std::sqrt(kTradingDaysPerYear);
}

double max_drawdown(const EquityCurve& curve) {
  if (curve.points.empty()) {
    throw std::invalid_argument("max_drawdown: empty curve");
  }
  double peak = curve.points.front().value;
  double worst = 0.0;
  for (const auto& point : curve.points) {
    peak = std::max(peak, point.value);
    worst = std::max(worst, (peak - point.value) / peak);
  }
  return worst * 100.0;
}

std::optional<double> calmar_ratio(double tr, double mdd) {
  if (mdd == 0.0) return std::nullopt;
  return tr / mdd;
}

double downside_deviation(const std::vector<double>& daily_returns) {
  if (daily_returns.empty()) {
    throw std::invalid_argument("downside_deviation: need at least 1 return");
  }
  double ss = 0.0;
  for (double r : daily_returns) {
    if (r < 0.0) ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(daily_returns.size()));
}

MetricsReport compute_metrics(const EquityCurve& curve,
                              const std::vector<double>& daily_returns,
                              double risk_free_daily) {
  MetricsReport report;
  report.tr = total_return(curve);
  report.mdd = max_drawdown(curve);
  report.cr = calmar_ratio(report.tr, report.mdd);
  if (daily_returns.size() >= 2) {
    report.vol = annualized_volatility(daily_returns);
  }
  report.sr = sharpe_ratio(daily_returns, risk_free_daily);
  report.sor = sortino_ratio(daily_returns, risk_free_daily);
  if (!daily_returns.empty()) {
    report.dd = downside_deviation(daily_returns) * std::sqrt(kTradingDaysPerYear);
  }
  return report;
}

namespace {

MetricAggregate aggregate_metric(const std::vector<std::optional<double>>& values) {
  MetricAggregate agg;
  std::vector<double> defined;
  for (const auto& v : values) {
    if (v.has_value()) {
      defined.push_back(*v);
    } else {
      ++agg.excluded;
    }
  }
  agg.used = static_cast<int>(defined.size());
  if (!defined.empty()) {
    agg.mean = mean_of(defined);
  }
  if (defined.size() >= 2) {
    agg.stddev = sample_std(defined);
  }
  return agg;
}

}  // namespace

TrialAggregate aggregate_trials(const std::vector<MetricsReport>& reports) {
  if (reports.size() < 2) {
    throw std::invalid_argument("aggregate_trials: need at least 2 reports");
  }
  auto collect = [&](auto getter) {
    std::vector<std::optional<double>> values;
    values.reserve(reports.size());
    for (const auto& r : reports) values.push_back(getter(r));
    return aggregate_metric(values);
  };
  TrialAggregate agg;
  agg.tr = collect([](const MetricsReport& r) { return std::optional<double>(r.tr); });
  agg.vol = collect([](const MetricsReport& r) { return r.vol; });
  agg.sr = collect([](const MetricsReport& r) { return r.sr; });
  agg.sor = collect([](const MetricsReport& r) { return r.sor; });
  agg.mdd = collect([](const MetricsReport& r) { return std::optional<double>(r.mdd); });
  agg.cr = collect([](const MetricsReport& r) { return r.cr; });
  agg.dd = collect([](const MetricsReport& r) { return r.dd; });
  return agg;
}

void write_equity_curve(const EquityCurve& curve, const std::string& path) {
  std::ostringstream out;
  out << "date,value\n";
  for (const auto& point : curve.points) {
    out << format_date(point.date) << ',' << format_double(point.value) << '\n';
  }
  atomic_write_file(path, out.str());
}

}  // namespace llmoe

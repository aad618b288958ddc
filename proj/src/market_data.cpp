#include "llmoe/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "llmoe/rng.hpp"
#include "llmoe/util.hpp"

namespace llmoe {

namespace {

// Minimal RFC-4180 field splitting: quoted fields may contain commas and
// doubled quotes. Headlines never span lines.
std::vector<std::string> split_csv_line(const std::string& line,
                                        const std::string& where) {
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (in_quotes) {
    throw std::runtime_error(where + ": unterminated quoted field");
  }
  fields.push_back(field);
  return fields;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += '"';
  return out;
}

double parse_price_field(const std::string& text, const std::string& file,
                         int line_no, const char* column) {
  std::string t = trim(text);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size()) {
    throw std::runtime_error(file + ":" + std::to_string(line_no) +
                             ": non-numeric value '" + t + "' in column " +
                             column);
  }
  return v;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open file: " + path);
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

void validate_bar(const OhlcvBar& bar, const std::string& context) {
  auto fail = [&](const std::string& what) {
    throw std::runtime_error(context + ": " + what + " (date " +
                             format_date(bar.date) + ")");
  };
  for (auto [value, name] :
       {std::pair{bar.open, "open"}, {bar.high, "high"}, {bar.low, "low"},
        {bar.close, "close"}, {bar.adjclose, "adjclose"}}) {
    if (!(value > 0.0) || !std::isfinite(value)) {
      fail(std::string(name) + " must be strictly positive");
    }
  }
  if (bar.low > std::min(bar.open, bar.close)) {
    fail("low exceeds min(open, close)");
  }
  if (bar.high < std::max(bar.open, bar.close)) {
    fail("high is below max(open, close)");
  }
  if (!(bar.volume >= 0.0) || !std::isfinite(bar.volume)) {
    fail("volume must be non-negative");
  }
}

LoadedSeries load_series(const std::string& price_path,
                         const std::optional<std::string>& news_path,
                         const std::string& symbol) {
  const auto lines = read_lines(price_path);
  if (lines.empty()) {
    throw std::runtime_error(price_path + ": empty price file");
  }
  const std::string expected_header = "date,open,high,low,close,adjclose,volume";
  if (trim(lines[0]) != expected_header) {
    throw std::runtime_error(price_path + ":1: expected header '" +
                             expected_header + "', got '" + trim(lines[0]) + "'");
  }

  MarketSeries series;
  series.symbol = symbol;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const int line_no = static_cast<int>(i) + 1;
    auto fields = split_csv_line(lines[i], price_path + ":" + std::to_string(line_no));
    if (fields.size() != 7) {
      throw std::runtime_error(price_path + ":" + std::to_string(line_no) +
                               ": expected 7 columns, got " +
                               std::to_string(fields.size()));
    }
    OhlcvBar bar;
    try {
      bar.date = parse_date(trim(fields[0]));
    } catch (const std::exception& e) {
      throw std::runtime_error(price_path + ":" + std::to_string(line_no) +
                               ": column date: " + e.what());
    }
    bar.open = parse_price_field(fields[1], price_path, line_no, "open");
    bar.high = parse_price_field(fields[2], price_path, line_no, "high");
    bar.low = parse_price_field(fields[3], price_path, line_no, "low");
    bar.close = parse_price_field(fields[4], price_path, line_no, "close");
    bar.adjclose = parse_price_field(fields[5], price_path, line_no, "adjclose");
    bar.volume = parse_price_field(fields[6], price_path, line_no, "volume");
    validate_bar(bar, price_path + ":" + std::to_string(line_no));
    series.bars.push_back(std::move(bar));
  }
  if (series.bars.empty()) {
    throw std::runtime_error(price_path + ": empty price file");
  }

  std::stable_sort(series.bars.begin(), series.bars.end(),
                   [](const OhlcvBar& a, const OhlcvBar& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < series.bars.size(); ++i) {
    if (series.bars[i].date == series.bars[i - 1].date) {
      throw std::runtime_error(price_path + ": duplicate price date " +
                               format_date(series.bars[i].date));
    }
  }

  LoadedSeries result;
  result.series = std::move(series);

  if (news_path) {
    std::map<Date, std::size_t> index_by_date;
    for (std::size_t i = 0; i < result.series.bars.size(); ++i) {
      index_by_date[result.series.bars[i].date] = i;
    }
    const auto news_lines = read_lines(*news_path);
    if (news_lines.empty() || trim(news_lines[0]) != "date,headline") {
      throw std::runtime_error(*news_path +
                               ":1: expected header 'date,headline'");
    }
    for (std::size_t i = 1; i < news_lines.size(); ++i) {
      if (trim(news_lines[i]).empty()) continue;
      const int line_no = static_cast<int>(i) + 1;
      auto fields =
          split_csv_line(news_lines[i], *news_path + ":" + std::to_string(line_no));
      if (fields.size() != 2) {
        throw std::runtime_error(*news_path + ":" + std::to_string(line_no) +
                                 ": expected 2 columns, got " +
                                 std::to_string(fields.size()));
      }
      Date date;
      try {
        date = parse_date(trim(fields[0]));
      } catch (const std::exception& e) {
        throw std::runtime_error(*news_path + ":" + std::to_string(line_no) +
                                 ": column date: " + e.what());
      }
      std::string headline = trim(fields[1]);
      if (headline.empty()) continue;
      auto it = index_by_date.find(date);
      if (it == index_by_date.end()) {
        ++result.unmatched_news;
        continue;
      }
      auto& slot = result.series.bars[it->second].headline;
      if (slot) {
        *slot += "; " + headline;
      } else {
        slot = headline;
      }
    }
  }
  return result;
}

void save_series(const MarketSeries& series, const std::string& price_path,
                 const std::optional<std::string>& news_path) {
  std::ostringstream prices;
  prices << "date,open,high,low,close,adjclose,volume\n";
  for (const auto& bar : series.bars) {
    prices << format_date(bar.date) << ',' << format_double(bar.open) << ','
           << format_double(bar.high) << ',' << format_double(bar.low) << ','
           << format_double(bar.close) << ',' << format_double(bar.adjclose)
           << ',' << format_double(bar.volume) << '\n';
  }
  atomic_write_file(price_path, prices.str());

  if (news_path) {
    std::ostringstream news;
    news << "date,headline\n";
    for (const auto& bar : series.bars) {
      if (bar.headline && !bar.headline->empty()) {
        news << format_date(bar.date) << ',' << csv_quote(*bar.headline) << '\n';
      }
    }
    atomic_write_file(*news_path, news.str());
  }
}

SplitResult split_series(const MarketSeries& series, const SplitSpec& spec) {
  if (series.bars.empty()) {
    throw std::runtime_error("split_series: empty series");
  }
  if (!(spec.train_fraction > 0.0) || !(spec.train_fraction < 1.0)) {
    throw std::invalid_argument("split_series: train_fraction must be in (0,1), got " +
                                format_double(spec.train_fraction));
  }
  const auto n = series.bars.size();
  // ceil of the fraction; the epsilon guards against the product landing a
  // hair above an exact integer.
  auto n_train = static_cast<std::size_t>(
      std::ceil(spec.train_fraction * static_cast<double>(n) - 1e-9));
  n_train = std::min(std::max<std::size_t>(n_train, 1), n);

  SplitResult result;
  result.train.symbol = series.symbol;
  result.test.symbol = series.symbol;
  result.train.bars.assign(series.bars.begin(), series.bars.begin() + n_train);
  result.test.bars.assign(series.bars.begin() + n_train, series.bars.end());
  result.boundary_date = result.train.bars.back().date;
  return result;
}

namespace {

const std::vector<std::string>& optimistic_headlines() {
  static const std::vector<std::string> pool = {
      "%s rallies as analysts raise price targets",
      "Strong quarterly earnings lift %s outlook",
      "%s announces record revenue and expanding margins",
      "Upbeat guidance from %s cheers investors",
      "%s wins major contract, shares climb",
      "Dividend hike and buyback plan boost confidence in %s",
  };
  return pool;
}

const std::vector<std::string>& pessimistic_headlines() {
  static const std::vector<std::string> pool = {
      "%s slides on disappointing earnings",
      "Analysts cut %s targets amid demand worries",
      "%s faces regulatory probe, shares under pressure",
      "Weak guidance from %s rattles investors",
      "Layoffs announced at %s as growth stalls",
      "%s loses key customer, outlook dims",
  };
  return pool;
}

std::string fill_symbol(const std::string& tmpl, const std::string& symbol) {
  std::string out = tmpl;
  auto pos = out.find("%s");
  if (pos != std::string::npos) {
    out.replace(pos, 2, symbol);
  }
  return out;
}

}  // namespace

SyntheticSeries generate_synthetic_series(std::uint64_t seed, int days,
                                          const RegimeSpec& spec) {
  if (days < 40) {
    throw std::invalid_argument(
        "generate_synthetic_series: need at least 40 days (30-day rolling "
        "features + 5-day window + label), got " +
        std::to_string(days));
  }
  if (!(spec.start_price > 0.0)) {
    throw std::invalid_argument("generate_synthetic_series: start_price must be > 0");
  }
  for (auto [value, name] :
       {std::pair{spec.stay_prob, "stay_prob"},
        {spec.no_news_fraction, "no_news_fraction"},
        {spec.headline_match_prob, "headline_match_prob"}}) {
    if (!(value >= 0.0) || !(value <= 1.0)) {
      throw std::invalid_argument(std::string("generate_synthetic_series: ") +
                                  name + " must be in [0,1]");
    }
  }
  if (spec.vol_optimistic < 0.0 || spec.vol_pessimistic < 0.0) {
    throw std::invalid_argument("generate_synthetic_series: vol must be >= 0");
  }

  Rng rng(seed);
  SyntheticSeries out;
  out.series.symbol = spec.symbol;
  out.series.bars.reserve(days);
  out.regimes.reserve(days);

  Date date(2015, 1, 5);  // a Monday
  double prev_close = spec.start_price;
  int regime = 0;

  for (int day = 0; day < days; ++day) {
    if (day > 0) {
      if (!rng.bernoulli(spec.stay_prob)) regime = 1 - regime;
      date = next_trading_day(date);
    }
    const double drift = regime == 0 ? spec.drift_optimistic : spec.drift_pessimistic;
    const double vol = regime == 0 ? spec.vol_optimistic : spec.vol_pessimistic;

    OhlcvBar bar;
    bar.date = date;
    bar.close = prev_close * std::exp(drift + vol * rng.normal());
    bar.open = prev_close * std::exp(0.3 * vol * rng.normal());
    const double hi_base = std::max(bar.open, bar.close);
    const double lo_base = std::min(bar.open, bar.close);
    bar.high = hi_base * std::exp(0.5 * vol * std::fabs(rng.normal()));
    bar.low = lo_base * std::exp(-0.5 * vol * std::fabs(rng.normal()));
    bar.adjclose = bar.close;
    bar.volume = std::floor(1e6 * std::exp(0.3 * rng.normal()));

    const bool has_news = !rng.bernoulli(spec.no_news_fraction);
    if (has_news) {
      int tone = regime;
      if (!rng.bernoulli(spec.headline_match_prob)) tone = 1 - tone;
      const auto& pool = tone == 0 ? optimistic_headlines() : pessimistic_headlines();
      const auto pick = rng.below(pool.size());
      bar.headline = fill_symbol(pool[pick], spec.symbol);
    }

    prev_close = bar.close;
    out.series.bars.push_back(std::move(bar));
    out.regimes.push_back(regime);
  }
  return out;
}

}  // namespace llmoe

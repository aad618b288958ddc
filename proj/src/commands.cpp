#include "llmoe/commands.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "llmoe/features.hpp"
#include "llmoe/util.hpp"

namespace llmoe {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_known_keys(const json& j, std::initializer_list<const char*> known,
                      const std::string& context) {
  for (const auto& item : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return item.key() == k;
        }) == known.end()) {
      throw std::runtime_error(context + ": unknown key \"" + item.key() + "\"");
    }
  }
}

// Chronological head count for a fractional split; both sides stay
// non-empty. Callers ensure n >= 2.
std::size_t leading_count(std::size_t n, double fraction) {
  const auto raw = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(raw, 1, n - 1);
}

std::string resolve_api_key(const RunConfig& config) {
  if (config.router_api_key_env.empty()) return "";
  const char* value = std::getenv(config.router_api_key_env.c_str());
  if (value == nullptr) {
    throw std::runtime_error("environment variable " + config.router_api_key_env +
                             " named by router.api_key_env is not set");
  }
  return value;
}

struct RouterBundle {
  std::unique_ptr<DecisionCache> cache;
  std::unique_ptr<Router> router;
  LlmRouter* llm = nullptr;
};

RouterBundle make_router(const RunConfig& config) {
  RouterBundle bundle;
  if (config.router_kind == "rule") {
    bundle.router = std::make_unique<RuleRouter>();
  } else if (config.router_kind == "cache") {
    bundle.cache = std::make_unique<DecisionCache>(config.cache_path);
    bundle.router = std::make_unique<CacheRouter>(*bundle.cache);
  } else if (config.router_kind == "llm") {
    RouterConfig rc = config.router;
    rc.api_key = resolve_api_key(config);
    bundle.cache = std::make_unique<DecisionCache>(config.cache_path);
    auto llm = std::make_unique<LlmRouter>(rc, *bundle.cache);
    bundle.llm = llm.get();
    bundle.router = std::move(llm);
  } else {
    throw std::invalid_argument("unknown router kind: " + config.router_kind);
  }
  return bundle;
}

json section_or_empty(const json& j, const char* key) {
  if (!j.contains(key)) return json::object();
  if (!j.at(key).is_object()) {
    throw std::runtime_error(std::string("config: \"") + key +
                             "\" must be an object");
  }
  return j.at(key);
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  if (!j.is_object()) {
    throw std::runtime_error(path + ": top-level JSON object expected");
  }
  check_known_keys(j,
                   {"data", "train_fraction", "router", "training", "seeds",
                    "min_partition_size", "grid", "output_dir", "jobs"},
                   path);

  RunConfig cfg;

  const json data = section_or_empty(j, "data");
  check_known_keys(data, {"prices", "news", "synthetic"}, path + ": data");
  if (data.contains("prices")) cfg.prices_path = data.at("prices").get<std::string>();
  if (data.contains("news")) cfg.news_path = data.at("news").get<std::string>();
  if (data.contains("synthetic")) {
    cfg.synthetic = true;
    const json& syn = data.at("synthetic");
    check_known_keys(syn,
                     {"seed", "days", "drift_optimistic", "drift_pessimistic",
                      "vol_optimistic", "vol_pessimistic", "stay_prob",
                      "no_news_fraction", "headline_match_prob", "start_price",
                      "symbol"},
                     path + ": data.synthetic");
    cfg.synthetic_seed = syn.value("seed", cfg.synthetic_seed);
    cfg.synthetic_days = syn.value("days", cfg.synthetic_days);
    auto& r = cfg.regime;
    r.drift_optimistic = syn.value("drift_optimistic", r.drift_optimistic);
    r.drift_pessimistic = syn.value("drift_pessimistic", r.drift_pessimistic);
    r.vol_optimistic = syn.value("vol_optimistic", r.vol_optimistic);
    r.vol_pessimistic = syn.value("vol_pessimistic", r.vol_pessimistic);
    r.stay_prob = syn.value("stay_prob", r.stay_prob);
    r.no_news_fraction = syn.value("no_news_fraction", r.no_news_fraction);
    r.headline_match_prob = syn.value("headline_match_prob", r.headline_match_prob);
    r.start_price = syn.value("start_price", r.start_price);
    r.symbol = syn.value("symbol", r.symbol);
  }
  if (cfg.synthetic && cfg.prices_path) {
    throw std::runtime_error(path + ": data.prices and data.synthetic are exclusive");
  }
  if (!cfg.synthetic && !cfg.prices_path) {
    throw std::runtime_error(path + ": data needs either \"prices\" or \"synthetic\"");
  }

  cfg.train_fraction = j.value("train_fraction", cfg.train_fraction);
  if (!(cfg.train_fraction > 0.0) || !(cfg.train_fraction < 1.0)) {
    throw std::runtime_error(path + ": train_fraction must be in (0, 1)");
  }

  const json router = section_or_empty(j, "router");
  check_known_keys(router,
                   {"kind", "endpoint", "model", "temperature", "max_retries",
                    "timeout_seconds", "fallback", "api_key_env", "cache",
                    "concurrency"},
                   path + ": router");
  cfg.router_kind = router.value("kind", cfg.router_kind);
  if (cfg.router_kind != "rule" && cfg.router_kind != "llm" &&
      cfg.router_kind != "cache") {
    throw std::runtime_error(path + ": router.kind must be rule, llm, or cache");
  }
  cfg.router.endpoint_url = router.value("endpoint", "");
  cfg.router.model_id = router.value("model", cfg.router.model_id);
  cfg.router.temperature = router.value("temperature", cfg.router.temperature);
  cfg.router.max_retries = router.value("max_retries", cfg.router.max_retries);
  cfg.router.timeout_seconds =
      router.value("timeout_seconds", cfg.router.timeout_seconds);
  const std::string fallback = router.value("fallback", "rule");
  if (fallback == "rule") {
    cfg.router.fallback = RouterConfig::Fallback::rule;
  } else if (fallback == "fail") {
    cfg.router.fallback = RouterConfig::Fallback::fail;
  } else {
    throw std::runtime_error(path + ": router.fallback must be rule or fail");
  }
  cfg.router_api_key_env = router.value("api_key_env", "");
  cfg.cache_path = router.value("cache", "");
  cfg.router_concurrency = router.value("concurrency", cfg.router_concurrency);
  if (cfg.router_concurrency < 1) {
    throw std::runtime_error(path + ": router.concurrency must be >= 1");
  }
  if (cfg.router_kind == "llm" && cfg.router.endpoint_url.empty()) {
    throw std::runtime_error(path + ": router.endpoint is required when kind is llm");
  }
  if (cfg.router.max_retries < 0) {
    throw std::runtime_error(path + ": router.max_retries must be >= 0");
  }

  const json training = section_or_empty(j, "training");
  check_known_keys(training,
                   {"learning_rate", "batch_size", "epochs", "optimizer", "seed",
                    "early_stop_patience"},
                   path + ": training");
  cfg.training.learning_rate =
      training.value("learning_rate", cfg.training.learning_rate);
  cfg.training.batch_size = training.value("batch_size", cfg.training.batch_size);
  cfg.training.epochs = training.value("epochs", cfg.training.epochs);
  const std::string optimizer = training.value("optimizer", "adam");
  if (optimizer == "adam") {
    cfg.training.optimizer = TrainConfig::Optimizer::adam;
  } else if (optimizer == "sgd") {
    cfg.training.optimizer = TrainConfig::Optimizer::sgd;
  } else {
    throw std::runtime_error(path + ": training.optimizer must be adam or sgd");
  }
  cfg.training.seed = training.value("seed", cfg.training.seed);
  cfg.training.early_stop_patience =
      training.value("early_stop_patience", cfg.training.early_stop_patience);
  if (!(cfg.training.learning_rate > 0.0) || cfg.training.batch_size < 1 ||
      cfg.training.epochs < 1 || cfg.training.early_stop_patience < 0) {
    throw std::runtime_error(path + ": invalid training section");
  }

  if (j.contains("seeds")) {
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) {
      throw std::runtime_error(path + ": seeds must be non-empty");
    }
  }
  cfg.min_partition_size = j.value("min_partition_size", cfg.min_partition_size);
  if (cfg.min_partition_size < 1) {
    throw std::runtime_error(path + ": min_partition_size must be >= 1");
  }

  const json grid = section_or_empty(j, "grid");
  check_known_keys(grid, {"learning_rates", "batch_sizes"}, path + ": grid");
  cfg.grid_learning_rates =
      grid.value("learning_rates", cfg.grid_learning_rates);
  cfg.grid_batch_sizes = grid.value("batch_sizes", cfg.grid_batch_sizes);
  for (double lr : cfg.grid_learning_rates) {
    if (!(lr > 0.0)) throw std::runtime_error(path + ": grid learning rates must be > 0");
  }
  for (int b : cfg.grid_batch_sizes) {
    if (b < 1) throw std::runtime_error(path + ": grid batch sizes must be >= 1");
  }

  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  if (cfg.output_dir.empty()) {
    throw std::runtime_error(path + ": output_dir must be non-empty");
  }
  cfg.jobs = j.value("jobs", cfg.jobs);
  if (cfg.jobs < 1) {
    throw std::runtime_error(path + ": jobs must be >= 1");
  }
  if (cfg.cache_path.empty()) {
    cfg.cache_path = cfg.output_dir + "/decisions.jsonl";
  }
  return cfg;
}

PrepareResult cmd_prepare(const RunConfig& config) {
  MarketSeries series;
  if (config.synthetic) {
    auto synthetic = generate_synthetic_series(config.synthetic_seed,
                                               config.synthetic_days, config.regime);
    series = std::move(synthetic.series);
    save_series(series, config.output_dir + "/data/prices.csv",
                config.output_dir + "/data/news.csv");
  } else {
    const std::string symbol = fs::path(*config.prices_path).stem().string();
    auto loaded = load_series(*config.prices_path, config.news_path, symbol);
    if (loaded.unmatched_news > 0) {
      std::cerr << "warning: " << loaded.unmatched_news
                << " news rows have no matching price bar and were dropped\n";
    }
    series = std::move(loaded.series);
  }

  const auto samples = build_window_samples(series);
  if (samples.size() < 2) {
    throw std::runtime_error("prepare: need at least 2 window samples, got " +
                             std::to_string(samples.size()));
  }
  const std::size_t n_train = leading_count(samples.size(), config.train_fraction);

  std::string jsonl;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    ordered_json row;
    row["anchor_date"] = format_date(s.anchor_date);
    row["split"] = i < n_train ? "train" : "test";
    row["label"] = s.label;
    row["next_return"] = s.next_return;
    row["vector"] = s.vector;
    row["window_texts"] = s.window_texts;
    jsonl += row.dump();
    jsonl += '\n';
  }
  atomic_write_file(config.output_dir + "/samples.jsonl", jsonl);
  write_feature_dump(samples, config.output_dir + "/samples.csv");

  int no_news_days = 0;
  for (const auto& bar : series.bars) {
    if (!bar.headline) ++no_news_days;
  }

  PrepareResult result;
  result.total_days = static_cast<int>(series.bars.size());
  result.no_news_days = no_news_days;
  result.train_samples = static_cast<int>(n_train);
  result.test_samples = static_cast<int>(samples.size() - n_train);
  result.first_date = series.bars.front().date;
  result.last_date = series.bars.back().date;

  ordered_json manifest;
  manifest["symbol"] = series.symbol;
  manifest["synthetic"] = config.synthetic;
  if (config.synthetic) manifest["synthetic_seed"] = config.synthetic_seed;
  manifest["total_days"] = result.total_days;
  manifest["no_news_days"] = result.no_news_days;
  manifest["first_date"] = format_date(result.first_date);
  manifest["last_date"] = format_date(result.last_date);
  manifest["train_fraction"] = config.train_fraction;
  manifest["train_samples"] = result.train_samples;
  manifest["test_samples"] = result.test_samples;
  manifest["first_test_anchor"] = format_date(samples[n_train].anchor_date);
  manifest["samples_digest"] = file_digest(config.output_dir + "/samples.jsonl");
  atomic_write_file(config.output_dir + "/manifest.json", manifest.dump(2) + "\n");
  return result;
}

PreparedData load_prepared(const std::string& output_dir) {
  const std::string path = output_dir + "/samples.jsonl";
  if (!fs::exists(path)) {
    throw std::runtime_error(path + ": not found (run the prepare command first)");
  }
  PreparedData out;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  bool seen_test = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    try {
      WindowSample s;
      s.anchor_date = parse_date(row.at("anchor_date").get<std::string>());
      const auto vec = row.at("vector").get<std::vector<double>>();
      if (vec.size() != s.vector.size()) {
        throw std::runtime_error("vector has " + std::to_string(vec.size()) +
                                 " values, expected " +
                                 std::to_string(s.vector.size()));
      }
      std::copy(vec.begin(), vec.end(), s.vector.begin());
      const auto texts = row.at("window_texts").get<std::vector<std::string>>();
      if (texts.size() != s.window_texts.size()) {
        throw std::runtime_error("window_texts has " + std::to_string(texts.size()) +
                                 " entries, expected " +
                                 std::to_string(s.window_texts.size()));
      }
      std::copy(texts.begin(), texts.end(), s.window_texts.begin());
      s.label = row.at("label").get<int>();
      if (s.label != 0 && s.label != 1) {
        throw std::runtime_error("label must be 0 or 1");
      }
      s.next_return = row.at("next_return").get<double>();
      const std::string split = row.at("split").get<std::string>();
      if (split == "train") {
        if (seen_test) {
          throw std::runtime_error("train sample after a test sample");
        }
        out.train.push_back(std::move(s));
      } else if (split == "test") {
        seen_test = true;
        out.test.push_back(std::move(s));
      } else {
        throw std::runtime_error("split must be train or test");
      }
    } catch (const json::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  if (out.train.empty() || out.test.empty()) {
    throw std::runtime_error(path + ": needs at least one train and one test sample");
  }
  out.samples_digest = file_digest(path);
  return out;
}

RouteResult cmd_route(const RunConfig& config) {
  auto prepared = load_prepared(config.output_dir);
  std::vector<WindowSample> all;
  all.reserve(prepared.train.size() + prepared.test.size());
  all.insert(all.end(), prepared.train.begin(), prepared.train.end());
  all.insert(all.end(), prepared.test.begin(), prepared.test.end());

  auto bundle = make_router(config);
  const auto decisions = route_all(all, *bundle.router, config.router_concurrency);

  DecisionCache* cache = bundle.cache.get();
  std::optional<DecisionCache> local;
  if (cache == nullptr) {
    local.emplace(config.cache_path);
    cache = &*local;
  }

  RouteResult result;
  for (const auto& d : decisions) {
    if (d.label == RouterLabel::optimistic) {
      ++result.optimistic;
    } else {
      ++result.pessimistic;
    }
    if (d.source == DecisionSource::cache) ++result.cache_hits;
    cache->put(d);
  }
  result.endpoint_calls = bundle.llm ? bundle.llm->endpoint_calls() : 0;
  return result;
}

namespace {

constexpr std::array<const char*, 4> kModelNames{"LLMoE", "MoE_2", "MoE_10", "MLP"};
constexpr std::array<const char*, 7> kMetricNames{"tr",  "sr", "cr", "sor",
                                                  "vol", "dd", "mdd"};

std::optional<double> metric_value(const MetricsReport& r, const std::string& name) {
  if (name == "tr") return r.tr;
  if (name == "sr") return r.sr;
  if (name == "cr") return r.cr;
  if (name == "sor") return r.sor;
  if (name == "vol") return r.vol;
  if (name == "dd") return r.dd;
  return r.mdd;
}

const MetricAggregate& metric_aggregate(const TrialAggregate& a,
                                        const std::string& name) {
  if (name == "tr") return a.tr;
  if (name == "sr") return a.sr;
  if (name == "cr") return a.cr;
  if (name == "sor") return a.sor;
  if (name == "vol") return a.vol;
  if (name == "dd") return a.dd;
  return a.mdd;
}

// Pads by display width; "±" is two bytes but one column.
std::string pad_display(std::string s, std::size_t width) {
  std::size_t display = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++display;
  }
  while (display < width) {
    s += ' ';
    ++display;
  }
  return s;
}

ordered_json opt_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json metrics_json(const MetricsReport& r) {
  ordered_json out;
  out["tr"] = r.tr;
  out["vol"] = opt_json(r.vol);
  out["sr"] = opt_json(r.sr);
  out["sor"] = opt_json(r.sor);
  out["mdd"] = r.mdd;
  out["cr"] = opt_json(r.cr);
  out["dd"] = opt_json(r.dd);
  return out;
}

void write_predictions(const PredictionSeries& predictions,
                       const std::string& path) {
  std::string csv = "anchor_date,predicted_up,probability,router_label\n";
  for (const auto& p : predictions) {
    csv += format_date(p.anchor_date);
    csv += ',';
    csv += p.up ? '1' : '0';
    csv += ',';
    csv += format_double(p.probability);
    csv += ',';
    csv += p.router_label;
    csv += '\n';
  }
  atomic_write_file(path, csv);
}

std::string decisions_digest(const std::vector<RouterDecision>& train,
                             const std::vector<RouterDecision>& test) {
  std::string acc;
  for (const auto* side : {&train, &test}) {
    for (const auto& d : *side) {
      acc += d.prompt_hash;
      acc += ':';
      acc += to_string(d.label);
      acc += '\n';
    }
  }
  return to_hex64(fnv1a64(acc));
}

std::string summary_cell(const std::vector<MetricsReport>& reports,
                         const std::string& metric,
                         const TrialAggregate* aggregate) {
  if (aggregate == nullptr) {
    const auto v = metric_value(reports.front(), metric);
    return v ? format_fixed(*v, 2) : "n/a";
  }
  const auto& agg = metric_aggregate(*aggregate, metric);
  if (!agg.mean) return "n/a";
  std::string cell = format_fixed(*agg.mean, 2);
  cell += "±";
  cell += agg.stddev ? format_fixed(*agg.stddev, 2) : "n/a";
  if (agg.excluded > 0) {
    cell += " [" + std::to_string(agg.used) + "/" +
            std::to_string(agg.used + agg.excluded) + "]";
  }
  return cell;
}

std::string render_summary(const RunResult& result, std::size_t seed_count) {
  constexpr std::size_t kModelWidth = 8;
  constexpr std::size_t kCellWidth = 15;
  const std::array<const char*, 7> headers{"TR", "SR", "CR", "SoR",
                                           "VOL", "DD", "MDD"};
  std::string text = pad_display("model", kModelWidth);
  for (const auto* h : headers) text += pad_display(h, kCellWidth);
  text += '\n';
  for (const auto* model : kModelNames) {
    const auto& reports = result.reports.at(model);
    const TrialAggregate* aggregate = nullptr;
    if (auto it = result.aggregates.find(model); it != result.aggregates.end()) {
      aggregate = &it->second;
    }
    text += pad_display(model, kModelWidth);
    for (const auto* metric : kMetricNames) {
      text += pad_display(summary_cell(reports, metric, aggregate), kCellWidth);
    }
    text += '\n';
  }
  text += "seeds: " + std::to_string(seed_count) + "\n";
  return text;
}

ordered_json summary_json(const RunResult& result,
                          const std::vector<std::uint64_t>& seeds) {
  ordered_json out;
  out["seeds"] = seeds;
  ordered_json models;
  for (const auto* model : kModelNames) {
    const auto& reports = result.reports.at(model);
    ordered_json metrics;
    for (const auto* metric : kMetricNames) {
      ordered_json m;
      ordered_json values = ordered_json::array();
      for (const auto& r : reports) values.push_back(opt_json(metric_value(r, metric)));
      m["values"] = values;
      if (auto it = result.aggregates.find(model); it != result.aggregates.end()) {
        const auto& agg = metric_aggregate(it->second, metric);
        m["mean"] = opt_json(agg.mean);
        m["stddev"] = opt_json(agg.stddev);
        m["used"] = agg.used;
        m["excluded"] = agg.excluded;
      }
      metrics[metric] = m;
    }
    models[model] = metrics;
  }
  out["models"] = models;
  return out;
}

}  // namespace

RunResult cmd_run(const RunConfig& config) {
  auto prepared = load_prepared(config.output_dir);
  auto bundle = make_router(config);
  const auto train_decisions =
      route_all(prepared.train, *bundle.router, config.router_concurrency);
  const auto test_decisions =
      route_all(prepared.test, *bundle.router, config.router_concurrency);
  const std::string digest = decisions_digest(train_decisions, test_decisions);

  struct SeedOutput {
    std::map<std::string, MetricsReport> reports;
    std::vector<std::string> warnings;
  };
  std::vector<SeedOutput> outputs(config.seeds.size());

  auto run_seed = [&](std::size_t si) {
    const std::uint64_t seed = config.seeds[si];
    TrainConfig tc = config.training;
    tc.seed = seed;
    SeedOutput& out = outputs[si];

    auto record = [&](const std::string& model, const PredictionSeries& preds) {
      auto sim = backtest_predictions(preds, prepared.test);
      auto report = compute_metrics(sim.curve, sim.strategy_returns);
      const std::string dir = config.output_dir + "/runs/" + model + "/seed_" +
                              std::to_string(seed);
      fs::create_directories(dir);
      write_equity_curve(sim.curve, dir + "/equity.csv");
      write_predictions(preds, dir + "/predictions.csv");
      atomic_write_file(dir + "/metrics.json", metrics_json(report).dump(2) + "\n");
      out.reports[model] = report;
      return dir;
    };

    auto policy =
        train_llmoe(prepared.train, train_decisions, tc, config.min_partition_size);
    policy.router_kind = config.router_kind;
    for (const auto& [fell_back, name] :
         {std::pair{policy.optimistic_fell_back, "optimistic"},
          std::pair{policy.pessimistic_fell_back, "pessimistic"}}) {
      if (fell_back) {
        out.warnings.push_back(
            "seed " + std::to_string(seed) + ": " + name +
            " partition is smaller than min_partition_size; that expert was "
            "trained on the full training set");
      }
    }
    const auto llmoe_dir =
        record("LLMoE", infer_llmoe(policy, prepared.test, test_decisions));
    save_policy_bundle(policy, tc, digest, llmoe_dir + "/policy");
    record("MoE_2", infer_static_moe(train_static_moe(prepared.train, 2, tc),
                                     prepared.test));
    record("MoE_10", infer_static_moe(train_static_moe(prepared.train, 10, tc),
                                      prepared.test));
    record("MLP", infer_single_mlp(train_single_mlp(prepared.train, tc),
                                   prepared.test));
  };

  const int workers =
      std::min<int>(config.jobs, static_cast<int>(config.seeds.size()));
  if (workers <= 1) {
    for (std::size_t si = 0; si < config.seeds.size(); ++si) run_seed(si);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(config.seeds.size());
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t si = next.fetch_add(1);
          if (si >= config.seeds.size()) return;
          try {
            run_seed(si);
          } catch (...) {
            errors[si] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (const auto& out : outputs) {
    for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
  }

  RunResult result;
  for (const auto* model : kModelNames) {
    std::vector<MetricsReport> reports;
    reports.reserve(config.seeds.size());
    for (const auto& out : outputs) reports.push_back(out.reports.at(model));
    result.reports[model] = std::move(reports);
    if (config.seeds.size() >= 2) {
      result.aggregates[model] = aggregate_trials(result.reports[model]);
    }
  }
  result.summary_text = render_summary(result, config.seeds.size());
  atomic_write_file(config.output_dir + "/summary.txt", result.summary_text);
  atomic_write_file(config.output_dir + "/summary.json",
                    summary_json(result, config.seeds).dump(2) + "\n");
  return result;
}

GridResult cmd_gridsearch(const RunConfig& config) {
  if (config.grid_learning_rates.empty() || config.grid_batch_sizes.empty()) {
    throw std::invalid_argument(
        "gridsearch: grid.learning_rates and grid.batch_sizes must both be "
        "non-empty");
  }
  auto prepared = load_prepared(config.output_dir);
  if (prepared.train.size() < 2) {
    throw std::runtime_error("gridsearch: need at least 2 training samples");
  }
  const std::size_t n_fit = leading_count(prepared.train.size(), 0.8);
  const std::vector<WindowSample> fit(prepared.train.begin(),
                                      prepared.train.begin() + n_fit);
  const std::vector<WindowSample> validation(prepared.train.begin() + n_fit,
                                             prepared.train.end());

  auto bundle = make_router(config);
  const auto fit_decisions =
      route_all(fit, *bundle.router, config.router_concurrency);
  const auto val_decisions =
      route_all(validation, *bundle.router, config.router_concurrency);

  GridResult result;
  for (double lr : config.grid_learning_rates) {
    for (int batch : config.grid_batch_sizes) {
      TrainConfig tc = config.training;
      tc.learning_rate = lr;
      tc.batch_size = batch;
      tc.seed = config.seeds.front();
      const auto policy = train_llmoe(fit, fit_decisions, tc,
                                      config.min_partition_size);
      const auto preds = infer_llmoe(policy, validation, val_decisions);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].up == (validation[i].label == 1)) ++correct;
      }
      GridCell cell;
      cell.learning_rate = lr;
      cell.batch_size = batch;
      cell.validation_accuracy =
          static_cast<double>(correct) / static_cast<double>(validation.size());
      result.cells.push_back(cell);
    }
  }

  auto better = [](const GridCell& a, const GridCell& b) {
    if (a.validation_accuracy != b.validation_accuracy) {
      return a.validation_accuracy > b.validation_accuracy;
    }
    if (a.learning_rate != b.learning_rate) {
      return a.learning_rate < b.learning_rate;
    }
    return a.batch_size < b.batch_size;
  };
  result.best = result.cells.front();
  for (const auto& cell : result.cells) {
    if (better(cell, result.best)) result.best = cell;
  }

  ordered_json out;
  out["cells"] = ordered_json::array();
  for (const auto& cell : result.cells) {
    ordered_json c;
    c["learning_rate"] = cell.learning_rate;
    c["batch_size"] = cell.batch_size;
    c["validation_accuracy"] = cell.validation_accuracy;
    out["cells"].push_back(c);
  }
  ordered_json best;
  best["learning_rate"] = result.best.learning_rate;
  best["batch_size"] = result.best.batch_size;
  best["validation_accuracy"] = result.best.validation_accuracy;
  out["best"] = best;
  atomic_write_file(config.output_dir + "/gridsearch.json", out.dump(2) + "\n");
  return result;
}

}  // namespace llmoe

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "llmoe/backtest.hpp"
#include "llmoe/market_data.hpp"
#include "llmoe/pipeline.hpp"
#include "llmoe/router.hpp"

namespace llmoe {

// Run configuration, loaded from a JSON file with the sections below.
// Credentials never live in the file: router.api_key_env names an
// environment variable read at run time.
struct RunConfig {
  // data: either file paths or a synthetic generator spec
  std::optional<std::string> prices_path;
  std::optional<std::string> news_path;
  bool synthetic = false;
  std::uint64_t synthetic_seed = 42;
  int synthetic_days = 1000;
  RegimeSpec regime;

  double train_fraction = 0.8;

  // router
  std::string router_kind = "rule";  // rule | llm | cache
  RouterConfig router;
  std::string router_api_key_env;
  std::string cache_path;
  int router_concurrency = 1;

  // training
  TrainConfig training;
  std::vector<std::uint64_t> seeds = {1};
  int min_partition_size = 30;

  // experiment grid
  std::vector<double> grid_learning_rates;
  std::vector<int> grid_batch_sizes;

  std::string output_dir = "out";
  int jobs = 1;
};

RunConfig load_run_config(const std::string& path);

// Artifacts prepare() leaves on disk, all under config.output_dir:
//   data/prices.csv, data/news.csv   (synthetic runs only)
//   samples.jsonl                    full window samples, train then test
//   samples.csv                      numeric feature dump
//   manifest.json                    counts, date ranges, no-news days
struct PrepareResult {
  int total_days = 0;
  int no_news_days = 0;
  int train_samples = 0;
  int test_samples = 0;
  Date first_date;
  Date last_date;
};

PrepareResult cmd_prepare(const RunConfig& config);

struct RouteResult {
  int optimistic = 0;
  int pessimistic = 0;
  int endpoint_calls = 0;
  int cache_hits = 0;
};

// Routes every prepared sample (train + test) and persists the decisions
// to the cache file.
RouteResult cmd_route(const RunConfig& config);

struct RunResult {
  // model name -> per-seed reports, in seed order
  std::map<std::string, std::vector<MetricsReport>> reports;
  std::map<std::string, TrialAggregate> aggregates;
  std::string summary_text;
};

// Trains and backtests {LLMoE, MoE_2, MoE_10, MLP} for every seed, writes
// per-seed report files, per-model aggregates, and a Table-style summary
// (summary.json + summary.txt).
RunResult cmd_run(const RunConfig& config);

struct GridCell {
  double learning_rate = 0.0;
  int batch_size = 0;
  double validation_accuracy = 0.0;
};

struct GridResult {
  std::vector<GridCell> cells;  // in evaluation order
  GridCell best;
};

// Evaluates each (lr, batch) cell on the chronologically last 20% of the
// training samples; highest validation accuracy wins, ties broken by
// lower lr then smaller batch.
GridResult cmd_gridsearch(const RunConfig& config);

// Loads the samples written by cmd_prepare.
struct PreparedData {
  std::vector<WindowSample> train;
  std::vector<WindowSample> test;
  std::string samples_digest;
};

PreparedData load_prepared(const std::string& output_dir);

}  // namespace llmoe

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>

#include <sys/wait.h>

#include <httplib.h>
#include <json.hpp>

#include "llmoe/commands.hpp"
#include "llmoe/features.hpp"
#include "llmoe/util.hpp"

using namespace llmoe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("llmoe_cmd_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_config(const TempDir& tmp, const nlohmann::json& doc) {
  const auto path = tmp.file("config.json");
  atomic_write_file(path, doc.dump(2) + "\n");
  return path;
}

nlohmann::json base_config(const TempDir& tmp, int days = 160) {
  nlohmann::json doc;
  doc["data"]["synthetic"]["seed"] = 5;
  doc["data"]["synthetic"]["days"] = days;
  doc["router"]["kind"] = "rule";
  doc["training"]["epochs"] = 2;
  doc["seeds"] = {1, 2};
  doc["output_dir"] = tmp.file("out");
  return doc;
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("run config parses every section and applies defaults") {
  TempDir tmp("cfg");
  nlohmann::json doc;
  doc["data"]["synthetic"] = {{"seed", 9},
                              {"days", 500},
                              {"drift_optimistic", 0.005},
                              {"vol_pessimistic", 0.02},
                              {"symbol", "ZZZ"}};
  doc["train_fraction"] = 0.75;
  doc["router"] = {{"kind", "llm"},
                   {"endpoint", "http://127.0.0.1:9999/v1/chat/completions"},
                   {"model", "m1"},
                   {"temperature", 0.5},
                   {"max_retries", 5},
                   {"timeout_seconds", 7.5},
                   {"fallback", "fail"},
                   {"api_key_env", "MY_KEY"},
                   {"cache", tmp.file("cache.jsonl")},
                   {"concurrency", 3}};
  doc["training"] = {{"learning_rate", 0.01}, {"batch_size", 16},
                     {"epochs", 7},           {"optimizer", "sgd"},
                     {"seed", 3},             {"early_stop_patience", 2}};
  doc["seeds"] = {4, 5, 6};
  doc["min_partition_size"] = 12;
  doc["grid"] = {{"learning_rates", {0.1, 0.01}}, {"batch_sizes", {8, 16}}};
  doc["output_dir"] = tmp.file("out");
  doc["jobs"] = 2;

  const auto cfg = load_run_config(write_config(tmp, doc));
  CHECK(cfg.synthetic);
  CHECK(cfg.synthetic_seed == 9);
  CHECK(cfg.synthetic_days == 500);
  CHECK(cfg.regime.drift_optimistic == 0.005);
  CHECK(cfg.regime.drift_pessimistic == -0.004);  // default untouched
  CHECK(cfg.regime.vol_pessimistic == 0.02);
  CHECK(cfg.regime.symbol == "ZZZ");
  CHECK(cfg.train_fraction == 0.75);
  CHECK(cfg.router_kind == "llm");
  CHECK(cfg.router.endpoint_url == "http://127.0.0.1:9999/v1/chat/completions");
  CHECK(cfg.router.model_id == "m1");
  CHECK(cfg.router.temperature == 0.5);
  CHECK(cfg.router.max_retries == 5);
  CHECK(cfg.router.timeout_seconds == 7.5);
  CHECK(cfg.router.fallback == RouterConfig::Fallback::fail);
  CHECK(cfg.router_api_key_env == "MY_KEY");
  CHECK(cfg.cache_path == tmp.file("cache.jsonl"));
  CHECK(cfg.router_concurrency == 3);
  CHECK(cfg.training.learning_rate == 0.01);
  CHECK(cfg.training.batch_size == 16);
  CHECK(cfg.training.epochs == 7);
  CHECK(cfg.training.optimizer == TrainConfig::Optimizer::sgd);
  CHECK(cfg.training.seed == 3);
  CHECK(cfg.training.early_stop_patience == 2);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5, 6});
  CHECK(cfg.min_partition_size == 12);
  CHECK(cfg.grid_learning_rates == std::vector<double>{0.1, 0.01});
  CHECK(cfg.grid_batch_sizes == std::vector<int>{8, 16});
  CHECK(cfg.jobs == 2);

  // defaults
  nlohmann::json minimal;
  minimal["data"]["synthetic"]["days"] = 100;
  minimal["output_dir"] = tmp.file("out2");
  const auto defaults = load_run_config(write_config(tmp, minimal));
  CHECK(defaults.router_kind == "rule");
  CHECK(defaults.train_fraction == 0.8);
  CHECK(defaults.training.epochs == 100);
  CHECK(defaults.training.batch_size == 32);
  CHECK(defaults.training.learning_rate == 1e-3);
  CHECK(defaults.seeds == std::vector<std::uint64_t>{1});
  CHECK(defaults.min_partition_size == 30);
  CHECK(defaults.jobs == 1);
  CHECK(defaults.cache_path == tmp.file("out2") + "/decisions.jsonl");
}

TEST_CASE("run config rejects bad values with the file name") {
  TempDir tmp("cfgbad");
  auto expect_throw = [&](nlohmann::json doc, const char* needle) {
    const auto path = write_config(tmp, doc);
    CHECK_THROWS_WITH_AS(load_run_config(path), doctest::Contains(needle),
                         std::runtime_error);
  };

  nlohmann::json doc;  // no data section
  doc["output_dir"] = tmp.file("out");
  expect_throw(doc, "data");

  doc = base_config(tmp);
  doc["train_fraction"] = 1.0;
  expect_throw(doc, "train_fraction");

  doc = base_config(tmp);
  doc["router"]["kind"] = "oracle";
  expect_throw(doc, "router.kind");

  doc = base_config(tmp);
  doc["router"]["kind"] = "llm";  // no endpoint
  expect_throw(doc, "endpoint");

  doc = base_config(tmp);
  doc["training"]["optimizer"] = "rmsprop";
  expect_throw(doc, "optimizer");

  doc = base_config(tmp);
  doc["seeds"] = nlohmann::json::array();
  expect_throw(doc, "seeds");

  doc = base_config(tmp);
  doc["jobs"] = 0;
  expect_throw(doc, "jobs");

  doc = base_config(tmp);
  doc["typo_section"] = 1;
  expect_throw(doc, "typo_section");

  doc = base_config(tmp);
  doc["data"]["prices"] = "x.csv";  // both sources
  expect_throw(doc, "exclusive");

  doc = base_config(tmp);
  doc["router"]["concurrency"] = 0;
  expect_throw(doc, "concurrency");

  CHECK_THROWS(load_run_config(tmp.file("missing.json")));
  atomic_write_file(tmp.file("broken.json"), "{ not json");
  CHECK_THROWS_WITH_AS(load_run_config(tmp.file("broken.json")),
                       doctest::Contains("broken.json"), std::runtime_error);
}

TEST_CASE("prepare writes synthetic artifacts and is deterministic") {
  TempDir tmp("prep");
  const auto cfg = load_run_config(write_config(tmp, base_config(tmp)));
  const auto result = cmd_prepare(cfg);

  CHECK(result.total_days == 160);
  CHECK(result.train_samples + result.test_samples == 160 - 34);
  CHECK(result.train_samples == 101);  // ceil(0.8 * 126)
  CHECK(result.test_samples == 25);
  CHECK(format_date(result.first_date) == "2015-01-05");
  CHECK(result.no_news_days > 0);

  for (const char* artifact :
       {"data/prices.csv", "data/news.csv", "samples.jsonl", "samples.csv",
        "manifest.json"}) {
    CHECK(fs::exists(fs::path(cfg.output_dir) / artifact));
  }
  CHECK(count_lines(cfg.output_dir + "/samples.jsonl") == 126);

  const auto manifest =
      nlohmann::json::parse(read_file(cfg.output_dir + "/manifest.json"));
  CHECK(manifest.at("total_days") == 160);
  CHECK(manifest.at("train_samples") == 101);
  CHECK(manifest.at("test_samples") == 25);
  CHECK(manifest.at("synthetic") == true);
  CHECK(manifest.at("samples_digest") ==
        file_digest(cfg.output_dir + "/samples.jsonl"));

  // the generated files round-trip through the loader
  const auto loaded = load_series(cfg.output_dir + "/data/prices.csv",
                                  cfg.output_dir + "/data/news.csv", "SYN");
  CHECK(static_cast<int>(loaded.series.bars.size()) == 160);
  CHECK(loaded.unmatched_news == 0);

  const auto first = read_file(cfg.output_dir + "/samples.jsonl");
  fs::remove_all(cfg.output_dir);
  cmd_prepare(cfg);
  CHECK(read_file(cfg.output_dir + "/samples.jsonl") == first);
}

TEST_CASE("load_prepared restores the exact samples") {
  TempDir tmp("loadprep");
  const auto cfg = load_run_config(write_config(tmp, base_config(tmp)));
  cmd_prepare(cfg);
  const auto prepared = load_prepared(cfg.output_dir);
  CHECK(prepared.train.size() == 101);
  CHECK(prepared.test.size() == 25);
  CHECK(!prepared.samples_digest.empty());

  const auto expected =
      build_window_samples(generate_synthetic_series(5, 160).series);
  REQUIRE(expected.size() == prepared.train.size() + prepared.test.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& got =
        i < prepared.train.size() ? prepared.train[i]
                                  : prepared.test[i - prepared.train.size()];
    CHECK(got.anchor_date == expected[i].anchor_date);
    CHECK(got.vector == expected[i].vector);  // exact json round-trip
    CHECK(got.window_texts == expected[i].window_texts);
    CHECK(got.label == expected[i].label);
    CHECK(got.next_return == expected[i].next_return);
  }

  CHECK_THROWS_WITH_AS(load_prepared(tmp.file("nowhere")),
                       doctest::Contains("prepare"), std::runtime_error);
}

TEST_CASE("route with the rule router persists every decision") {
  TempDir tmp("route");
  const auto cfg = load_run_config(write_config(tmp, base_config(tmp)));
  cmd_prepare(cfg);
  const auto result = cmd_route(cfg);
  CHECK(result.optimistic + result.pessimistic == 126);
  CHECK(result.endpoint_calls == 0);
  CHECK(result.cache_hits == 0);
  CHECK(count_lines(cfg.cache_path) == 126);

  // replay from the cache only
  auto replay = cfg;
  replay.router_kind = "cache";
  const auto cached = cmd_route(replay);
  CHECK(cached.optimistic == result.optimistic);
  CHECK(cached.pessimistic == result.pessimistic);
  CHECK(cached.cache_hits == 126);
  CHECK(count_lines(cfg.cache_path) == 126);  // no duplicates appended
}

TEST_CASE("cache router without a primed cache refuses to run") {
  TempDir tmp("routemiss");
  auto doc = base_config(tmp);
  doc["router"]["kind"] = "cache";
  const auto cfg = load_run_config(write_config(tmp, doc));
  cmd_prepare(cfg);
  CHECK_THROWS_WITH_AS(cmd_route(cfg), doctest::Contains("route command"),
                       std::runtime_error);
}

TEST_CASE("route against an llm endpoint caches and replays") {
  TempDir tmp("routellm");

  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                ++hits;
                const auto doc = nlohmann::json::parse(req.body);
                const std::string user = doc.at("messages")[1].at("content");
                const char* text = fnv1a64(user) % 3 == 0
                                       ? "Pessimistic\nsoft data"
                                       : "Optimistic\nfirm data";
                nlohmann::json body;
                body["choices"] = {
                    {{"message", {{"role", "assistant"}, {"content", text}}}}};
                res.set_content(body.dump(), "application/json");
              });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto doc = base_config(tmp, 120);
  doc["router"]["kind"] = "llm";
  doc["router"]["endpoint"] =
      "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  const auto cfg = load_run_config(write_config(tmp, doc));
  cmd_prepare(cfg);

  const auto first = cmd_route(cfg);
  CHECK(first.optimistic + first.pessimistic == 86);
  CHECK(first.endpoint_calls == 86);
  CHECK(first.cache_hits == 0);
  CHECK(hits.load() == 86);
  CHECK(count_lines(cfg.cache_path) == 86);

  const auto second = cmd_route(cfg);
  CHECK(second.endpoint_calls == 0);
  CHECK(second.cache_hits == 86);
  CHECK(second.optimistic == first.optimistic);
  CHECK(hits.load() == 86);

  server.stop();
  listener.join();
}

TEST_CASE("missing api key environment variable is an error") {
  TempDir tmp("apikey");
  auto doc = base_config(tmp, 120);
  doc["router"]["kind"] = "llm";
  doc["router"]["endpoint"] = "http://127.0.0.1:1/v1/chat/completions";
  doc["router"]["api_key_env"] = "LLMOE_TEST_KEY_THAT_IS_NOT_SET";
  const auto cfg = load_run_config(write_config(tmp, doc));
  cmd_prepare(cfg);
  CHECK_THROWS_WITH_AS(cmd_route(cfg),
                       doctest::Contains("LLMOE_TEST_KEY_THAT_IS_NOT_SET"),
                       std::runtime_error);
}

TEST_CASE("run trains all four models per seed and writes reports") {
  TempDir tmp("run");
  const auto cfg = load_run_config(write_config(tmp, base_config(tmp)));
  cmd_prepare(cfg);
  const auto result = cmd_run(cfg);

  for (const char* model : {"LLMoE", "MoE_2", "MoE_10", "MLP"}) {
    REQUIRE(result.reports.count(model) == 1);
    CHECK(result.reports.at(model).size() == 2);
    REQUIRE(result.aggregates.count(model) == 1);
    for (int seed : {1, 2}) {
      const auto dir = fs::path(cfg.output_dir) / "runs" / model /
                       ("seed_" + std::to_string(seed));
      CHECK(fs::exists(dir / "metrics.json"));
      CHECK(fs::exists(dir / "equity.csv"));
      CHECK(fs::exists(dir / "predictions.csv"));
    }
  }
  CHECK(fs::exists(fs::path(cfg.output_dir) / "runs/LLMoE/seed_1/policy/manifest.json"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "summary.txt"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "summary.json"));

  CHECK(result.summary_text.find("LLMoE") != std::string::npos);
  CHECK(result.summary_text.find("MoE_10") != std::string::npos);
  CHECK(result.summary_text.find("MLP") != std::string::npos);
  CHECK(result.summary_text.find("TR") != std::string::npos);
  CHECK(result.summary_text.find("MDD") != std::string::npos);

  const auto summary =
      nlohmann::json::parse(read_file(cfg.output_dir + "/summary.json"));
  CHECK(summary.at("seeds").size() == 2);
  CHECK(summary.at("models").at("LLMoE").at("tr").at("values").size() == 2);
  CHECK(summary.at("models").at("MLP").at("mdd").contains("mean"));

  const auto predictions_lines =
      count_lines(cfg.output_dir + "/runs/MLP/seed_1/predictions.csv");
  CHECK(predictions_lines == 25 + 1);  // header + one row per test sample
}

TEST_CASE("run is bitwise deterministic and parallel-safe") {
  TempDir tmp("runrepeat");
  auto doc = base_config(tmp, 140);
  const auto cfg = load_run_config(write_config(tmp, doc));
  cmd_prepare(cfg);
  cmd_run(cfg);
  const auto summary1 = read_file(cfg.output_dir + "/summary.json");
  const auto text1 = read_file(cfg.output_dir + "/summary.txt");
  const auto equity1 = read_file(cfg.output_dir + "/runs/LLMoE/seed_2/equity.csv");

  cmd_run(cfg);
  CHECK(read_file(cfg.output_dir + "/summary.json") == summary1);
  CHECK(read_file(cfg.output_dir + "/summary.txt") == text1);
  CHECK(read_file(cfg.output_dir + "/runs/LLMoE/seed_2/equity.csv") == equity1);

  auto parallel = cfg;
  parallel.jobs = 2;
  cmd_run(parallel);
  CHECK(read_file(cfg.output_dir + "/summary.json") == summary1);
  CHECK(read_file(cfg.output_dir + "/summary.txt") == text1);
}

TEST_CASE("single-seed runs skip the spread") {
  TempDir tmp("oneseed");
  auto doc = base_config(tmp, 140);
  doc["seeds"] = {3};
  const auto cfg = load_run_config(write_config(tmp, doc));
  cmd_prepare(cfg);
  const auto result = cmd_run(cfg);
  CHECK(result.aggregates.empty());
  CHECK(result.reports.at("MLP").size() == 1);
  CHECK(result.summary_text.find("±") == std::string::npos);
}

TEST_CASE("gridsearch scores cells on held-out accuracy") {
  TempDir tmp("grid");
  auto doc = base_config(tmp, 160);
  doc["grid"] = {{"learning_rates", {0.001, 0.01}}, {"batch_sizes", {16, 32}}};
  const auto cfg = load_run_config(write_config(tmp, doc));
  cmd_prepare(cfg);
  const auto result = cmd_gridsearch(cfg);

  REQUIRE(result.cells.size() == 4);
  CHECK(result.cells[0].learning_rate == 0.001);
  CHECK(result.cells[0].batch_size == 16);
  CHECK(result.cells[1].batch_size == 32);
  CHECK(result.cells[2].learning_rate == 0.01);
  for (const auto& cell : result.cells) {
    CHECK(cell.validation_accuracy >= 0.0);
    CHECK(cell.validation_accuracy <= 1.0);
  }

  // the reported best must follow accuracy, then lr, then batch
  GridCell expect = result.cells.front();
  for (const auto& cell : result.cells) {
    const bool better =
        cell.validation_accuracy > expect.validation_accuracy ||
        (cell.validation_accuracy == expect.validation_accuracy &&
         (cell.learning_rate < expect.learning_rate ||
          (cell.learning_rate == expect.learning_rate &&
           cell.batch_size < expect.batch_size)));
    if (better) expect = cell;
  }
  CHECK(result.best.learning_rate == expect.learning_rate);
  CHECK(result.best.batch_size == expect.batch_size);
  CHECK(result.best.validation_accuracy == expect.validation_accuracy);

  CHECK(fs::exists(fs::path(cfg.output_dir) / "gridsearch.json"));

  auto empty = cfg;
  empty.grid_learning_rates.clear();
  CHECK_THROWS_AS(cmd_gridsearch(empty), std::invalid_argument);
}

TEST_CASE("the cli binary drives the full flow") {
  const char* bin = std::getenv("LLMOE_BIN");
  REQUIRE(bin != nullptr);
  TempDir tmp("cli");
  const auto config_path = write_config(tmp, base_config(tmp, 120));

  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(bin) + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  CHECK(run("prepare --config " + config_path) == 0);
  CHECK(run("route --config " + config_path) == 0);
  CHECK(run("run --config " + config_path + " --seeds 1") == 0);
  CHECK(fs::exists(tmp.file("out") + "/summary.txt"));

  CHECK(run("run --config " + tmp.file("absent.json")) != 0);
  const int code =
      std::system((std::string(bin) + " run --config " + tmp.file("absent.json") +
                   " >/dev/null 2>&1")
                      .c_str());
  CHECK(WEXITSTATUS(code) == 2);
}

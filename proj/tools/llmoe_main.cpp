#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "llmoe/commands.hpp"
#include "llmoe/util.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string output_dir;
  std::string router_kind;
  std::vector<std::uint64_t> seeds;
  int jobs = 0;
};

llmoe::RunConfig load_with_overrides(const CommonOpts& opts) {
  auto cfg = llmoe::load_run_config(opts.config_path);
  if (!opts.output_dir.empty()) {
    // A defaulted cache path follows the output directory.
    if (cfg.cache_path == cfg.output_dir + "/decisions.jsonl") {
      cfg.cache_path = opts.output_dir + "/decisions.jsonl";
    }
    cfg.output_dir = opts.output_dir;
  }
  if (!opts.router_kind.empty()) {
    cfg.router_kind = opts.router_kind;
    if (cfg.router_kind == "llm" && cfg.router.endpoint_url.empty()) {
      throw std::runtime_error("router.endpoint is required when kind is llm");
    }
  }
  if (!opts.seeds.empty()) cfg.seeds = opts.seeds;
  if (opts.jobs > 0) cfg.jobs = opts.jobs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-of-experts stock movement pipeline"};
  app.require_subcommand(1);
  CommonOpts opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "run configuration JSON file")
        ->required();
    sub->add_option("--out", opts.output_dir, "override output_dir");
    sub->add_option("--router", opts.router_kind, "override router.kind")
        ->check(CLI::IsMember({"rule", "llm", "cache"}));
  };

  auto* prepare =
      app.add_subcommand("prepare", "build features and window samples");
  add_common(prepare);
  auto* route =
      app.add_subcommand("route", "label every sample and persist the decisions");
  add_common(route);
  auto* run = app.add_subcommand("run", "train all models and backtest");
  add_common(run);
  run->add_option("--seeds", opts.seeds, "override the seed list");
  run->add_option("--jobs", opts.jobs, "trials to run in parallel");
  auto* grid = app.add_subcommand(
      "gridsearch", "score the (learning rate, batch size) grid on validation");
  add_common(grid);

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      const auto cfg = load_with_overrides(opts);
      const auto r = llmoe::cmd_prepare(cfg);
      std::cout << "days: " << r.total_days << " ("
                << llmoe::format_date(r.first_date) << " .. "
                << llmoe::format_date(r.last_date) << "), "
                << r.no_news_days << " without news\n"
                << "samples: " << r.train_samples << " train, " << r.test_samples
                << " test\n"
                << "artifacts in " << cfg.output_dir << "\n";
    } else if (route->parsed()) {
      const auto cfg = load_with_overrides(opts);
      const auto r = llmoe::cmd_route(cfg);
      std::cout << "optimistic: " << r.optimistic
                << ", pessimistic: " << r.pessimistic << "\n"
                << "endpoint calls: " << r.endpoint_calls
                << ", cache hits: " << r.cache_hits << "\n"
                << "decisions in " << cfg.cache_path << "\n";
    } else if (run->parsed()) {
      const auto cfg = load_with_overrides(opts);
      const auto r = llmoe::cmd_run(cfg);
      std::cout << r.summary_text << "reports in " << cfg.output_dir << "/runs\n";
    } else {
      const auto cfg = load_with_overrides(opts);
      const auto r = llmoe::cmd_gridsearch(cfg);
      for (const auto& cell : r.cells) {
        std::cout << "lr " << llmoe::format_double(cell.learning_rate)
                  << ", batch " << cell.batch_size << ": accuracy "
                  << llmoe::format_fixed(cell.validation_accuracy, 4) << "\n";
      }
      std::cout << "best: lr " << llmoe::format_double(r.best.learning_rate)
                << ", batch " << r.best.batch_size << " (accuracy "
                << llmoe::format_fixed(r.best.validation_accuracy, 4) << ")\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

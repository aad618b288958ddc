#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "llmoe/features.hpp"

namespace llmoe {

enum class RouterLabel { optimistic, pessimistic };

std::string to_string(RouterLabel label);
std::optional<RouterLabel> router_label_from_string(const std::string& s);

enum class DecisionSource { llm, rule, cache };

std::string to_string(DecisionSource source);

struct RouterDecision {
  Date anchor_date;
  RouterLabel label = RouterLabel::pessimistic;
  std::string reasoning;  // may be empty for the rule router
  DecisionSource source = DecisionSource::rule;
  std::string model_id;
  std::string prompt_hash;  // 16 hex chars, FNV-1a of the prompt text
};

struct RouterConfig {
  std::string endpoint_url;  // chat-completion style endpoint, e.g. http://host:port/v1/chat/completions
  std::string model_id = "llama3.2";
  double temperature = 0.0;
  int max_retries = 3;
  double timeout_seconds = 30.0;
  enum class Fallback { rule, fail } fallback = Fallback::rule;
  std::string api_key;  // sent as a bearer token when non-empty
};

// Fixed system instruction + the five descriptive strings, oldest first.
std::string build_prompt(const WindowSample& sample);

std::string prompt_hash(const std::string& prompt);

struct ParsedDecision {
  RouterLabel label;
  std::string reasoning;
};

// Case-insensitive scan for "optimistic" / "pessimistic"; the earlier
// occurrence wins. Reasoning is the remainder after the label's line,
// trimmed. nullopt when neither word appears.
std::optional<ParsedDecision> parse_decision(const std::string& raw_response);

// Append-only line-delimited JSON store keyed by prompt_hash. Each line is
// self-contained, so a file from any crash-free run reloads cleanly.
// Writes are serialized; safe to share across router threads.
class DecisionCache {
 public:
  DecisionCache() = default;  // in-memory only
  explicit DecisionCache(const std::string& path);  // loads existing lines

  std::optional<RouterDecision> lookup(const std::string& prompt_hash) const;

  // Inserts and appends to the backing file; returns false (and writes
  // nothing) when the hash is already present.
  bool put(const RouterDecision& decision);

  std::size_t size() const;

 private:
  std::string path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, RouterDecision> entries_;
};

class Router {
 public:
  virtual ~Router() = default;
  virtual RouterDecision route(const WindowSample& sample) = 0;
  virtual std::string name() const = 0;
};

// Deterministic offline stand-in for the LLM: Optimistic iff the mean of
// the window's five z_close values is > 0.
class RuleRouter : public Router {
 public:
  RouterDecision route(const WindowSample& sample) override;
  std::string name() const override { return "rule"; }
};

// Replay-only: every sample must already be cached.
class CacheRouter : public Router {
 public:
  explicit CacheRouter(const DecisionCache& cache) : cache_(cache) {}
  RouterDecision route(const WindowSample& sample) override;
  std::string name() const override { return "cache"; }

 private:
  const DecisionCache& cache_;
};

// Chat-completion HTTP router with retry, cache and rule fallback.
class LlmRouter : public Router {
 public:
  LlmRouter(RouterConfig config, DecisionCache& cache);
  RouterDecision route(const WindowSample& sample) override;
  std::string name() const override { return "llm"; }

  int endpoint_calls() const { return endpoint_calls_; }

 private:
  RouterConfig config_;
  DecisionCache& cache_;
  std::atomic<int> endpoint_calls_{0};
};

// Routes every sample, preserving input order, with at most `concurrency`
// route() calls in flight. The earliest failing sample's error is rethrown
// after in-flight work drains.
std::vector<RouterDecision> route_all(const std::vector<WindowSample>& samples,
                                      Router& router, int concurrency = 1);

}  // namespace llmoe

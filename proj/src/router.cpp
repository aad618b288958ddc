#include "llmoe/router.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "llmoe/util.hpp"

namespace llmoe {

namespace {

constexpr const char* kSystemInstruction =
    "You are a financial market analyst. Given five consecutive days of "
    "market features and news, classify the outlook as exactly one word on "
    "the first line: Optimistic or Pessimistic. Then give a brief reason.";

}  // namespace

std::string to_string(RouterLabel label) {
  return label == RouterLabel::optimistic ? "Optimistic" : "Pessimistic";
}

std::optional<RouterLabel> router_label_from_string(const std::string& s) {
  const std::string lower = to_lower(s);
  if (lower == "optimistic") return RouterLabel::optimistic;
  if (lower == "pessimistic") return RouterLabel::pessimistic;
  return std::nullopt;
}

std::string to_string(DecisionSource source) {
  switch (source) {
    case DecisionSource::llm: return "llm";
    case DecisionSource::rule: return "rule";
    case DecisionSource::cache: return "cache";
  }
  return "rule";
}

namespace {

DecisionSource source_from_string(const std::string& s) {
  if (s == "llm") return DecisionSource::llm;
  if (s == "cache") return DecisionSource::cache;
  return DecisionSource::rule;
}

}  // namespace

std::string build_prompt(const WindowSample& sample) {
  std::ostringstream out;
  out << kSystemInstruction << "\n\n";
  for (int i = 0; i < kWindowDays; ++i) {
    if (i > 0) out << '\n';
    out << sample.window_texts[i];
  }
  return out.str();
}

std::string prompt_hash(const std::string& prompt) {
  return to_hex64(fnv1a64(prompt));
}

std::optional<ParsedDecision> parse_decision(const std::string& raw_response) {
  const auto opt_pos = ifind(raw_response, "optimistic");
  const auto pess_pos = ifind(raw_response, "pessimistic");
  if (opt_pos == std::string::npos && pess_pos == std::string::npos) {
    return std::nullopt;
  }
  // When both words appear, the earlier occurrence wins.
  std::size_t label_pos;
  RouterLabel label;
  if (pess_pos != std::string::npos &&
      (opt_pos == std::string::npos || pess_pos < opt_pos)) {
    label_pos = pess_pos;
    label = RouterLabel::pessimistic;
  } else {
    label_pos = opt_pos;
    label = RouterLabel::optimistic;
  }
  auto line_end = raw_response.find('\n', label_pos);
  std::string reasoning = line_end == std::string::npos
                              ? std::string()
                              : raw_response.substr(line_end + 1);
  return ParsedDecision{label, trim(reasoning)};
}

DecisionCache::DecisionCache(const std::string& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;  // nothing cached yet
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(trimmed);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed cache line: " + e.what());
    }
    RouterDecision decision;
    decision.prompt_hash = doc.at("prompt_hash").get<std::string>();
    decision.anchor_date = parse_date(doc.at("anchor_date").get<std::string>());
    const auto label = router_label_from_string(doc.at("label").get<std::string>());
    if (!label) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": unknown label in cache line");
    }
    decision.label = *label;
    decision.reasoning = doc.at("reasoning").get<std::string>();
    decision.model_id = doc.at("model_id").get<std::string>();
    decision.source = source_from_string(doc.at("source").get<std::string>());
    entries_[decision.prompt_hash] = std::move(decision);
  }
}

std::optional<RouterDecision> DecisionCache::lookup(
    const std::string& prompt_hash) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(prompt_hash);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool DecisionCache::put(const RouterDecision& decision) {
  std::lock_guard lock(mutex_);
  auto [it, inserted] = entries_.emplace(decision.prompt_hash, decision);
  if (!inserted) return false;
  if (!path_.empty()) {
    namespace fs = std::filesystem;
    fs::path p(path_);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    nlohmann::ordered_json line;
    line["prompt_hash"] = decision.prompt_hash;
    line["anchor_date"] = format_date(decision.anchor_date);
    line["label"] = to_string(decision.label);
    line["reasoning"] = decision.reasoning;
    line["model_id"] = decision.model_id;
    line["source"] = to_string(decision.source);
    line["timestamp"] = utc_timestamp();
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) {
      throw std::runtime_error("cannot append to decision cache: " + path_);
    }
    out << line.dump() << '\n';
    out.flush();
  }
  return true;
}

std::size_t DecisionCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

RouterDecision RuleRouter::route(const WindowSample& sample) {
  double sum = 0.0;
  for (int d = 0; d < kWindowDays; ++d) {
    sum += sample.vector[d * kFeaturesPerDay + 3];  // z_close slot
  }
  const double mean = sum / kWindowDays;

  RouterDecision decision;
  decision.anchor_date = sample.anchor_date;
  decision.label = mean > 0.0 ? RouterLabel::optimistic : RouterLabel::pessimistic;
  decision.reasoning = "rule: mean 5-day close change " + format_fixed4(mean);
  decision.source = DecisionSource::rule;
  decision.model_id = "rule";
  decision.prompt_hash = prompt_hash(build_prompt(sample));
  return decision;
}

RouterDecision CacheRouter::route(const WindowSample& sample) {
  const std::string hash = prompt_hash(build_prompt(sample));
  auto hit = cache_.lookup(hash);
  if (!hit) {
    throw std::runtime_error("cache router: no cached decision for anchor " +
                             format_date(sample.anchor_date) + " (prompt_hash " +
                             hash + "); run the route command first");
  }
  hit->source = DecisionSource::cache;
  hit->anchor_date = sample.anchor_date;
  return *hit;
}

namespace {

struct EndpointParts {
  std::string base;  // scheme://host[:port]
  std::string path;
};

EndpointParts split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::runtime_error("router endpoint must be an http URL: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, "/v1/chat/completions"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

LlmRouter::LlmRouter(RouterConfig config, DecisionCache& cache)
    : config_(std::move(config)), cache_(cache) {
  if (config_.endpoint_url.rfind("https://", 0) == 0) {
    throw std::runtime_error(
        "https endpoints are not supported; serve the model over http");
  }
}

RouterDecision LlmRouter::route(const WindowSample& sample) {
  const std::string prompt = build_prompt(sample);
  const std::string hash = prompt_hash(prompt);

  if (auto hit = cache_.lookup(hash)) {
    hit->source = DecisionSource::cache;
    hit->anchor_date = sample.anchor_date;
    return *hit;
  }

  const auto parts = split_endpoint(config_.endpoint_url);
  const std::string user_text = [&] {
    std::ostringstream out;
    for (int i = 0; i < kWindowDays; ++i) {
      if (i > 0) out << '\n';
      out << sample.window_texts[i];
    }
    return out.str();
  }();

  nlohmann::ordered_json request;
  request["model"] = config_.model_id;
  request["messages"] = nlohmann::json::array(
      {{{"role", "system"}, {"content", kSystemInstruction}},
       {{"role", "user"}, {"content", user_text}}});
  request["temperature"] = config_.temperature;
  const std::string body = request.dump();

  std::string last_error = "router made no endpoint attempts (max_retries is 0)";
  for (int attempt = 0; attempt < config_.max_retries; ++attempt) {
    httplib::Client client(parts.base);
    client.set_connection_timeout(std::chrono::milliseconds(
        static_cast<int>(config_.timeout_seconds * 1000)));
    client.set_read_timeout(std::chrono::milliseconds(
        static_cast<int>(config_.timeout_seconds * 1000)));
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    ++endpoint_calls_;
    auto response = client.Post(parts.path, headers, body, "application/json");
    if (!response) {
      last_error = "transport error: " + httplib::to_string(response.error());
      continue;
    }
    if (response->status != 200) {
      last_error = "endpoint returned status " + std::to_string(response->status);
      continue;
    }
    std::string content;
    try {
      const auto doc = nlohmann::json::parse(response->body);
      content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
      last_error = std::string("malformed endpoint response: ") + e.what();
      continue;
    }
    const auto parsed = parse_decision(content);
    if (!parsed) {
      last_error = "response contains neither Optimistic nor Pessimistic";
      continue;
    }
    RouterDecision decision;
    decision.anchor_date = sample.anchor_date;
    decision.label = parsed->label;
    decision.reasoning = parsed->reasoning;
    decision.source = DecisionSource::llm;
    decision.model_id = config_.model_id;
    decision.prompt_hash = hash;
    if (!cache_.put(decision)) {
      // Another thread resolved the same prompt first; reuse its decision.
      auto hit = cache_.lookup(hash);
      if (hit) {
        hit->source = DecisionSource::cache;
        hit->anchor_date = sample.anchor_date;
        return *hit;
      }
    }
    return decision;
  }

  if (config_.fallback == RouterConfig::Fallback::rule) {
    RuleRouter rule;
    RouterDecision decision = rule.route(sample);
    decision.source = DecisionSource::rule;
    return decision;
  }
  throw std::runtime_error("router failed for anchor " +
                           format_date(sample.anchor_date) + " after " +
                           std::to_string(config_.max_retries) +
                           " attempts; last error: " + last_error);
}

std::vector<RouterDecision> route_all(const std::vector<WindowSample>& samples,
                                      Router& router, int concurrency) {
  std::vector<RouterDecision> decisions(samples.size());
  if (samples.empty()) return decisions;

  if (concurrency <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      decisions[i] = router.route(samples[i]);
    }
    return decisions;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(samples.size());
  const int workers = std::min<int>(concurrency, static_cast<int>(samples.size()));
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= samples.size()) return;
        try {
          decisions[i] = router.route(samples[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
  return decisions;
}

}  // namespace llmoe

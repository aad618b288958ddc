#include "llmoe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "llmoe/util.hpp"

namespace llmoe {

namespace {

constexpr double kBceClamp = 1e-7;

void check_alignment(const std::vector<WindowSample>& samples,
                     const std::vector<RouterDecision>& decisions,
                     const char* where) {
  if (samples.size() != decisions.size()) {
    throw std::invalid_argument(std::string(where) + ": " +
                                std::to_string(decisions.size()) +
                                " decisions for " + std::to_string(samples.size()) +
                                " samples");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].anchor_date != decisions[i].anchor_date) {
      throw std::invalid_argument(std::string(where) +
                                  ": decision/sample date mismatch at position " +
                                  std::to_string(i) + " (" +
                                  format_date(samples[i].anchor_date) + " vs " +
                                  format_date(decisions[i].anchor_date) + ")");
    }
  }
}

std::vector<TrainingExample> to_examples(const std::vector<WindowSample>& samples,
                                         const std::vector<std::size_t>& indices) {
  std::vector<TrainingExample> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    out.push_back({samples[i].vector, static_cast<double>(samples[i].label)});
  }
  return out;
}

std::vector<TrainingExample> to_examples(const std::vector<WindowSample>& samples) {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return to_examples(samples, all);
}

}  // namespace

std::array<double, 55> sample_vector(const WindowSample& sample) {
  return sample.vector;
}

LlmoePolicy train_llmoe(const std::vector<WindowSample>& train_samples,
                        const std::vector<RouterDecision>& decisions,
                        const TrainConfig& config, int min_partition_size) {
  check_alignment(train_samples, decisions, "train_llmoe");
  if (min_partition_size < 1) {
    throw std::invalid_argument("train_llmoe: min_partition_size must be >= 1");
  }

  std::vector<std::size_t> optimistic_idx, pessimistic_idx;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i].label == RouterLabel::optimistic) {
      optimistic_idx.push_back(i);
    } else {
      pessimistic_idx.push_back(i);
    }
  }
  if (optimistic_idx.empty() && pessimistic_idx.empty()) {
    throw std::runtime_error("train_llmoe: no training samples in either partition");
  }

  LlmoePolicy policy;
  policy.min_partition_size = min_partition_size;

  const auto full_set = to_examples(train_samples);
  auto train_partition = [&](const std::vector<std::size_t>& indices,
                             bool& fell_back) {
    fell_back = indices.size() < static_cast<std::size_t>(min_partition_size);
    const auto examples = fell_back ? full_set : to_examples(train_samples, indices);
    return train_expert(init_expert(config.seed), examples, config).net;
  };
  policy.optimistic_expert =
      train_partition(optimistic_idx, policy.optimistic_fell_back);
  policy.pessimistic_expert =
      train_partition(pessimistic_idx, policy.pessimistic_fell_back);
  return policy;
}

PredictionSeries infer_llmoe(const LlmoePolicy& policy,
                             const std::vector<WindowSample>& test_samples,
                             const std::vector<RouterDecision>& decisions) {
  check_alignment(test_samples, decisions, "infer_llmoe");
  PredictionSeries predictions;
  predictions.reserve(test_samples.size());
  for (std::size_t i = 0; i < test_samples.size(); ++i) {
    const bool optimistic = decisions[i].label == RouterLabel::optimistic;
    const ExpertNet& expert =
        optimistic ? policy.optimistic_expert : policy.pessimistic_expert;
    PredictionRow row;
    row.anchor_date = test_samples[i].anchor_date;
    row.probability = predict(expert, test_samples[i].vector);
    row.up = row.probability >= 0.5;
    row.router_label = to_string(decisions[i].label);
    predictions.push_back(std::move(row));
  }
  return predictions;
}

namespace {

struct GateTrace {
  std::vector<double> softmax;
};

std::vector<double> gate_softmax(const GateLayer& gate,
                                 const std::array<double, 55>& x, int k) {
  std::vector<double> logits(k);
  for (int j = 0; j < k; ++j) {
    double acc = gate.biases[j];
    const double* row = gate.weights.data() + static_cast<std::size_t>(j) * 55;
    for (int c = 0; c < 55; ++c) {
      acc += row[c] * x[c];
    }
    logits[j] = acc;
  }
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - max_logit);
    sum += v;
  }
  for (double& v : logits) v /= sum;
  return logits;
}

}  // namespace

std::vector<double> gate_weights(const StaticMoe& moe,
                                 const std::array<double, 55>& x) {
  return gate_softmax(moe.gate, x, static_cast<int>(moe.experts.size()));
}

double static_moe_probability(const StaticMoe& moe,
                              const std::array<double, 55>& x) {
  const auto gates = gate_weights(moe, x);
  double mixture = 0.0;
  for (std::size_t k = 0; k < moe.experts.size(); ++k) {
    mixture += gates[k] * predict(moe.experts[k], x);
  }
  return mixture;
}

StaticMoe train_static_moe(const std::vector<WindowSample>& train_samples,
                           int expert_count, const TrainConfig& config) {
  if (expert_count < 2) {
    throw std::invalid_argument("train_static_moe: need at least 2 experts, got " +
                                std::to_string(expert_count));
  }
  if (train_samples.empty()) {
    throw std::invalid_argument("train_static_moe: empty training data");
  }
  if (config.epochs < 1 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw std::invalid_argument("train_static_moe: invalid training config");
  }

  const auto data = to_examples(train_samples);
  const int k = expert_count;

  StaticMoe moe;
  moe.experts.reserve(k);
  for (int e = 0; e < k; ++e) {
    // Distinct init per expert breaks the symmetry a shared gate would
    // otherwise never escape.
    moe.experts.push_back(init_expert(mix_seed(config.seed, e)));
  }
  Rng gate_rng(mix_seed(config.seed, 0x6a7e));
  moe.gate.weights.resize(static_cast<std::size_t>(k) * 55);
  const double gate_std = std::sqrt(2.0 / 55.0);
  for (auto& w : moe.gate.weights) w = gate_std * gate_rng.normal();
  moe.gate.biases.assign(k, 0.0);

  // Flat Adam state: experts first, then the gate.
  std::vector<detail::Gradients> expert_m(k), expert_v(k);
  for (int e = 0; e < k; ++e) {
    expert_m[e] = detail::zero_gradients();
    expert_v[e] = detail::zero_gradients();
  }
  std::vector<double> gate_mw(moe.gate.weights.size(), 0.0);
  std::vector<double> gate_vw(moe.gate.weights.size(), 0.0);
  std::vector<double> gate_mb(k, 0.0), gate_vb(k, 0.0);
  long step = 0;

  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const bool sgd = config.optimizer == TrainConfig::Optimizer::sgd;
  auto adam_update = [&](std::vector<double>& theta, const std::vector<double>& g,
                         std::vector<double>& m, std::vector<double>& v,
                         double bc1, double bc2) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (sgd) {
        theta[i] -= config.learning_rate * g[i];
        continue;
      }
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      theta[i] -= config.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  };

  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < data.size()) {
      const std::size_t batch_end =
          std::min(pos + static_cast<std::size_t>(config.batch_size), data.size());
      const double batch_n = static_cast<double>(batch_end - pos);

      std::vector<detail::Gradients> expert_grads(k);
      for (int e = 0; e < k; ++e) expert_grads[e] = detail::zero_gradients();
      std::vector<double> gate_gw(moe.gate.weights.size(), 0.0);
      std::vector<double> gate_gb(k, 0.0);

      for (std::size_t i = pos; i < batch_end; ++i) {
        const auto& ex = data[order[i]];
        std::vector<ForwardTrace> traces;
        traces.reserve(k);
        for (int e = 0; e < k; ++e) {
          traces.push_back(forward(moe.experts[e], ex.x, true, &rng));
        }
        const auto gates = gate_softmax(moe.gate, ex.x, k);
        double mixture = 0.0;
        for (int e = 0; e < k; ++e) mixture += gates[e] * traces[e].probability;

        const double yc = std::clamp(mixture, kBceClamp, 1.0 - kBceClamp);
        loss_sum += -(ex.y * std::log(yc) + (1.0 - ex.y) * std::log(1.0 - yc));
        const double dmix = (-ex.y / yc + (1.0 - ex.y) / (1.0 - yc)) / batch_n;

        // Experts: dL/dlogit_e = dL/dmix * g_e * p_e (1 - p_e).
        for (int e = 0; e < k; ++e) {
          const double p = traces[e].probability;
          const double dlogit = dmix * gates[e] * p * (1.0 - p);
          detail::backward(moe.experts[e], ex.x, traces[e], dlogit,
                           expert_grads[e]);
        }
        // Gate: softmax backward of dL/dg_e = dL/dmix * p_e. The weighted
        // mean of p over gates is the mixture itself.
        for (int e = 0; e < k; ++e) {
          const double da = dmix * gates[e] * (traces[e].probability - mixture);
          gate_gb[e] += da;
          double* row = gate_gw.data() + static_cast<std::size_t>(e) * 55;
          for (int c = 0; c < 55; ++c) {
            row[c] += da * ex.x[c];
          }
        }
      }

      ++step;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (int e = 0; e < k; ++e) {
        for (int l = 0; l < 4; ++l) {
          adam_update(moe.experts[e].weights[l], expert_grads[e].weights[l],
                      expert_m[e].weights[l], expert_v[e].weights[l], bc1, bc2);
          adam_update(moe.experts[e].biases[l], expert_grads[e].biases[l],
                      expert_m[e].biases[l], expert_v[e].biases[l], bc1, bc2);
        }
      }
      adam_update(moe.gate.weights, gate_gw, gate_mw, gate_vw, bc1, bc2);
      adam_update(moe.gate.biases, gate_gb, gate_mb, gate_vb, bc1, bc2);
      pos = batch_end;
    }
    const double epoch_loss = loss_sum / static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) {
      throw std::runtime_error("train_static_moe: loss diverged at epoch " +
                               std::to_string(epoch + 1));
    }
  }
  return moe;
}

PredictionSeries infer_static_moe(const StaticMoe& moe,
                                  const std::vector<WindowSample>& test_samples) {
  PredictionSeries predictions;
  predictions.reserve(test_samples.size());
  for (const auto& sample : test_samples) {
    const auto gates = gate_weights(moe, sample.vector);
    double mixture = 0.0;
    for (std::size_t e = 0; e < moe.experts.size(); ++e) {
      mixture += gates[e] * predict(moe.experts[e], sample.vector);
    }
    const auto argmax =
        std::distance(gates.begin(), std::max_element(gates.begin(), gates.end()));
    PredictionRow row;
    row.anchor_date = sample.anchor_date;
    row.probability = mixture;
    row.up = mixture >= 0.5;
    row.router_label = std::to_string(argmax);
    predictions.push_back(std::move(row));
  }
  return predictions;
}

ExpertNet train_single_mlp(const std::vector<WindowSample>& train_samples,
                           const TrainConfig& config) {
  if (train_samples.empty()) {
    throw std::invalid_argument("train_single_mlp: empty training data");
  }
  return train_expert(init_expert(config.seed), to_examples(train_samples), config)
      .net;
}

PredictionSeries infer_single_mlp(const ExpertNet& net,
                                  const std::vector<WindowSample>& test_samples) {
  PredictionSeries predictions;
  predictions.reserve(test_samples.size());
  for (const auto& sample : test_samples) {
    PredictionRow row;
    row.anchor_date = sample.anchor_date;
    row.probability = predict(net, sample.vector);
    row.up = row.probability >= 0.5;
    row.router_label = "-";
    predictions.push_back(std::move(row));
  }
  return predictions;
}

SimulationResult backtest_predictions(const PredictionSeries& predictions,
                                      const std::vector<WindowSample>& samples,
                                      double initial_value) {
  if (predictions.size() != samples.size()) {
    throw std::invalid_argument("backtest_predictions: prediction/sample mismatch");
  }
  std::vector<bool> up;
  std::vector<double> returns;
  std::vector<Date> dates;
  up.reserve(samples.size());
  returns.reserve(samples.size());
  dates.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    up.push_back(predictions[i].up);
    returns.push_back(samples[i].next_return);
    dates.push_back(samples[i].anchor_date);
  }
  return simulate_all_in_all_out(up, returns, dates, initial_value);
}

void save_policy_bundle(const LlmoePolicy& policy, const TrainConfig& config,
                        const std::string& cache_digest, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_checkpoint(policy.optimistic_expert, dir + "/optimistic.json");
  save_checkpoint(policy.pessimistic_expert, dir + "/pessimistic.json");

  nlohmann::ordered_json manifest;
  manifest["router_kind"] = policy.router_kind;
  manifest["min_partition_size"] = policy.min_partition_size;
  manifest["optimistic_fell_back"] = policy.optimistic_fell_back;
  manifest["pessimistic_fell_back"] = policy.pessimistic_fell_back;
  manifest["seed"] = config.seed;
  manifest["learning_rate"] = config.learning_rate;
  manifest["batch_size"] = config.batch_size;
  manifest["epochs"] = config.epochs;
  manifest["optimizer"] =
      config.optimizer == TrainConfig::Optimizer::adam ? "adam" : "sgd";
  manifest["decision_cache_digest"] = cache_digest;
  atomic_write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

LlmoePolicy load_policy_bundle(const std::string& dir) {
  LlmoePolicy policy;
  policy.optimistic_expert = load_checkpoint(dir + "/optimistic.json");
  policy.pessimistic_expert = load_checkpoint(dir + "/pessimistic.json");
  const auto manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
  policy.router_kind = manifest.at("router_kind").get<std::string>();
  policy.min_partition_size = manifest.at("min_partition_size").get<int>();
  policy.optimistic_fell_back = manifest.at("optimistic_fell_back").get<bool>();
  policy.pessimistic_fell_back = manifest.at("pessimistic_fell_back").get<bool>();
  return policy;
}

}  // namespace llmoe

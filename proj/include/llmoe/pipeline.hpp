#pragma once

#include <string>
#include <vector>

#include "llmoe/backtest.hpp"
#include "llmoe/experts.hpp"
#include "llmoe/router.hpp"

namespace llmoe {

// LLMoE policy: one expert per router context. When a training partition
// is smaller than min_partition_size that expert falls back to the full
// training set (degradation to a shared expert).
struct LlmoePolicy {
  ExpertNet optimistic_expert;
  ExpertNet pessimistic_expert;
  std::string router_kind = "rule";
  int min_partition_size = 30;
  bool optimistic_fell_back = false;
  bool pessimistic_fell_back = false;
};

struct GateLayer {
  std::vector<double> weights;  // K x 55, row-major
  std::vector<double> biases;   // K
};

// Static-gating baseline: K experts blended by a dense linear-softmax gate.
struct StaticMoe {
  std::vector<ExpertNet> experts;
  GateLayer gate;
};

struct PredictionRow {
  Date anchor_date;
  bool up = false;
  double probability = 0.5;
  std::string router_label;  // Optimistic/Pessimistic, or gate argmax index
};

using PredictionSeries = std::vector<PredictionRow>;

std::array<double, 55> sample_vector(const WindowSample& sample);

// decisions must align 1:1 with samples (same anchor dates, same order).
LlmoePolicy train_llmoe(const std::vector<WindowSample>& train_samples,
                        const std::vector<RouterDecision>& decisions,
                        const TrainConfig& config, int min_partition_size = 30);

PredictionSeries infer_llmoe(const LlmoePolicy& policy,
                             const std::vector<WindowSample>& test_samples,
                             const std::vector<RouterDecision>& decisions);

// Jointly trains gate and experts by gradient descent on the BCE of the
// gated mixture output. K >= 2.
StaticMoe train_static_moe(const std::vector<WindowSample>& train_samples,
                           int expert_count, const TrainConfig& config);

// Gate softmax for one input; sums to 1.
std::vector<double> gate_weights(const StaticMoe& moe,
                                 const std::array<double, 55>& x);

// Mixture probability (convex combination of expert probabilities).
double static_moe_probability(const StaticMoe& moe,
                              const std::array<double, 55>& x);

PredictionSeries infer_static_moe(const StaticMoe& moe,
                                  const std::vector<WindowSample>& test_samples);

ExpertNet train_single_mlp(const std::vector<WindowSample>& train_samples,
                           const TrainConfig& config);

PredictionSeries infer_single_mlp(const ExpertNet& net,
                                  const std::vector<WindowSample>& test_samples);

// Backtests a prediction series against the samples' realized next-day
// returns.
SimulationResult backtest_predictions(const PredictionSeries& predictions,
                                      const std::vector<WindowSample>& samples,
                                      double initial_value = 1.0);

// Policy bundle: two checkpoints plus a manifest that pins router kind,
// seed, config and the decision-cache digest for exact re-inference.
void save_policy_bundle(const LlmoePolicy& policy, const TrainConfig& config,
                        const std::string& cache_digest, const std::string& dir);
LlmoePolicy load_policy_bundle(const std::string& dir);

}  // namespace llmoe

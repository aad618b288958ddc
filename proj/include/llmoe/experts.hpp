#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "llmoe/rng.hpp"

namespace llmoe {

inline constexpr std::array<int, 5> kExpertLayerDims = {55, 128, 64, 32, 1};
// Dropout after each hidden layer's ReLU; layer 1 has none.
inline constexpr std::array<double, 3> kExpertDropout = {0.0, 0.3, 0.2};
inline constexpr int kCheckpointVersion = 1;

// 55-128-64-32-1 feedforward binary classifier. Weights are row-major
// (out x in). Output is a sigmoid probability in (0,1).
struct ExpertNet {
  std::array<std::vector<double>, 4> weights;  // weights[l][r*in + c]
  std::array<std::vector<double>, 4> biases;
  std::uint64_t rng_seed = 0;

  std::size_t parameter_count() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 100;
  enum class Optimizer { adam, sgd } optimizer = Optimizer::adam;
  std::uint64_t seed = 0;
  int early_stop_patience = 0;  // 0 disables early stopping
};

struct TrainingExample {
  std::array<double, 55> x{};
  double y = 0.0;  // 0 or 1
};

// Activations kept from a forward pass, enough to backpropagate.
struct ForwardTrace {
  std::array<std::vector<double>, 3> hidden;        // post-ReLU (and dropout)
  std::array<std::vector<double>, 3> dropout_mask;  // scale per unit; empty if off
  double probability = 0.5;
};

struct TrainResult {
  ExpertNet net;
  std::vector<double> loss_trace;  // mean BCE per epoch
};

// He-normal weights (variance 2/fan_in), zero biases; deterministic per seed.
ExpertNet init_expert(std::uint64_t seed);

// When training is true, inverted dropout masks are drawn from rng (scale
// 1/(1-p) on kept units) so inference needs no rescaling. rng may be null
// when training is false.
ForwardTrace forward(const ExpertNet& net, const std::array<double, 55>& x,
                     bool training, Rng* rng);

double predict(const ExpertNet& net, const std::array<double, 55>& x);

// Minibatch gradient descent on mean binary cross-entropy. Shuffling,
// dropout masks and batching all derive from config.seed. Throws on empty
// data, epochs < 1, or a non-finite epoch loss.
TrainResult train_expert(const ExpertNet& net,
                         const std::vector<TrainingExample>& data,
                         const TrainConfig& config);

// Mean clamped BCE of the net over data, dropout off.
double evaluate_loss(const ExpertNet& net,
                     const std::vector<TrainingExample>& data);

// Compares the analytic BCE gradient against central finite differences
// over up to `sample_params` randomly chosen parameters (dropout off).
// Returns the max relative error, with a 1e-8 absolute floor for
// near-zero gradient pairs.
double gradient_check(const ExpertNet& net, const std::array<double, 55>& x,
                      int label, double epsilon, int sample_params = 500,
                      std::uint64_t sample_seed = 1);

void save_checkpoint(const ExpertNet& net, const std::string& path);
ExpertNet load_checkpoint(const std::string& path);

// Internals shared with the static-MoE trainer; exposed for tests.
namespace detail {

struct Gradients {
  std::array<std::vector<double>, 4> weights;
  std::array<std::vector<double>, 4> biases;
};

Gradients zero_gradients();

// Forward trace -> gradients, given dLoss/dLogit at the output neuron.
// Returns dLoss/dInput when input_grad is non-null.
void backward(const ExpertNet& net, const std::array<double, 55>& x,
              const ForwardTrace& trace, double dloss_dlogit, Gradients& grads,
              std::array<double, 55>* input_grad = nullptr);

double clamped_bce(double p, double y);

// Exact derivative of BCE(sigmoid(z)) w.r.t. z.
inline double bce_dlogit(double p, double y) { return p - y; }

}  // namespace detail

}  // namespace llmoe

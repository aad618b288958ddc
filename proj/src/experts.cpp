#include "llmoe/experts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "llmoe/util.hpp"

namespace llmoe {

namespace {

constexpr double kProbFloor = 1e-15;   // keeps predict output strictly in (0,1)
constexpr double kBceClamp = 1e-7;     // keeps log() arguments away from 0
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

double sigmoid(double z) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

// y = W x + b, W row-major (rows x cols).
void affine(const std::vector<double>& w, const std::vector<double>& b,
            const double* x, int rows, int cols, double* out) {
  for (int r = 0; r < rows; ++r) {
    double acc = b[r];
    const double* row = w.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      acc += row[c] * x[c];
    }
    out[r] = acc;
  }
}

}  // namespace

std::size_t ExpertNet::parameter_count() const {
  std::size_t n = 0;
  for (int l = 0; l < 4; ++l) {
    n += weights[l].size() + biases[l].size();
  }
  return n;
}

ExpertNet init_expert(std::uint64_t seed) {
  ExpertNet net;
  net.rng_seed = seed;
  Rng rng(seed);
  for (int l = 0; l < 4; ++l) {
    const int fan_in = kExpertLayerDims[l];
    const int fan_out = kExpertLayerDims[l + 1];
    const double stddev = std::sqrt(2.0 / fan_in);
    net.weights[l].resize(static_cast<std::size_t>(fan_out) * fan_in);
    for (auto& w : net.weights[l]) {
      w = stddev * rng.normal();
    }
    net.biases[l].assign(fan_out, 0.0);
  }
  return net;
}

ForwardTrace forward(const ExpertNet& net, const std::array<double, 55>& x,
                     bool training, Rng* rng) {
  if (training && rng == nullptr) {
    throw std::invalid_argument("forward: training mode needs an rng for dropout");
  }
  ForwardTrace trace;
  const double* input = x.data();
  for (int l = 0; l < 3; ++l) {
    const int rows = kExpertLayerDims[l + 1];
    const int cols = kExpertLayerDims[l];
    auto& h = trace.hidden[l];
    h.resize(rows);
    affine(net.weights[l], net.biases[l], input, rows, cols, h.data());
    for (double& v : h) {
      v = v > 0.0 ? v : 0.0;
    }
    const double p_drop = kExpertDropout[l];
    if (training && p_drop > 0.0) {
      auto& mask = trace.dropout_mask[l];
      mask.resize(rows);
      const double keep_scale = 1.0 / (1.0 - p_drop);
      for (int i = 0; i < rows; ++i) {
        mask[i] = rng->bernoulli(p_drop) ? 0.0 : keep_scale;
        h[i] *= mask[i];
      }
    }
    input = h.data();
  }
  double logit = 0.0;
  affine(net.weights[3], net.biases[3], input, 1, kExpertLayerDims[3], &logit);
  trace.probability = sigmoid(logit);
  return trace;
}

double predict(const ExpertNet& net, const std::array<double, 55>& x) {
  return forward(net, x, false, nullptr).probability;
}

namespace detail {

Gradients zero_gradients() {
  Gradients g;
  for (int l = 0; l < 4; ++l) {
    g.weights[l].assign(
        static_cast<std::size_t>(kExpertLayerDims[l + 1]) * kExpertLayerDims[l], 0.0);
    g.biases[l].assign(kExpertLayerDims[l + 1], 0.0);
  }
  return g;
}

double clamped_bce(double p, double y) {
  const double pc = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

void backward(const ExpertNet& net, const std::array<double, 55>& x,
              const ForwardTrace& trace, double dloss_dlogit, Gradients& grads,
              std::array<double, 55>* input_grad) {
  // Output layer: logit = W4 h3 + b4.
  const auto& h3 = trace.hidden[2];
  const int n3 = kExpertLayerDims[3];
  for (int c = 0; c < n3; ++c) {
    grads.weights[3][c] += dloss_dlogit * h3[c];
  }
  grads.biases[3][0] += dloss_dlogit;

  std::vector<double> delta(n3);  // dLoss/d(post-activation of layer below)
  for (int c = 0; c < n3; ++c) {
    delta[c] = net.weights[3][c] * dloss_dlogit;
  }

  // Hidden layers 3..1. A unit's post value is positive iff its ReLU was
  // active and it survived dropout, so the stored activations and masks
  // are enough to gate the gradient.
  for (int l = 2; l >= 0; --l) {
    const int rows = kExpertLayerDims[l + 1];
    const int cols = kExpertLayerDims[l];
    const auto& h = trace.hidden[l];
    const auto& mask = trace.dropout_mask[l];
    std::vector<double> da(rows);
    for (int r = 0; r < rows; ++r) {
      if (h[r] > 0.0) {
        const double scale = mask.empty() ? 1.0 : mask[r];
        da[r] = delta[r] * scale;
      } else {
        da[r] = 0.0;
      }
    }
    const double* below = l == 0 ? x.data() : trace.hidden[l - 1].data();
    for (int r = 0; r < rows; ++r) {
      if (da[r] == 0.0) continue;
      double* wrow = grads.weights[l].data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) {
        wrow[c] += da[r] * below[c];
      }
      grads.biases[l][r] += da[r];
    }
    if (l > 0 || input_grad != nullptr) {
      std::vector<double> next(cols, 0.0);
      for (int r = 0; r < rows; ++r) {
        if (da[r] == 0.0) continue;
        const double* wrow =
            net.weights[l].data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          next[c] += wrow[c] * da[r];
        }
      }
      if (l == 0) {
        std::copy(next.begin(), next.end(), input_grad->begin());
      } else {
        delta = std::move(next);
      }
    }
  }
}

}  // namespace detail

namespace {

struct AdamState {
  detail::Gradients m = detail::zero_gradients();
  detail::Gradients v = detail::zero_gradients();
  long step = 0;
};

void apply_update(ExpertNet& net, const detail::Gradients& grads,
                  const TrainConfig& config, AdamState& adam) {
  if (config.optimizer == TrainConfig::Optimizer::sgd) {
    for (int l = 0; l < 4; ++l) {
      for (std::size_t i = 0; i < net.weights[l].size(); ++i) {
        net.weights[l][i] -= config.learning_rate * grads.weights[l][i];
      }
      for (std::size_t i = 0; i < net.biases[l].size(); ++i) {
        net.biases[l][i] -= config.learning_rate * grads.biases[l][i];
      }
    }
    return;
  }
  ++adam.step;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.step));
  auto update = [&](std::vector<double>& theta, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
    }
  };
  for (int l = 0; l < 4; ++l) {
    update(net.weights[l], grads.weights[l], adam.m.weights[l], adam.v.weights[l]);
    update(net.biases[l], grads.biases[l], adam.m.biases[l], adam.v.biases[l]);
  }
}

}  // namespace

TrainResult train_expert(const ExpertNet& net,
                         const std::vector<TrainingExample>& data,
                         const TrainConfig& config) {
  if (data.empty()) {
    throw std::invalid_argument("train_expert: empty training data");
  }
  if (config.epochs < 1) {
    throw std::invalid_argument("train_expert: epochs must be >= 1");
  }
  if (config.batch_size < 1) {
    throw std::invalid_argument("train_expert: batch_size must be >= 1");
  }
  if (!(config.learning_rate > 0.0)) {
    throw std::invalid_argument("train_expert: learning_rate must be > 0");
  }
  for (const auto& ex : data) {
    if (ex.y != 0.0 && ex.y != 1.0) {
      throw std::invalid_argument("train_expert: labels must be 0 or 1");
    }
  }

  TrainResult result;
  result.net = net;
  Rng rng(config.seed);
  AdamState adam;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  double best_loss = std::numeric_limits<double>::infinity();
  int stale_epochs = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t batch_end =
          std::min(pos + static_cast<std::size_t>(config.batch_size), order.size());
      const double batch_n = static_cast<double>(batch_end - pos);
      auto grads = detail::zero_gradients();
      for (std::size_t i = pos; i < batch_end; ++i) {
        const auto& ex = data[order[i]];
        const auto trace = forward(result.net, ex.x, true, &rng);
        loss_sum += detail::clamped_bce(trace.probability, ex.y);
        detail::backward(result.net, ex.x, trace,
                         detail::bce_dlogit(trace.probability, ex.y) / batch_n,
                         grads);
      }
      apply_update(result.net, grads, config, adam);
      pos = batch_end;
    }
    const double epoch_loss = loss_sum / static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) {
      throw std::runtime_error("train_expert: loss diverged at epoch " +
                               std::to_string(epoch + 1));
    }
    result.loss_trace.push_back(epoch_loss);

    if (config.early_stop_patience > 0) {
      if (epoch_loss < best_loss - 1e-12) {
        best_loss = epoch_loss;
        stale_epochs = 0;
      } else if (++stale_epochs >= config.early_stop_patience) {
        break;
      }
    }
  }
  return result;
}

double evaluate_loss(const ExpertNet& net,
                     const std::vector<TrainingExample>& data) {
  if (data.empty()) {
    throw std::invalid_argument("evaluate_loss: empty data");
  }
  double sum = 0.0;
  for (const auto& ex : data) {
    sum += detail::clamped_bce(predict(net, ex.x), ex.y);
  }
  return sum / static_cast<double>(data.size());
}

double gradient_check(const ExpertNet& net, const std::array<double, 55>& x,
                      int label, double epsilon, int sample_params,
                      std::uint64_t sample_seed) {
  const double y = static_cast<double>(label);

  auto grads = detail::zero_gradients();
  const auto trace = forward(net, x, false, nullptr);
  detail::backward(net, x, trace, detail::bce_dlogit(trace.probability, y), grads);

  // Flat parameter addressing: per layer, weights then biases.
  struct Slot {
    int layer;
    bool bias;
    std::size_t index;
  };
  std::vector<Slot> slots;
  for (int l = 0; l < 4; ++l) {
    for (std::size_t i = 0; i < net.weights[l].size(); ++i) {
      slots.push_back({l, false, i});
    }
    for (std::size_t i = 0; i < net.biases[l].size(); ++i) {
      slots.push_back({l, true, i});
    }
  }
  if (sample_params > 0 && static_cast<std::size_t>(sample_params) < slots.size()) {
    Rng rng(sample_seed);
    rng.shuffle(slots);
    slots.resize(sample_params);
  }

  ExpertNet probe = net;
  double max_rel = 0.0;
  for (const auto& slot : slots) {
    auto& param = slot.bias ? probe.biases[slot.layer][slot.index]
                            : probe.weights[slot.layer][slot.index];
    const double original = param;
    param = original + epsilon;
    const double loss_plus =
        detail::clamped_bce(forward(probe, x, false, nullptr).probability, y);
    param = original - epsilon;
    const double loss_minus =
        detail::clamped_bce(forward(probe, x, false, nullptr).probability, y);
    param = original;

    const double numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
    const double analytic = slot.bias ? grads.biases[slot.layer][slot.index]
                                      : grads.weights[slot.layer][slot.index];
    const double abs_err = std::fabs(analytic - numeric);
    // Dead paths give ~0 on both sides; below the absolute floor they count
    // as exact.
    if (abs_err <= 1e-8) continue;
    const double rel = abs_err / std::max(std::fabs(analytic), std::fabs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

void save_checkpoint(const ExpertNet& net, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["format_version"] = kCheckpointVersion;
  doc["layer_dims"] = kExpertLayerDims;
  doc["dropout_rates"] = kExpertDropout;
  doc["seed"] = net.rng_seed;
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (int l = 0; l < 4; ++l) {
    nlohmann::ordered_json layer;
    layer["weights"] = net.weights[l];  // row-major
    layer["biases"] = net.biases[l];
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  atomic_write_file(path, doc.dump());
}

ExpertNet load_checkpoint(const std::string& path) {
  const auto doc = nlohmann::json::parse(read_file(path));
  if (doc.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version in " + path);
  }
  const auto dims = doc.at("layer_dims").get<std::vector<int>>();
  if (!std::equal(dims.begin(), dims.end(), kExpertLayerDims.begin(),
                  kExpertLayerDims.end())) {
    throw std::runtime_error("load_checkpoint: layer dims mismatch in " + path);
  }
  ExpertNet net;
  net.rng_seed = doc.at("seed").get<std::uint64_t>();
  const auto& layers = doc.at("layers");
  if (layers.size() != 4) {
    throw std::runtime_error("load_checkpoint: expected 4 layers in " + path);
  }
  for (int l = 0; l < 4; ++l) {
    net.weights[l] = layers[l].at("weights").get<std::vector<double>>();
    net.biases[l] = layers[l].at("biases").get<std::vector<double>>();
    const auto expected_w =
        static_cast<std::size_t>(kExpertLayerDims[l + 1]) * kExpertLayerDims[l];
    if (net.weights[l].size() != expected_w ||
        net.biases[l].size() != static_cast<std::size_t>(kExpertLayerDims[l + 1])) {
      throw std::runtime_error("load_checkpoint: parameter shape mismatch in " + path);
    }
    for (double v : net.weights[l]) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("load_checkpoint: non-finite weight in " + path);
      }
    }
  }
  return net;
}

}  // namespace llmoe

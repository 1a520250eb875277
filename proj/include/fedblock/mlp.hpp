#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fedblock {

enum class Activation : std::uint8_t { None = 0, ReLU = 1, SeLU = 2, Sigmoid = 3 };

struct LayerSpec {
  std::size_t width = 1;
  Activation activation = Activation::None;

  bool operator==(const LayerSpec&) const = default;
};

// input layer (None) -> 416 ReLU -> 32 SeLU -> 1 Sigmoid
std::vector<LayerSpec> default_architecture(std::size_t input_width = 1536);

struct Layer {
  std::vector<double> weights;  // row-major, out x in
  std::vector<double> bias;     // out

  bool operator==(const Layer&) const = default;
};

struct ModelParams {
  std::vector<LayerSpec> architecture;  // architecture[0] is the input layer
  std::vector<Layer> layers;            // architecture.size() - 1 weight layers

  std::size_t input_width() const { return architecture.front().width; }
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void add_flat(std::span<const double> delta);  // theta += delta
  static ModelParams from_flat(std::vector<LayerSpec> architecture, std::span<const double> flat);

  // versioned binary container; loading validates shape invariants
  void save(const std::filesystem::path& path) const;
  static ModelParams load(const std::filesystem::path& path);

  bool operator==(const ModelParams&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double roc_auc = 0.0;
  double f1 = 0.0;  // on label 0 (malicious), the detection class
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// A borrowed training example; callers keep the feature storage alive.
struct Example {
  std::span<const double> features;
  int label = 0;
};

// Xavier-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
ModelParams init_params(const std::vector<LayerSpec>& architecture, std::uint64_t seed);

// Probability of label 1 (non-malicious); always strictly inside (0, 1).
double forward(const ModelParams& params, std::span<const double> features);

double bce_loss(double p, int y);

using Gradient = std::vector<Layer>;

// Mean gradient of the BCE loss over the batch, exact analytic derivatives
// (sigmoid+BCE fused at the output). mean_loss, when given, receives the
// batch's mean loss from the same pass.
Gradient backward(const ModelParams& params, std::span<const Example> batch,
                  double* mean_loss = nullptr);

void sgd_step(ModelParams& params, const Gradient& gradient, double learning_rate);

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_curve;  // mean loss per epoch
};

TrainResult train(ModelParams params, std::span<const Example> data, const TrainConfig& config);

// Mean BCE loss without touching parameters.
double mean_loss(const ModelParams& params, std::span<const Example> data);

// Rank-based ROC AUC with ties counted 1/2; exact match for the all-pairs
// definition. Throws SingleClassError when one class is absent.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

MetricsReport evaluate(const ModelParams& params, std::span<const Example> data,
                       double threshold = 0.5);

// Plain accuracy; usable on single-class data where evaluate() cannot be.
double accuracy(const ModelParams& params, std::span<const Example> data, double threshold = 0.5);

std::string metrics_to_json(const MetricsReport& report);

}  // namespace fedblock

#include "fedblock/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "fedblock/errors.hpp"
#include "fedblock/rng.hpp"
#include "nlohmann/json.hpp"

namespace fedblock {

namespace {

constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
constexpr double kSeluLambda = 1.0507009873554804934193349852946;

// four-accumulator dot product: keeps the FP adds pipelined without
// reassociation flags
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3));
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double activate(Activation act, double z) {
  switch (act) {
    case Activation::ReLU:
      return z > 0.0 ? z : 0.0;
    case Activation::SeLU:
      return z > 0.0 ? kSeluLambda * z : kSeluLambda * kSeluAlpha * (std::exp(std::min(z, 0.0)) - 1.0);
    case Activation::Sigmoid: {
      if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
      const double e = std::exp(z);
      return e / (1.0 + e);
    }
    case Activation::None:
      return z;
  }
  return z;
}

// derivative w.r.t. z given z (ReLU subgradient 0 at 0)
double activate_grad(Activation act, double z) {
  switch (act) {
    case Activation::ReLU:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::SeLU:
      return z > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(std::min(z, 0.0));
    case Activation::Sigmoid: {
      const double s = activate(Activation::Sigmoid, z);
      return s * (1.0 - s);
    }
    case Activation::None:
      return 1.0;
  }
  return 1.0;
}

// numerically stable BCE from the logit: max(z,0) - z*y + log1p(exp(-|z|))
double bce_from_logit(double z, int y) {
  return std::max(z, 0.0) - z * static_cast<double>(y) + std::log1p(std::exp(-std::abs(z)));
}

void check_architecture(const std::vector<LayerSpec>& arch) {
  if (arch.size() < 2) throw WidthMismatchError("architecture needs input and output layers");
  for (const LayerSpec& spec : arch) {
    if (spec.width < 1) throw WidthMismatchError("layer width must be >= 1");
  }
  // binary classifier: a single output unit read as P(label 1)
  if (arch.back().width != 1) throw WidthMismatchError("output layer must have width 1");
}

// scratch buffers reused across batches
struct Workspace {
  std::vector<std::vector<double>> z;     // pre-activations per weight layer
  std::vector<std::vector<double>> a;     // activations per layer (a[0] unused; input comes from the example)
  std::vector<std::vector<double>> delta; // dL/dz per weight layer

  void resize(const ModelParams& params) {
    const std::size_t n = params.layers.size();
    z.resize(n);
    a.resize(n);
    delta.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
      const std::size_t width = params.architecture[l + 1].width;
      z[l].resize(width);
      a[l].resize(width);
      delta[l].resize(width);
    }
  }
};

// forward pass storing intermediates; returns the output logit
double forward_stored(const ModelParams& params, std::span<const double> x, Workspace& ws) {
  const double* input = x.data();
  std::size_t input_width = params.input_width();
  if (x.size() != input_width) {
    throw WidthMismatchError("feature width " + std::to_string(x.size()) + " != input width " +
                             std::to_string(input_width));
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const Layer& layer = params.layers[l];
    const std::size_t out = params.architecture[l + 1].width;
    const Activation act = params.architecture[l + 1].activation;
    for (std::size_t o = 0; o < out; ++o) {
      const double zv = dot(&layer.weights[o * input_width], input, input_width) + layer.bias[o];
      ws.z[l][o] = zv;
      ws.a[l][o] = activate(act, zv);
    }
    input = ws.a[l].data();
    input_width = out;
  }
  return ws.z.back()[0];
}

Gradient zero_gradient(const ModelParams& params) {
  Gradient g(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    g[l].weights.assign(params.layers[l].weights.size(), 0.0);
    g[l].bias.assign(params.layers[l].bias.size(), 0.0);
  }
  return g;
}

}  // namespace

std::vector<LayerSpec> default_architecture(std::size_t input_width) {
  return {{input_width, Activation::None},
          {416, Activation::ReLU},
          {32, Activation::SeLU},
          {1, Activation::Sigmoid}};
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& layer : layers) n += layer.weights.size() + layer.bias.size();
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Layer& layer : layers) {
    flat.insert(flat.end(), layer.weights.begin(), layer.weights.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void ModelParams::add_flat(std::span<const double> delta) {
  if (delta.size() != parameter_count()) throw WidthMismatchError("delta length mismatch");
  std::size_t k = 0;
  for (Layer& layer : layers) {
    for (double& w : layer.weights) w += delta[k++];
    for (double& b : layer.bias) b += delta[k++];
  }
}

ModelParams ModelParams::from_flat(std::vector<LayerSpec> architecture,
                                   std::span<const double> flat) {
  check_architecture(architecture);
  ModelParams params;
  params.architecture = std::move(architecture);
  std::size_t k = 0;
  for (std::size_t l = 0; l + 1 < params.architecture.size(); ++l) {
    Layer layer;
    const std::size_t in = params.architecture[l].width;
    const std::size_t out = params.architecture[l + 1].width;
    if (k + in * out + out > flat.size()) throw WidthMismatchError("flat vector too short");
    layer.weights.assign(flat.begin() + k, flat.begin() + k + in * out);
    k += in * out;
    layer.bias.assign(flat.begin() + k, flat.begin() + k + out);
    k += out;
    params.layers.push_back(std::move(layer));
  }
  if (k != flat.size()) throw WidthMismatchError("flat vector too long");
  return params;
}

ModelParams init_params(const std::vector<LayerSpec>& architecture, std::uint64_t seed) {
  check_architecture(architecture);
  ModelParams params;
  params.architecture = architecture;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < architecture.size(); ++l) {
    const std::size_t in = architecture[l].width;
    const std::size_t out = architecture[l + 1].width;
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Layer layer;
    layer.weights.resize(in * out);
    for (double& w : layer.weights) w = rng.uniform(-bound, bound);
    layer.bias.assign(out, 0.0);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

double forward(const ModelParams& params, std::span<const double> features) {
  Workspace ws;
  ws.resize(params);
  const double z = forward_stored(params, features, ws);
  double p = activate(Activation::Sigmoid, z);
  // keep the probability strictly inside (0, 1)
  p = std::min(p, std::nextafter(1.0, 0.0));
  p = std::max(p, std::numeric_limits<double>::min());
  return p;
}

double bce_loss(double p, int y) {
  return -(static_cast<double>(y) * std::log(p) +
           (1.0 - static_cast<double>(y)) * std::log(1.0 - p));
}

namespace {

// shared by backward() and the train loop; accumulates into grad
double backward_into(const ModelParams& params, std::span<const Example> batch, Gradient& grad,
                     Workspace& ws) {
  const std::size_t n_layers = params.layers.size();
  double loss_sum = 0.0;
  for (const Example& ex : batch) {
    const double z_out = forward_stored(params, ex.features, ws);
    loss_sum += bce_from_logit(z_out, ex.label);
    // fused sigmoid + BCE at the output
    ws.delta.back()[0] = activate(Activation::Sigmoid, z_out) - static_cast<double>(ex.label);
    for (std::size_t l = n_layers; l-- > 0;) {
      const std::size_t out = params.architecture[l + 1].width;
      const std::size_t in = params.architecture[l].width;
      const double* below = l == 0 ? ex.features.data() : ws.a[l - 1].data();
      for (std::size_t o = 0; o < out; ++o) {
        const double d = ws.delta[l][o];
        if (d != 0.0) axpy(d, below, &grad[l].weights[o * in], in);
        grad[l].bias[o] += d;
      }
      if (l == 0) break;
      const Activation act_below = params.architecture[l].activation;
      std::fill(ws.delta[l - 1].begin(), ws.delta[l - 1].end(), 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = ws.delta[l][o];
        if (d != 0.0) axpy(d, &params.layers[l].weights[o * in], ws.delta[l - 1].data(), in);
      }
      for (std::size_t i = 0; i < in; ++i) {
        ws.delta[l - 1][i] *= activate_grad(act_below, ws.z[l - 1][i]);
      }
    }
  }
  return loss_sum;
}

void scale_gradient(Gradient& grad, double factor) {
  for (Layer& layer : grad) {
    for (double& w : layer.weights) w *= factor;
    for (double& b : layer.bias) b *= factor;
  }
}

}  // namespace

Gradient backward(const ModelParams& params, std::span<const Example> batch, double* mean_loss) {
  if (batch.empty()) throw EmptyDatasetError("backward needs a non-empty batch");
  Workspace ws;
  ws.resize(params);
  Gradient grad = zero_gradient(params);
  const double loss_sum = backward_into(params, batch, grad, ws);
  scale_gradient(grad, 1.0 / static_cast<double>(batch.size()));
  if (mean_loss) *mean_loss = loss_sum / static_cast<double>(batch.size());
  return grad;
}

void sgd_step(ModelParams& params, const Gradient& gradient, double learning_rate) {
  if (gradient.size() != params.layers.size()) throw WidthMismatchError("gradient shape mismatch");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Layer& layer = params.layers[l];
    const Layer& g = gradient[l];
    if (g.weights.size() != layer.weights.size() || g.bias.size() != layer.bias.size()) {
      throw WidthMismatchError("gradient shape mismatch");
    }
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      layer.weights[i] -= learning_rate * g.weights[i];
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      layer.bias[i] -= learning_rate * g.bias[i];
    }
  }
}

TrainResult train(ModelParams params, std::span<const Example> data, const TrainConfig& config) {
  if (data.empty()) throw EmptyDatasetError("training needs at least one instance");
  if (config.batch_size < 1) throw WidthMismatchError("batch_size must be >= 1");
  if (config.learning_rate <= 0.0) throw Error("learning_rate must be positive");

  Workspace ws;
  ws.resize(params);
  Gradient grad = zero_gradient(params);
  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::vector<Example> batch;
  batch.reserve(config.batch_size);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      for (Layer& layer : grad) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
      }
      const double loss_sum = backward_into(params, batch, grad, ws);
      epoch_loss += loss_sum;
      scale_gradient(grad, 1.0 / static_cast<double>(batch.size()));
      sgd_step(params, grad, config.learning_rate);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  result.params = std::move(params);
  return result;
}

double mean_loss(const ModelParams& params, std::span<const Example> data) {
  if (data.empty()) throw EmptyDatasetError("mean_loss needs at least one instance");
  double sum = 0.0;
  for (const Example& ex : data) sum += bce_loss(forward(params, ex.features), ex.label);
  return sum / static_cast<double>(data.size());
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw WidthMismatchError("scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // doubled midranks keep everything in integers, so the result is the exact
  // ratio the all-pairs definition produces
  std::vector<std::int64_t> rank_x2(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // ranks are 1-based: block spans ranks i+1 .. j+1
    const std::int64_t sum_x2 = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) rank_x2[order[k]] = sum_x2;
    i = j + 1;
  }
  std::int64_t n1 = 0;
  std::int64_t rank_sum_x2 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      ++n1;
      rank_sum_x2 += rank_x2[k];
    }
  }
  const std::int64_t n0 = static_cast<std::int64_t>(n) - n1;
  if (n0 == 0 || n1 == 0) throw SingleClassError("roc_auc needs both classes");
  const std::int64_t numerator = rank_sum_x2 - n1 * (n1 + 1);  // = 2*U
  return static_cast<double>(numerator) / static_cast<double>(2 * n1 * n0);
}

MetricsReport evaluate(const ModelParams& params, std::span<const Example> data,
                       double threshold) {
  if (data.empty()) throw EmptyDatasetError("evaluate needs at least one instance");
  MetricsReport report;
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(data.size());
  labels.reserve(data.size());
  for (const Example& ex : data) {
    const double p = forward(params, ex.features);
    const int predicted = p >= threshold ? 1 : 0;
    scores.push_back(p);
    labels.push_back(ex.label);
    // label 0 (malicious) is the positive detection class
    if (predicted == 0 && ex.label == 0) ++report.tp;
    if (predicted == 0 && ex.label == 1) ++report.fp;
    if (predicted == 1 && ex.label == 1) ++report.tn;
    if (predicted == 1 && ex.label == 0) ++report.fn;
  }
  const std::size_t total = report.tp + report.fp + report.tn + report.fn;
  report.accuracy = static_cast<double>(report.tp + report.tn) / static_cast<double>(total);
  report.roc_auc = roc_auc(scores, labels);  // throws SingleClassError
  const std::size_t denom = 2 * report.tp + report.fp + report.fn;
  report.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(report.tp) / static_cast<double>(denom);
  return report;
}

double accuracy(const ModelParams& params, std::span<const Example> data, double threshold) {
  if (data.empty()) throw EmptyDatasetError("accuracy needs at least one instance");
  std::size_t correct = 0;
  for (const Example& ex : data) {
    const int predicted = forward(params, ex.features) >= threshold ? 1 : 0;
    correct += static_cast<std::size_t>(predicted == ex.label);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["roc_auc"] = report.roc_auc;
  j["f1"] = report.f1;
  j["tp"] = report.tp;
  j["fp"] = report.fp;
  j["tn"] = report.tn;
  j["fn"] = report.fn;
  return j.dump();
}

namespace {

constexpr char kModelMagic[4] = {'F', 'B', 'M', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated model file");
  return value;
}

}  // namespace

void ModelParams::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model file: " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(architecture.size()));
  for (const LayerSpec& spec : architecture) {
    write_pod<std::uint64_t>(out, spec.width);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(spec.activation));
  }
  for (const Layer& layer : layers) {
    out.write(reinterpret_cast<const char*>(layer.weights.data()),
              static_cast<std::streamsize>(layer.weights.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(layer.bias.data()),
              static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
  }
}

ModelParams ModelParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelMissingError("cannot open model file: " + path.string());
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw IoError("bad model file magic: " + path.string());
  }
  const auto n_specs = read_pod<std::uint32_t>(in);
  if (n_specs < 2 || n_specs > 64) throw IoError("implausible layer count in model file");
  ModelParams params;
  for (std::uint32_t i = 0; i < n_specs; ++i) {
    LayerSpec spec;
    spec.width = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
    spec.activation = static_cast<Activation>(read_pod<std::uint8_t>(in));
    if (spec.width < 1) throw IoError("invalid layer width in model file");
    params.architecture.push_back(spec);
  }
  for (std::size_t l = 0; l + 1 < params.architecture.size(); ++l) {
    Layer layer;
    const std::size_t in_w = params.architecture[l].width;
    const std::size_t out_w = params.architecture[l + 1].width;
    layer.weights.resize(in_w * out_w);
    layer.bias.resize(out_w);
    in.read(reinterpret_cast<char*>(layer.weights.data()),
            static_cast<std::streamsize>(layer.weights.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(layer.bias.data()),
            static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
    if (!in) throw IoError("truncated model file: " + path.string());
    params.layers.push_back(std::move(layer));
  }
  for (const Layer& layer : params.layers) {
    for (double v : layer.weights) {
      if (!std::isfinite(v)) throw IoError("non-finite weight in model file");
    }
    for (double v : layer.bias) {
      if (!std::isfinite(v)) throw IoError("non-finite bias in model file");
    }
  }
  return params;
}

}  // namespace fedblock

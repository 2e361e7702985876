#pragma once

// A small VGG-style convolutional classifier (conv -> ReLU -> max-pool blocks,
// dense ReLU head, linear class logits) with hand-written backpropagation,
// Adam, and a versioned checkpoint container.
//
// Parameters are held in double precision but are always float32-representable:
// initialisation and every optimiser step round them to the nearest float, so
// checkpoints (raw float32) round-trip exactly.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "frsaudit/image.hpp"

namespace frsaudit::model {

enum class Task { Gender, Country };

std::string_view to_string(Task t);
Task parse_task(std::string_view s);

struct ConvBlock {
  int filters = 16;
  int kernel = 3;  // odd; "same" zero padding
  int pool = 2;    // max-pool window and stride; 1 disables pooling
};

struct ClassifierConfig {
  int input_width = 200;
  int input_height = 256;
  int input_channels = 3;
  std::vector<ConvBlock> conv_blocks = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
  /// Hidden dense sizes; the last hidden layer is the embedding layer.
  std::vector<int> dense = {128};
  Task task = Task::Gender;
  /// Class names in logit order; classes() is their count.
  std::vector<std::string> class_labels = {"Male", "Female"};
  std::uint64_t weight_init_seed = 0;

  int classes() const { return static_cast<int>(class_labels.size()); }
  int label_index(std::string_view label) const;  // throws LabelMismatch
  /// Throws BadConfig when the architecture is unusable.
  void validate() const;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

/// Dense CHW tensor.
struct Tensor {
  int channels = 0, height = 0, width = 0;
  std::vector<double> values;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w),
      values(static_cast<std::size_t>(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t size() const { return values.size(); }
};

/// Resize to the configured input size (bilinear) and scale [0,255] -> [0,1].
/// No mean subtraction.
Tensor to_input(const ImageBuffer& img, const ClassifierConfig& cfg);

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

double round_to_float(double v);

class Network {
 public:
  /// All parameters zero.
  explicit Network(ClassifierConfig config);
  /// He-uniform weights from config.weight_init_seed, zero biases.
  static Network initialized(ClassifierConfig config);

  const ClassifierConfig& config() const noexcept { return config_; }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  const std::vector<TensorInfo>& layout() const noexcept { return layout_; }
  const TensorInfo& tensor(std::string_view name) const;
  std::span<double> tensor_values(std::string_view name);
  std::span<const double> tensor_values(std::string_view name) const;

  /// Everything backward() needs from one forward pass.
  struct Activations {
    std::vector<Tensor> block_inputs;   // input to each conv block
    std::vector<Tensor> conv_outputs;   // post-ReLU conv output, pre-pool
    std::vector<std::vector<int>> pool_argmax;
    std::vector<Tensor> pooled;         // block outputs
    std::vector<std::vector<double>> dense_inputs;
    std::vector<std::vector<double>> dense_outputs;  // post-ReLU
    std::vector<double> logits;
    std::vector<double> probabilities;
    std::vector<double> embedding;      // L2-normalised last hidden layer
    double embedding_norm = 0;          // sqrt(|h|^2 + eps)
  };

  Activations forward(const Tensor& input) const;
  std::vector<double> predict(const Tensor& input) const { return forward(input).probabilities; }

  /// Backpropagates d(loss)/d(logits) and, optionally, d(loss)/d(embedding).
  /// Parameter gradients are accumulated into `grad` (may be empty). When
  /// `d_last_conv` is non-null it receives d(loss)/d(last conv activation);
  /// with an empty `grad` backpropagation stops there.
  void backward(const Activations& act, std::span<const double> d_logits,
                std::span<const double> d_embedding, std::span<double> grad,
                Tensor* d_last_conv = nullptr) const;

  /// Logits computed from a given last-conv activation (post-ReLU, pre-pool).
  std::vector<double> logits_from_last_conv(const Tensor& activation) const;

 private:
  void build_layout();

  ClassifierConfig config_;
  std::vector<TensorInfo> layout_;
  std::vector<double> params_;
};

constexpr double kEmbeddingEps = 1e-12;

std::vector<double> softmax(std::span<const double> logits);

/// Softmax cross-entropy for one example; writes d(loss)/d(logits). With two
/// classes this is binary cross-entropy on the logit difference.
double cross_entropy(std::span<const double> logits, int label, std::span<double> d_logits);

struct Example {
  Tensor input;
  int label = 0;
};

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(std::size_t parameter_count = 0)
      : m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

  /// One bias-corrected Adam update; parameters are rounded to float32.
  void step(std::span<double> params, std::span<const double> grad, const AdamConfig& cfg);
  long steps() const noexcept { return t_; }

 private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Mean cross-entropy over the batch; mean gradient accumulated into `grad`.
double classification_gradient(const Network& net, std::span<const Example> batch,
                               std::span<double> grad);

struct StepMetrics {
  double loss = 0;
};

/// One Adam step on mean cross-entropy. Throws NonFiniteLoss (parameters
/// untouched) if the loss is not finite.
StepMetrics train_step(Network& net, std::span<const Example> batch, AdamState& optimizer,
                       const AdamConfig& cfg);

struct TrainingProvenance {
  std::string dataset_hash;
  int epochs = 0;
  std::vector<double> loss_curve;
  nlohmann::json notes = nlohmann::json::object();
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  Network network;
  TrainingProvenance provenance;
};

/// Container layout: 8-byte magic "FRSCKPT\0", u32 LE header length, UTF-8
/// JSON header {format_version, config, provenance, tensors[{name, shape,
/// offset}]}, then every tensor as little-endian float32 in layout order.
std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace frsaudit::model

#pragma once

// A small trainable CNN engine for the architectures in netspec: forward
// pass, exact reverse-mode gradients, RMSProp training, and structured filter
// removal with weight transfer. All arithmetic is in double precision.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "compactnet/netspec.hpp"

namespace compactnet {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0);

  size_t size() const { return values.size(); }
  double& operator[](size_t i) { return values[i]; }
  double operator[](size_t i) const { return values[i]; }
  bool operator==(const Tensor&) const = default;
};

// Tensors of one layer, in the fixed role order given by tensor_roles().
//   Conv2D:     kernel (out, in, K, K), bias (out)
//   Bottleneck: expand_w (e*in, in), expand_b (e*in),
//               depthwise_w (e*in, 3, 3), depthwise_b (e*in),
//               project_w (out, e*in), project_b (out)
//   Classifier: weight (classes, features), bias (classes)
//   GlobalAvgPool: none
struct LayerParams {
  std::vector<Tensor> tensors;
  bool operator==(const LayerParams&) const = default;
};

std::span<const std::string_view> tensor_roles(LayerKind kind);

// Shapes every tensor of a layer must have under the given spec.
std::vector<std::vector<int>> expected_shapes(const NetworkSpec& spec,
                                              int slot_id);

struct Model {
  NetworkSpec spec;
  std::vector<LayerParams> layers;  // parallel to spec.layers
  bool operator==(const Model&) const = default;
};

// Same layout as Model::layers.
using Gradients = std::vector<LayerParams>;

// Throws SpecError when tensor dims disagree with the spec or a weight is
// not finite.
void check_model(const Model& model);

Model build_model(const NetworkSpec& spec, uint64_t seed);

enum class Split { Train, Validation };

struct Dataset {
  Split split = Split::Train;
  int num_classes = 2;
  InputShape shape;
  std::vector<double> images;  // n x c x h x w
  std::vector<int> labels;

  size_t size() const { return labels.size(); }
  size_t image_size() const {
    return static_cast<size_t>(shape.channels) * shape.height * shape.width;
  }
  std::span<const double> image(size_t i) const {
    return {images.data() + i * image_size(), image_size()};
  }
  bool operator==(const Dataset&) const = default;
};

struct DatasetPair {
  Dataset train;
  Dataset validation;
};

// Class templates are fixed oriented bars and blobs; the seed only drives
// per-sample jitter and noise. Images are image_size x image_size x 3.
DatasetPair synthetic_dataset(int num_classes, int train_n, int val_n,
                              uint64_t seed, int image_size = 12);

// The noise-free template image for a class, as used by the generator.
std::vector<double> class_template(int num_classes, int label, int image_size);

struct Logits {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  double at(int r, int c) const {
    return values[static_cast<size_t>(r) * cols + c];
  }
};

// `images` holds whole images back to back in the model's input shape.
Logits forward(const Model& model, std::span<const double> images);

// Mean softmax cross-entropy over the batch; fills grads with the exact
// gradient of that mean with respect to every tensor.
double loss_and_gradients(const Model& model, std::span<const double> images,
                          std::span<const int> labels, Gradients& grads);

double softmax_cross_entropy(const Logits& logits, std::span<const int> labels);

struct TrainConfig {
  double learning_rate = 1e-3;
  double decay = 0.9;  // multiplicative, per epoch
  int epochs = 1;
  int batch_size = 96;
  double rmsprop_rho = 0.9;
  double rmsprop_eps = 1e-10;
  uint64_t seed = 0;

  void check() const;
  bool operator==(const TrainConfig&) const = default;
};

// Full-scale fine-tune and retrain settings, and shorter desk-scale variants.
TrainConfig finetune_full_preset();
TrainConfig retrain_full_preset();
TrainConfig finetune_desk_preset();
TrainConfig retrain_desk_preset();
TrainConfig pretrain_desk_preset();

struct EpochStats {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

TrainResult train(Model model, const Dataset& train_set, const Dataset& val,
                  const TrainConfig& cfg);

// Top-1 accuracy; ties between logits go to the lower class index.
double evaluate(const Model& model, const Dataset& data);

// Per-filter L2 norm of a trimmable layer's output filters, bias included.
std::vector<double> filter_l2_norms(const Model& model, int slot_id);

// Indices of the `count` largest norms (ties keep the lower index), sorted.
std::vector<int> top_filters(std::span<const double> norms, int count);

// Keeps the listed filters of `slot_id` and drops the matching input slices
// of its successor. A successor bottleneck whose width changes gets its
// interior re-initialized from `reinit_seed`.
Model remove_filters(const Model& model, int slot_id, std::span<const int> keep,
                     uint64_t reinit_seed = 0);

// Checkpoint directory: spec.json, manifest.json, <slot>_<role>.f64 blobs.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace compactnet

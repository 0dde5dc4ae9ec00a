#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "compactnet/errors.hpp"
#include "compactnet/micronn.hpp"
#include "compactnet/rng.hpp"
#include "kernels.hpp"

namespace compactnet {

Tensor::Tensor(std::vector<int> dims, double fill) : shape(std::move(dims)) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  values.assign(n, fill);
}

std::span<const std::string_view> tensor_roles(LayerKind kind) {
  static constexpr std::array<std::string_view, 2> conv = {"kernel", "bias"};
  static constexpr std::array<std::string_view, 6> bottleneck = {
      "expand_w",    "expand_b",  "depthwise_w",
      "depthwise_b", "project_w", "project_b"};
  static constexpr std::array<std::string_view, 2> classifier = {"weight",
                                                                 "bias"};
  switch (kind) {
    case LayerKind::Conv2D:
      return conv;
    case LayerKind::Bottleneck:
      return bottleneck;
    case LayerKind::Classifier:
      return classifier;
    case LayerKind::GlobalAvgPool:
      break;
  }
  return {};
}

std::vector<std::vector<int>> expected_shapes(const NetworkSpec& spec,
                                              int slot_id) {
  const LayerSpec& layer = spec.layer(slot_id);
  const int in = layer.in_channels;
  const int out = layer.out_channels;
  switch (layer.kind) {
    case LayerKind::Conv2D: {
      const int k = kernel_size(spec, slot_id);
      return {{out, in, k, k}, {out}};
    }
    case LayerKind::Bottleneck: {
      const int wide = layer.expanded_channels();
      return {{wide, in}, {wide}, {wide, 3, 3}, {wide}, {out, wide}, {out}};
    }
    case LayerKind::Classifier:
      return {{out, in}, {out}};
    case LayerKind::GlobalAvgPool:
      break;
  }
  return {};
}

void check_model(const Model& model) {
  if (model.layers.size() != model.spec.layers.size()) {
    throw SpecError("model has " + std::to_string(model.layers.size()) +
                    " parameter groups for " +
                    std::to_string(model.spec.layers.size()) + " layers");
  }
  for (size_t j = 0; j < model.layers.size(); ++j) {
    const int slot = model.spec.layers[j].slot_id;
    const auto shapes = expected_shapes(model.spec, slot);
    const auto& tensors = model.layers[j].tensors;
    if (tensors.size() != shapes.size()) {
      throw SpecError("slot " + std::to_string(slot) +
                      ": wrong number of tensors");
    }
    const auto roles = tensor_roles(model.spec.layers[j].kind);
    for (size_t t = 0; t < shapes.size(); ++t) {
      size_t expected = 1;
      for (int d : shapes[t]) expected *= static_cast<size_t>(d);
      if (tensors[t].shape != shapes[t] || tensors[t].size() != expected) {
        throw SpecError("slot " + std::to_string(slot) + " tensor " +
                        std::string(roles[t]) + " has wrong shape");
      }
      for (double v : tensors[t].values) {
        if (!std::isfinite(v)) {
          throw SpecError("slot " + std::to_string(slot) + " tensor " +
                          std::string(roles[t]) + " holds a non-finite value");
        }
      }
    }
  }
}

namespace {

// He-normal weights scaled by fan-in; biases zero.
LayerParams init_layer(const NetworkSpec& spec, int slot_id, uint64_t seed) {
  const LayerSpec& layer = spec.layer(slot_id);
  const auto shapes = expected_shapes(spec, slot_id);
  LayerParams params;
  for (size_t t = 0; t < shapes.size(); ++t) {
    Tensor tensor(shapes[t]);
    const bool is_bias = shapes[t].size() == 1;
    if (!is_bias) {
      size_t fan_in = 1;
      for (size_t d = 1; d < shapes[t].size(); ++d) fan_in *= shapes[t][d];
      const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
      Rng rng(derive_seed({seed, static_cast<uint64_t>(layer.slot_id),
                           static_cast<uint64_t>(t)}));
      for (double& v : tensor.values) v = scale * rng.normal();
    }
    params.tensors.push_back(std::move(tensor));
  }
  return params;
}

kernels::ConvGeometry geometry(const LayerSpec& layer, int in_channels,
                               int out_channels, int kernel, int stride) {
  const Spatial out = layer.spatial_out();
  return {in_channels,        out_channels, layer.spatial_in.height,
          layer.spatial_in.width, kernel,   stride,
          stride == 1 ? layer.spatial_in.height : out.height,
          stride == 1 ? layer.spatial_in.width : out.width};
}

int plane_size(const Spatial& s) { return s.height * s.width; }

// Activations of one image, kept for the backward pass.
struct Trace {
  std::vector<std::vector<double>> outputs;  // per layer
  std::vector<std::vector<double>> expanded;  // per layer, bottleneck only
  std::vector<std::vector<double>> depthwise;
};

class Network {
 public:
  explicit Network(const Model& model) : model_(model) {
    const size_t n = model.spec.layers.size();
    trace_.outputs.resize(n);
    trace_.expanded.resize(n);
    trace_.depthwise.resize(n);
    for (size_t j = 0; j < n; ++j) {
      const LayerSpec& layer = model.spec.layers[j];
      trace_.outputs[j].resize(static_cast<size_t>(layer.out_channels) *
                               plane_size(layer.spatial_out()));
      if (layer.kind == LayerKind::Bottleneck) {
        trace_.expanded[j].resize(static_cast<size_t>(layer.expanded_channels()) *
                                  plane_size(layer.spatial_in));
        trace_.depthwise[j].resize(
            static_cast<size_t>(layer.expanded_channels()) *
            plane_size(layer.spatial_out()));
      }
    }
  }

  // Returns the logits of one image (a view into the trace).
  const std::vector<double>& run(const double* image) {
    image_ = image;
    const auto& layers = model_.spec.layers;
    for (size_t j = 0; j < layers.size(); ++j) {
      forward_layer(j, j == 0 ? image : trace_.outputs[j - 1].data());
    }
    return trace_.outputs.back();
  }

  // Backpropagates dlogits through the last run() and accumulates.
  void backprop(const double* dlogits, Gradients& grads) {
    const auto& layers = model_.spec.layers;
    std::vector<double> dout(dlogits, dlogits + trace_.outputs.back().size());
    for (size_t j = layers.size(); j-- > 0;) {
      const double* input = j == 0 ? image_ : trace_.outputs[j - 1].data();
      std::vector<double> din;
      if (j > 0) din.assign(trace_.outputs[j - 1].size(), 0.0);
      backward_layer(j, input, dout, j > 0 ? din.data() : nullptr, grads[j]);
      dout.swap(din);
    }
  }

 private:
  void forward_layer(size_t j, const double* in) {
    const LayerSpec& layer = model_.spec.layers[j];
    const auto& t = model_.layers[j].tensors;
    double* out = trace_.outputs[j].data();
    switch (layer.kind) {
      case LayerKind::Conv2D: {
        const int k = kernel_size(model_.spec, layer.slot_id);
        const auto g = geometry(layer, layer.in_channels, layer.out_channels,
                                k, layer.stride);
        kernels::conv_forward(in, t[0].values.data(), t[1].values.data(), g,
                              out);
        kernels::relu(out, static_cast<int>(trace_.outputs[j].size()));
        break;
      }
      case LayerKind::Bottleneck: {
        const int wide = layer.expanded_channels();
        double* expanded = trace_.expanded[j].data();
        double* depth = trace_.depthwise[j].data();
        kernels::conv_forward(in, t[0].values.data(), t[1].values.data(),
                              geometry(layer, layer.in_channels, wide, 1, 1),
                              expanded);
        kernels::relu(expanded, static_cast<int>(trace_.expanded[j].size()));
        kernels::depthwise_forward(expanded, t[2].values.data(),
                                   t[3].values.data(),
                                   geometry(layer, wide, wide, 3, layer.stride),
                                   depth);
        kernels::relu(depth, static_cast<int>(trace_.depthwise[j].size()));
        const LayerSpec projected = projection_view(layer);
        kernels::conv_forward(depth, t[4].values.data(), t[5].values.data(),
                              geometry(projected, wide, layer.out_channels, 1, 1),
                              out);
        if (layer.has_residual()) {
          const size_t n = trace_.outputs[j].size();
          for (size_t i = 0; i < n; ++i) out[i] += in[i];
        }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const int plane = plane_size(layer.spatial_in);
        for (int c = 0; c < layer.in_channels; ++c) {
          double sum = 0.0;
          for (int p = 0; p < plane; ++p) sum += in[c * plane + p];
          out[c] = sum / plane;
        }
        break;
      }
      case LayerKind::Classifier: {
        const double* w = t[0].values.data();
        for (int o = 0; o < layer.out_channels; ++o) {
          double acc = t[1][static_cast<size_t>(o)];
          for (int i = 0; i < layer.in_channels; ++i) {
            acc += w[o * layer.in_channels + i] * in[i];
          }
          out[o] = acc;
        }
        break;
      }
    }
  }

  void backward_layer(size_t j, const double* in, std::vector<double>& dout,
                      double* din, LayerParams& grad) {
    const LayerSpec& layer = model_.spec.layers[j];
    const auto& t = model_.layers[j].tensors;
    auto& g = grad.tensors;
    switch (layer.kind) {
      case LayerKind::Conv2D: {
        kernels::relu_backward(trace_.outputs[j].data(), dout.data(),
                               static_cast<int>(dout.size()));
        const int k = kernel_size(model_.spec, layer.slot_id);
        kernels::conv_backward(
            in, t[0].values.data(), dout.data(),
            geometry(layer, layer.in_channels, layer.out_channels, k,
                     layer.stride),
            g[0].values.data(), g[1].values.data(), din);
        break;
      }
      case LayerKind::Bottleneck: {
        const int wide = layer.expanded_channels();
        const auto& expanded = trace_.expanded[j];
        const auto& depth = trace_.depthwise[j];
        std::vector<double> ddepth(depth.size(), 0.0);
        kernels::conv_backward(
            depth.data(), t[4].values.data(), dout.data(),
            geometry(projection_view(layer), wide, layer.out_channels, 1, 1),
            g[4].values.data(), g[5].values.data(), ddepth.data());
        kernels::relu_backward(depth.data(), ddepth.data(),
                               static_cast<int>(ddepth.size()));
        std::vector<double> dexpanded(expanded.size(), 0.0);
        kernels::depthwise_backward(
            expanded.data(), t[2].values.data(), ddepth.data(),
            geometry(layer, wide, wide, 3, layer.stride), g[2].values.data(),
            g[3].values.data(), dexpanded.data());
        kernels::relu_backward(expanded.data(), dexpanded.data(),
                               static_cast<int>(dexpanded.size()));
        kernels::conv_backward(in, t[0].values.data(), dexpanded.data(),
                               geometry(layer, layer.in_channels, wide, 1, 1),
                               g[0].values.data(), g[1].values.data(), din);
        if (din && layer.has_residual()) {
          for (size_t i = 0; i < dout.size(); ++i) din[i] += dout[i];
        }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        if (!din) break;
        const int plane = plane_size(layer.spatial_in);
        for (int c = 0; c < layer.in_channels; ++c) {
          const double share = dout[static_cast<size_t>(c)] / plane;
          for (int p = 0; p < plane; ++p) din[c * plane + p] += share;
        }
        break;
      }
      case LayerKind::Classifier: {
        const double* w = t[0].values.data();
        double* dw = g[0].values.data();
        for (int o = 0; o < layer.out_channels; ++o) {
          const double d = dout[static_cast<size_t>(o)];
          g[1][static_cast<size_t>(o)] += d;
          for (int i = 0; i < layer.in_channels; ++i) {
            dw[o * layer.in_channels + i] += d * in[i];
            if (din) din[i] += w[o * layer.in_channels + i] * d;
          }
        }
        break;
      }
    }
  }

  // The projection runs on the block's output grid.
  static LayerSpec projection_view(const LayerSpec& layer) {
    LayerSpec view = layer;
    view.spatial_in = layer.spatial_out();
    view.stride = 1;
    return view;
  }

  const Model& model_;
  Trace trace_;
  const double* image_ = nullptr;
};

void check_batch(const Model& model, size_t values) {
  const InputShape& s = model.spec.input_shape;
  const size_t per_image = static_cast<size_t>(s.channels) * s.height * s.width;
  if (per_image == 0 || values % per_image != 0) {
    std::ostringstream msg;
    msg << "batch of " << values << " values is not a whole number of "
        << s.channels << "x" << s.height << "x" << s.width << " images";
    throw SpecError(msg.str());
  }
}

Gradients zero_like(const Model& model) {
  Gradients grads(model.layers.size());
  for (size_t j = 0; j < model.layers.size(); ++j) {
    for (const Tensor& t : model.layers[j].tensors) {
      grads[j].tensors.emplace_back(t.shape);
    }
  }
  return grads;
}

}  // namespace

Model build_model(const NetworkSpec& spec, uint64_t seed) {
  const auto violations = validate(spec);
  if (!violations.empty()) {
    throw SpecError("cannot build model: " + violations.front().message);
  }
  Model model;
  model.spec = spec;
  for (const LayerSpec& layer : spec.layers) {
    model.layers.push_back(init_layer(spec, layer.slot_id, seed));
  }
  return model;
}

Logits forward(const Model& model, std::span<const double> images) {
  check_batch(model, images.size());
  const InputShape& s = model.spec.input_shape;
  const size_t per_image = static_cast<size_t>(s.channels) * s.height * s.width;
  Logits logits;
  logits.rows = static_cast<int>(images.size() / per_image);
  logits.cols = model.spec.num_classes;
  logits.values.reserve(static_cast<size_t>(logits.rows) * logits.cols);
  Network net(model);
  for (int i = 0; i < logits.rows; ++i) {
    const auto& out = net.run(images.data() + i * per_image);
    logits.values.insert(logits.values.end(), out.begin(), out.end());
  }
  return logits;
}

double softmax_cross_entropy(const Logits& logits,
                             std::span<const int> labels) {
  double total = 0.0;
  for (int r = 0; r < logits.rows; ++r) {
    double peak = logits.at(r, 0);
    for (int c = 1; c < logits.cols; ++c) peak = std::max(peak, logits.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < logits.cols; ++c) sum += std::exp(logits.at(r, c) - peak);
    total += peak + std::log(sum) - logits.at(r, labels[static_cast<size_t>(r)]);
  }
  return total / logits.rows;
}

double loss_and_gradients(const Model& model, std::span<const double> images,
                          std::span<const int> labels, Gradients& grads) {
  check_batch(model, images.size());
  const InputShape& s = model.spec.input_shape;
  const size_t per_image = static_cast<size_t>(s.channels) * s.height * s.width;
  const size_t n = images.size() / per_image;
  if (labels.size() != n) throw SpecError("label count differs from batch size");
  grads = zero_like(model);
  if (n == 0) return 0.0;

  const int classes = model.spec.num_classes;
  Network net(model);
  std::vector<double> dlogits(static_cast<size_t>(classes));
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= classes) throw SpecError("label out of range");
    const auto& out = net.run(images.data() + i * per_image);
    const double peak = *std::max_element(out.begin(), out.end());
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      dlogits[static_cast<size_t>(c)] = std::exp(out[static_cast<size_t>(c)] - peak);
      sum += dlogits[static_cast<size_t>(c)];
    }
    total += peak + std::log(sum) - out[static_cast<size_t>(label)];
    for (int c = 0; c < classes; ++c) {
      dlogits[static_cast<size_t>(c)] =
          (dlogits[static_cast<size_t>(c)] / sum - (c == label ? 1.0 : 0.0)) /
          static_cast<double>(n);
    }
    net.backprop(dlogits.data(), grads);
  }
  return total / static_cast<double>(n);
}

double evaluate(const Model& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const Logits logits = forward(model, data.images);
  size_t correct = 0;
  for (int r = 0; r < logits.rows; ++r) {
    int best = 0;
    for (int c = 1; c < logits.cols; ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    if (best == data.labels[static_cast<size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

// Index of the tensor whose leading dimension enumerates the layer's filters.
size_t filter_tensor(LayerKind kind) {
  return kind == LayerKind::Bottleneck ? 4 : 0;
}

}  // namespace

std::vector<double> filter_l2_norms(const Model& model, int slot_id) {
  const int j = model.spec.index_of(slot_id);
  const LayerSpec& layer = model.spec.layers[static_cast<size_t>(j)];
  if (!layer.trimmable) {
    throw SpecError("slot " + std::to_string(slot_id) + " is not trimmable");
  }
  const auto& tensors = model.layers[static_cast<size_t>(j)].tensors;
  const size_t w_index = filter_tensor(layer.kind);
  const Tensor& weight = tensors[w_index];
  const Tensor& bias = tensors[w_index + 1];
  const size_t row = weight.size() / static_cast<size_t>(layer.out_channels);
  std::vector<double> norms(static_cast<size_t>(layer.out_channels));
  for (size_t f = 0; f < norms.size(); ++f) {
    double sum = bias[f] * bias[f];
    for (size_t i = 0; i < row; ++i) {
      const double v = weight[f * row + i];
      sum += v * v;
    }
    norms[f] = std::sqrt(sum);
  }
  return norms;
}

std::vector<int> top_filters(std::span<const double> norms, int count) {
  if (count < 0 || count > static_cast<int>(norms.size())) {
    throw SpecError("cannot keep " + std::to_string(count) + " of " +
                    std::to_string(norms.size()) + " filters");
  }
  std::vector<int> order(norms.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return norms[static_cast<size_t>(a)] > norms[static_cast<size_t>(b)];
  });
  order.resize(static_cast<size_t>(count));
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

// Keeps the listed rows (leading-dimension slices) of a tensor.
Tensor select_rows(const Tensor& t, std::span<const int> rows) {
  std::vector<int> shape = t.shape;
  const size_t stride = t.size() / static_cast<size_t>(shape[0]);
  shape[0] = static_cast<int>(rows.size());
  Tensor out(shape);
  for (size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(t.values.begin() + static_cast<long>(rows[r] * stride), stride,
                out.values.begin() + static_cast<long>(r * stride));
  }
  return out;
}

// Keeps the listed slices of the second dimension.
Tensor select_columns(const Tensor& t, std::span<const int> cols) {
  std::vector<int> shape = t.shape;
  const size_t outer = static_cast<size_t>(shape[0]);
  const size_t old_cols = static_cast<size_t>(shape[1]);
  const size_t inner = t.size() / (outer * old_cols);
  shape[1] = static_cast<int>(cols.size());
  Tensor out(shape);
  for (size_t o = 0; o < outer; ++o) {
    for (size_t c = 0; c < cols.size(); ++c) {
      std::copy_n(
          t.values.begin() +
              static_cast<long>((o * old_cols + static_cast<size_t>(cols[c])) *
                                inner),
          inner,
          out.values.begin() + static_cast<long>((o * cols.size() + c) * inner));
    }
  }
  return out;
}

}  // namespace

Model remove_filters(const Model& model, int slot_id, std::span<const int> keep,
                     uint64_t reinit_seed) {
  const int j = model.spec.index_of(slot_id);
  const LayerSpec& layer = model.spec.layers[static_cast<size_t>(j)];
  if (keep.empty()) throw SpecError("keep list must not be empty");
  for (size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] < 0 || keep[i] >= layer.out_channels) {
      throw SpecError("filter index " + std::to_string(keep[i]) +
                      " out of range for slot " + std::to_string(slot_id));
    }
    if (i > 0 && keep[i] <= keep[i - 1]) {
      throw SpecError("keep list must be sorted and unique");
    }
  }

  Model trimmed;
  trimmed.spec = trim_layer(model.spec, slot_id, static_cast<int>(keep.size()));
  trimmed.layers = model.layers;
  if (static_cast<int>(keep.size()) == layer.out_channels) return trimmed;

  auto& own = trimmed.layers[static_cast<size_t>(j)].tensors;
  const size_t w_index = filter_tensor(layer.kind);
  own[w_index] = select_rows(own[w_index], keep);
  own[w_index + 1] = select_rows(own[w_index + 1], keep);

  const size_t next = static_cast<size_t>(j) + 1;
  if (next < trimmed.layers.size()) {
    const LayerSpec& succ = trimmed.spec.layers[next];
    auto& tensors = trimmed.layers[next].tensors;
    switch (succ.kind) {
      case LayerKind::Conv2D:
      case LayerKind::Classifier:
        tensors[0] = select_columns(tensors[0], keep);
        break;
      case LayerKind::Bottleneck: {
        // Interior width is expansion * in; there is no canonical slice of
        // the expanded channels, so the interior starts over.
        LayerParams fresh = init_layer(trimmed.spec, succ.slot_id, reinit_seed);
        Tensor project_bias = tensors[5];
        tensors = std::move(fresh.tensors);
        tensors[5] = std::move(project_bias);
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const size_t after = next + 1;
        if (after < trimmed.layers.size()) {
          // Pooling passes channels straight through to the classifier.
          trimmed.spec.layers[next].out_channels =
              static_cast<int>(keep.size());
          trimmed.spec.layers[after].in_channels =
              static_cast<int>(keep.size());
          auto& cls = trimmed.layers[after].tensors;
          cls[0] = select_columns(cls[0], keep);
        }
        break;
      }
    }
  }
  check_model(trimmed);
  return trimmed;
}

}  // namespace compactnet

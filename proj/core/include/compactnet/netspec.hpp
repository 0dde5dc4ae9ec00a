#pragma once

// Network architectures as plain data, plus the channel-count transformations
// used by filter trimming. Nothing here knows about weights.

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace compactnet {

enum class LayerKind { Conv2D, Bottleneck, GlobalAvgPool, Classifier };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct Spatial {
  int height = 1;
  int width = 1;
  auto operator<=>(const Spatial&) const = default;
};

struct InputShape {
  int channels = 3;
  int height = 1;
  int width = 1;
  auto operator<=>(const InputShape&) const = default;
};

struct LayerSpec {
  int slot_id = 0;
  LayerKind kind = LayerKind::Conv2D;
  int in_channels = 1;
  int out_channels = 1;
  Spatial spatial_in;
  int stride = 1;
  int expansion_factor = 1;  // meaningful for Bottleneck only
  bool trimmable = false;

  bool operator==(const LayerSpec&) const = default;

  // Width of a bottleneck's depthwise stage; derived, never stored.
  int expanded_channels() const { return expansion_factor * in_channels; }
  // "same" padding: ceil(in / stride) along each axis.
  Spatial spatial_out() const;
  // Bottleneck identity shortcut applies when shapes line up.
  bool has_residual() const {
    return kind == LayerKind::Bottleneck && stride == 1 &&
           in_channels == out_channels;
  }
  // Layers that own a latency table (everything with a convolution).
  bool is_conv() const {
    return kind == LayerKind::Conv2D || kind == LayerKind::Bottleneck;
  }
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  int num_classes = 2;
  InputShape input_shape;

  bool operator==(const NetworkSpec&) const = default;

  // Slot ids equal layer indices for every spec built here; lookup still goes
  // by id so hand-edited specs are handled.
  const LayerSpec& layer(int slot_id) const;
  int index_of(int slot_id) const;
};

// Spatial kernel size of a layer: 3 for the stem convolution and for a
// bottleneck's depthwise stage, 1 for pointwise convolutions and the tail.
int kernel_size(const NetworkSpec& spec, int slot_id);

// MobileNetV2 with every repeated bottleneck row unrolled.
NetworkSpec mobilenet_v2_spec(int num_classes,
                              InputShape input_shape = {3, 32, 32});

// Desk-scale analog on 12x12x3 inputs with five trimmable layers.
NetworkSpec micro_mobilenet_spec(int num_classes);

NetworkSpec trim_layer(const NetworkSpec& spec, int slot_id,
                       int new_out_channels);

std::vector<int> trimmable_layers(const NetworkSpec& spec);

// Output channel count of every trimmable layer, in layer order.
std::vector<int> filter_counts(const NetworkSpec& spec);

struct Violation {
  std::string rule;
  std::vector<int> slots;
  std::string message;
};

// Empty result means the spec is valid.
std::vector<Violation> validate(const NetworkSpec& spec);

nlohmann::ordered_json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& doc);

}  // namespace compactnet

#include "compactnet/netspec.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "compactnet/errors.hpp"

namespace compactnet {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Appends one layer whose input geometry continues from the previous layer.
class SpecBuilder {
 public:
  explicit SpecBuilder(InputShape input) : input_(input) {
    channels_ = input.channels;
    spatial_ = {input.height, input.width};
  }

  SpecBuilder& add(LayerKind kind, int out, int stride, int expansion,
                   bool trimmable) {
    LayerSpec layer;
    layer.slot_id = static_cast<int>(layers_.size());
    layer.kind = kind;
    layer.in_channels = channels_;
    layer.out_channels = out;
    layer.spatial_in = spatial_;
    layer.stride = stride;
    layer.expansion_factor = expansion;
    layer.trimmable = trimmable;
    if (stride > 1 &&
        (spatial_.height < stride || spatial_.width < stride)) {
      std::ostringstream msg;
      msg << "input " << input_.height << "x" << input_.width
          << " too small for stride chain: layer " << layer.slot_id << " ("
          << to_string(kind) << ") receives " << spatial_.height << "x"
          << spatial_.width << " at stride " << stride;
      throw DimensionError(msg.str());
    }
    channels_ = out;
    spatial_ = layer.spatial_out();
    layers_.push_back(layer);
    return *this;
  }

  NetworkSpec finish(int num_classes) {
    add(LayerKind::GlobalAvgPool, channels_, 1, 1, false);
    add(LayerKind::Classifier, num_classes, 1, 1, false);
    NetworkSpec spec;
    spec.layers = std::move(layers_);
    spec.num_classes = num_classes;
    spec.input_shape = input_;
    return spec;
  }

 private:
  InputShape input_;
  int channels_;
  Spatial spatial_;
  std::vector<LayerSpec> layers_;
};

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D:
      return "conv2d";
    case LayerKind::Bottleneck:
      return "bottleneck";
    case LayerKind::GlobalAvgPool:
      return "gap";
    case LayerKind::Classifier:
      return "classifier";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  if (name == "conv2d") return LayerKind::Conv2D;
  if (name == "bottleneck") return LayerKind::Bottleneck;
  if (name == "gap") return LayerKind::GlobalAvgPool;
  if (name == "classifier") return LayerKind::Classifier;
  throw ParseError("unknown layer kind '" + std::string(name) + "'");
}

Spatial LayerSpec::spatial_out() const {
  if (kind == LayerKind::GlobalAvgPool || kind == LayerKind::Classifier) {
    return {1, 1};
  }
  return {ceil_div(spatial_in.height, stride),
          ceil_div(spatial_in.width, stride)};
}

const LayerSpec& NetworkSpec::layer(int slot_id) const {
  return layers[static_cast<size_t>(index_of(slot_id))];
}

int NetworkSpec::index_of(int slot_id) const {
  if (slot_id >= 0 && slot_id < static_cast<int>(layers.size()) &&
      layers[static_cast<size_t>(slot_id)].slot_id == slot_id) {
    return slot_id;
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].slot_id == slot_id) return static_cast<int>(i);
  }
  throw SpecError("unknown slot " + std::to_string(slot_id));
}

int kernel_size(const NetworkSpec& spec, int slot_id) {
  const int index = spec.index_of(slot_id);
  const LayerSpec& layer = spec.layers[static_cast<size_t>(index)];
  switch (layer.kind) {
    case LayerKind::Conv2D:
      return index == 0 ? 3 : 1;
    case LayerKind::Bottleneck:
      return 3;
    default:
      return 1;
  }
}

NetworkSpec mobilenet_v2_spec(int num_classes, InputShape input_shape) {
  if (num_classes < 2) throw SpecError("num_classes must be >= 2");
  struct Row {
    int expansion, out, repeats, stride;
  };
  // Bottleneck rows (expansion, width, repeats, stride) of MobileNetV2.
  constexpr Row rows[] = {{1, 16, 1, 1},  {6, 24, 2, 2}, {6, 32, 3, 2},
                          {6, 64, 4, 2},  {6, 96, 3, 1}, {6, 160, 3, 2},
                          {6, 320, 1, 1}};
  SpecBuilder builder(input_shape);
  builder.add(LayerKind::Conv2D, 32, 2, 1, true);
  for (const Row& row : rows) {
    for (int r = 0; r < row.repeats; ++r) {
      builder.add(LayerKind::Bottleneck, row.out, r == 0 ? row.stride : 1,
                  row.expansion, true);
    }
  }
  builder.add(LayerKind::Conv2D, 1280, 1, 1, false);
  return builder.finish(num_classes);
}

NetworkSpec micro_mobilenet_spec(int num_classes) {
  if (num_classes < 2) throw SpecError("num_classes must be >= 2");
  SpecBuilder builder({3, 12, 12});
  builder.add(LayerKind::Conv2D, 8, 1, 1, true)
      .add(LayerKind::Bottleneck, 8, 1, 4, true)
      .add(LayerKind::Bottleneck, 12, 2, 4, true)
      .add(LayerKind::Bottleneck, 16, 1, 4, true)
      .add(LayerKind::Bottleneck, 16, 1, 4, true)
      .add(LayerKind::Conv2D, 64, 1, 1, false);
  return builder.finish(num_classes);
}

NetworkSpec trim_layer(const NetworkSpec& spec, int slot_id,
                       int new_out_channels) {
  const int index = spec.index_of(slot_id);
  const LayerSpec& target = spec.layers[static_cast<size_t>(index)];
  if (!target.trimmable) {
    throw SpecError("slot " + std::to_string(slot_id) + " is not trimmable");
  }
  if (new_out_channels < 1 || new_out_channels > target.out_channels) {
    throw SpecError("slot " + std::to_string(slot_id) + ": out_channels " +
                    std::to_string(new_out_channels) + " outside [1, " +
                    std::to_string(target.out_channels) + "]");
  }
  NetworkSpec trimmed = spec;
  trimmed.layers[static_cast<size_t>(index)].out_channels = new_out_channels;
  if (static_cast<size_t>(index) + 1 < trimmed.layers.size()) {
    trimmed.layers[static_cast<size_t>(index) + 1].in_channels =
        new_out_channels;
  }
  return trimmed;
}

std::vector<int> trimmable_layers(const NetworkSpec& spec) {
  std::vector<int> slots;
  for (const LayerSpec& layer : spec.layers) {
    if (layer.trimmable) slots.push_back(layer.slot_id);
  }
  return slots;
}

std::vector<int> filter_counts(const NetworkSpec& spec) {
  std::vector<int> counts;
  for (const LayerSpec& layer : spec.layers) {
    if (layer.trimmable) counts.push_back(layer.out_channels);
  }
  return counts;
}

std::vector<Violation> validate(const NetworkSpec& spec) {
  std::vector<Violation> found;
  auto report = [&](std::string rule, std::vector<int> slots,
                    std::string message) {
    found.push_back({std::move(rule), std::move(slots), std::move(message)});
  };

  if (spec.layers.empty()) {
    report("non_empty", {}, "network has no layers");
    return found;
  }
  if (spec.num_classes < 1) {
    report("num_classes", {}, "num_classes must be positive");
  }

  std::set<int> seen;
  for (const LayerSpec& layer : spec.layers) {
    const int id = layer.slot_id;
    if (!seen.insert(id).second) {
      report("unique_slot", {id}, "duplicate slot id");
    }
    if (layer.in_channels < 1 || layer.out_channels < 1) {
      report("positive_channels", {id}, "channel counts must be >= 1");
    }
    if (layer.stride < 1 || layer.expansion_factor < 1) {
      report("positive_params", {id}, "stride and expansion must be >= 1");
    }
    if (layer.spatial_in.height < 1 || layer.spatial_in.width < 1) {
      report("positive_spatial", {id}, "spatial dims must be >= 1");
    }
    if (layer.stride > 1 && (layer.spatial_in.height < layer.stride ||
                             layer.spatial_in.width < layer.stride)) {
      report("stride_chain", {id}, "input smaller than stride");
    }
    const bool tail = layer.kind == LayerKind::GlobalAvgPool ||
                      layer.kind == LayerKind::Classifier;
    if (tail && layer.trimmable) {
      report("tail_not_trimmable", {id},
             std::string(to_string(layer.kind)) + " cannot be trimmable");
    }
    if (layer.kind == LayerKind::GlobalAvgPool &&
        layer.in_channels != layer.out_channels) {
      report("gap_channels", {id}, "pooling must preserve channel count");
    }
  }

  const LayerSpec& first = spec.layers.front();
  if (first.in_channels != spec.input_shape.channels) {
    report("input_channels", {first.slot_id},
           "first layer in_channels differs from input channels");
  }
  if (first.spatial_in !=
      Spatial{spec.input_shape.height, spec.input_shape.width}) {
    report("input_spatial", {first.slot_id},
           "first layer spatial dims differ from input shape");
  }

  for (size_t j = 0; j + 1 < spec.layers.size(); ++j) {
    const LayerSpec& a = spec.layers[j];
    const LayerSpec& b = spec.layers[j + 1];
    if (b.in_channels != a.out_channels) {
      std::ostringstream msg;
      msg << "slot " << b.slot_id << " in_channels " << b.in_channels
          << " != slot " << a.slot_id << " out_channels " << a.out_channels;
      report("channel_consistency", {a.slot_id, b.slot_id}, msg.str());
    }
    if (b.spatial_in != a.spatial_out()) {
      report("spatial_consistency", {a.slot_id, b.slot_id},
             "spatial dims do not follow from predecessor stride");
    }
  }

  const LayerSpec& last = spec.layers.back();
  if (last.kind != LayerKind::Classifier) {
    report("classifier_last", {last.slot_id}, "last layer must be classifier");
  } else if (last.out_channels != spec.num_classes) {
    report("classifier_width", {last.slot_id},
           "classifier out_channels differs from num_classes");
  }
  return found;
}

nlohmann::ordered_json to_json(const NetworkSpec& spec) {
  nlohmann::ordered_json doc;
  doc["num_classes"] = spec.num_classes;
  doc["input_shape"] = {spec.input_shape.channels, spec.input_shape.height,
                        spec.input_shape.width};
  auto layers = nlohmann::ordered_json::array();
  for (const LayerSpec& layer : spec.layers) {
    nlohmann::ordered_json entry;
    entry["slot_id"] = layer.slot_id;
    entry["kind"] = std::string(to_string(layer.kind));
    entry["in"] = layer.in_channels;
    entry["out"] = layer.out_channels;
    entry["spatial"] = {layer.spatial_in.height, layer.spatial_in.width};
    entry["stride"] = layer.stride;
    entry["expansion"] = layer.expansion_factor;
    entry["trimmable"] = layer.trimmable;
    layers.push_back(std::move(entry));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

namespace {

void reject_unknown(const nlohmann::json& obj,
                    std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ParseError("unknown field '" + key + "' in " + where);
    }
  }
}

template <typename T>
T require(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) {
    throw ParseError(std::string("missing field '") + key + "' in " + where);
  }
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad field '") + key + "' in " + where +
                     ": " + e.what());
  }
}

}  // namespace

NetworkSpec network_spec_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("network spec must be an object");
  reject_unknown(doc, {"num_classes", "input_shape", "layers"}, "network spec");
  NetworkSpec spec;
  spec.num_classes = require<int>(doc, "num_classes", "network spec");
  const auto shape =
      require<std::vector<int>>(doc, "input_shape", "network spec");
  if (shape.size() != 3) throw ParseError("input_shape must have 3 entries");
  spec.input_shape = {shape[0], shape[1], shape[2]};
  if (!doc.contains("layers") || !doc["layers"].is_array()) {
    throw ParseError("network spec needs a 'layers' array");
  }
  for (const auto& entry : doc["layers"]) {
    const std::string where = "layer entry";
    reject_unknown(entry,
                   {"slot_id", "kind", "in", "out", "spatial", "stride",
                    "expansion", "trimmable"},
                   where);
    LayerSpec layer;
    layer.slot_id = require<int>(entry, "slot_id", where);
    layer.kind =
        layer_kind_from_string(require<std::string>(entry, "kind", where));
    layer.in_channels = require<int>(entry, "in", where);
    layer.out_channels = require<int>(entry, "out", where);
    const auto spatial = require<std::vector<int>>(entry, "spatial", where);
    if (spatial.size() != 2) throw ParseError("spatial must have 2 entries");
    layer.spatial_in = {spatial[0], spatial[1]};
    layer.stride = require<int>(entry, "stride", where);
    layer.expansion_factor = require<int>(entry, "expansion", where);
    layer.trimmable = require<bool>(entry, "trimmable", where);
    spec.layers.push_back(layer);
  }
  return spec;
}

}  // namespace compactnet

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "compactnet/errors.hpp"
#include "compactnet/micronn.hpp"

namespace compactnet {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "compactnet-checkpoint v1";

std::string blob_name(int slot, std::string_view role) {
  return std::to_string(slot) + "_" + std::string(role) + ".f64";
}

void write_blob(const fs::path& path, const Tensor& t) {
  std::string bytes(t.size() * 8, '\0');
  for (size_t i = 0; i < t.size(); ++i) {
    const uint64_t bits = std::bit_cast<uint64_t>(t.values[i]);
    for (int b = 0; b < 8; ++b) {
      bytes[i * 8 + static_cast<size_t>(b)] =
          static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::vector<double> read_blob(const fs::path& path, size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("missing tensor blob '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() != expected * 8) {
    throw ParseError("blob '" + path.filename().string() + "' holds " +
                     std::to_string(bytes.size()) + " bytes, expected " +
                     std::to_string(expected * 8));
  }
  std::vector<double> values(expected);
  for (size_t i = 0; i < expected; ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<uint64_t>(
                  static_cast<unsigned char>(bytes[i * 8 + static_cast<size_t>(b)]))
              << (8 * b);
    }
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("missing '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace

void save_checkpoint(const Model& model, const fs::path& dir) {
  check_model(model);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "spec.json");
    out << to_json(model.spec).dump(2) << "\n";
  }
  nlohmann::ordered_json manifest;
  manifest["format"] = kFormat;
  auto entries = nlohmann::ordered_json::array();
  for (size_t j = 0; j < model.layers.size(); ++j) {
    const LayerSpec& layer = model.spec.layers[j];
    const auto roles = tensor_roles(layer.kind);
    for (size_t t = 0; t < roles.size(); ++t) {
      const Tensor& tensor = model.layers[j].tensors[t];
      const std::string name = blob_name(layer.slot_id, roles[t]);
      write_blob(dir / name, tensor);
      nlohmann::ordered_json entry;
      entry["name"] = name;
      entry["shape"] = tensor.shape;
      entries.push_back(std::move(entry));
    }
  }
  manifest["tensors"] = std::move(entries);
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw Error("failed writing checkpoint manifest in " + dir.string());
}

Model load_checkpoint(const fs::path& dir) {
  Model model;
  model.spec = network_spec_from_json(read_json(dir / "spec.json"));
  const auto violations = validate(model.spec);
  if (!violations.empty()) {
    throw ParseError("checkpoint spec invalid: " + violations.front().message);
  }
  const nlohmann::json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", "") != kFormat) {
    throw ParseError("unsupported checkpoint format in " + dir.string());
  }
  std::map<std::string, std::vector<int>> shapes;
  for (const auto& entry : manifest.at("tensors")) {
    shapes[entry.at("name").get<std::string>()] =
        entry.at("shape").get<std::vector<int>>();
  }
  for (const LayerSpec& layer : model.spec.layers) {
    LayerParams params;
    const auto roles = tensor_roles(layer.kind);
    for (std::string_view role : roles) {
      const std::string name = blob_name(layer.slot_id, role);
      auto it = shapes.find(name);
      if (it == shapes.end()) {
        throw ParseError("manifest lacks tensor '" + name + "'");
      }
      Tensor tensor(it->second);
      tensor.values = read_blob(dir / name, tensor.size());
      params.tensors.push_back(std::move(tensor));
    }
    model.layers.push_back(std::move(params));
  }
  check_model(model);
  return model;
}

}  // namespace compactnet

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "compactnet/latsim.hpp"
#include "compactnet/micronn.hpp"
#include "compactnet/netspec.hpp"
#include "compactnet/search.hpp"

namespace compactnet::cli {

// "synthetic:cpu_like:seed=7", "synthetic:npu_like:seed=7,noise=0",
// "synthetic:custom:alpha=1e-3,beta=2e-3,gamma=0.5,v=4,noise=0.01,seed=3"
struct BackendSpec {
  std::optional<BackendPreset> preset;
  SyntheticBackendParams params;
};

BackendSpec parse_backend_spec(const std::string& text);
std::unique_ptr<Backend> make_backend(const BackendSpec& spec,
                                      const NetworkSpec& architecture);

struct DatasetParams {
  int train_size = 2000;
  int val_size = 500;
  std::optional<uint64_t> seed;  // falls back to the run seed
  int image_size = 12;
  bool operator==(const DatasetParams&) const = default;
};

struct RunConfig {
  std::string architecture = "micro_mobilenet";
  int num_classes = 4;
  DatasetParams dataset;
  std::string backend = "synthetic:cpu_like:seed=7";
  std::string profile;  // empty: none given
  int channel_stride = 1;
  uint64_t seed = 1;
  TrainConfig pretrain = pretrain_desk_preset();
  SearchConfig search;
  std::string output_dir;

  bool operator==(const RunConfig&) const = default;

  // Overrides every seed the run derives from.
  void override_seed(uint64_t value);
  uint64_t dataset_seed() const { return dataset.seed.value_or(seed); }
};

RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

NetworkSpec architecture_spec(const std::string& name, int num_classes,
                              int image_size);
NetworkSpec architecture_spec(const RunConfig& cfg);
DatasetPair make_dataset(const RunConfig& cfg);

// Effective search/pretrain configs with the run seed folded in.
SearchConfig effective_search(const RunConfig& cfg);
TrainConfig effective_pretrain(const RunConfig& cfg);
uint64_t model_init_seed(const RunConfig& cfg);

nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc,
                                   const TrainConfig& defaults);

}  // namespace compactnet::cli

#pragma once

// Platform latency simulation: per-layer latency tables collected from a
// backend, interpolated queries, and whole-model latency by summation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "compactnet/netspec.hpp"

namespace compactnet {

// Latencies are microseconds throughout.
struct LatencyTable {
  int slot_id = 0;
  std::vector<int> in_grid;
  std::vector<int> out_grid;
  std::vector<double> latencies;  // row-major, |in_grid| x |out_grid|

  double at(size_t in_index, size_t out_index) const {
    return latencies[in_index * out_grid.size() + out_index];
  }
  bool operator==(const LatencyTable&) const = default;
};

struct PlatformProfile {
  std::string platform_name;
  std::map<int, LatencyTable> tables;
  double fixed_latency_us = 0.0;  // pooling + classifier tail

  bool operator==(const PlatformProfile&) const = default;
};

// Something that can run one layer of a fixed architecture and report its
// kernel latency. `trial` selects an independent noise draw; trial 0 is the
// one used for profile collection.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual double measure(int slot_id, int in_channels, int out_channels,
                         uint64_t trial = 0) const = 0;
  virtual std::string descriptor() const = 0;
};

struct CostCoefficients {
  double alpha = 0.0;  // us per multiply-accumulate
  double beta = 0.0;   // us per output element written
  double gamma = 0.0;  // fixed per-layer overhead, us
  bool operator==(const CostCoefficients&) const = default;
};

struct SyntheticBackendParams {
  std::string name = "custom";
  CostCoefficients defaults;
  std::map<int, CostCoefficients> per_slot;  // overrides by slot id
  int vector_width = 1;
  double noise_rel = 0.0;  // in [0, 0.05]
  uint64_t seed = 0;

  const CostCoefficients& coefficients(int slot_id) const;
};

enum class BackendPreset { CpuLike, NpuLike };

// Base coefficients only; no per-slot entries.
SyntheticBackendParams preset_params(BackendPreset preset, uint64_t seed);
// Base coefficients with per-slot alpha scaled by layer geometry: layers at
// the network's largest output resolution are cheap on cpu_like, while
// bottlenecks at that resolution are expensive on npu_like.
SyntheticBackendParams preset_params(BackendPreset preset, uint64_t seed,
                                     const NetworkSpec& architecture);

// Closed-form cost model:
//   (alpha*cin*cout_pad*H*W*K^2 + beta*cout_pad*H*W + gamma) * (1 + eps)
// with cout_pad rounded up to the vector width, H x W the layer's output
// grid, and eps uniform in [-noise_rel, noise_rel] keyed by
// (seed, slot, cin, cout, trial).
class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(SyntheticBackendParams params, NetworkSpec architecture);

  double measure(int slot_id, int in_channels, int out_channels,
                 uint64_t trial = 0) const override;
  std::string descriptor() const override;

  // Cost without the noise factor.
  double noiseless_cost(int slot_id, int in_channels, int out_channels) const;
  const SyntheticBackendParams& params() const { return params_; }
  const NetworkSpec& architecture() const { return arch_; }

 private:
  SyntheticBackendParams params_;
  NetworkSpec arch_;
};

std::unique_ptr<SyntheticBackend> synthetic_backend(
    BackendPreset preset, uint64_t seed, const NetworkSpec& architecture);
std::unique_ptr<SyntheticBackend> synthetic_backend(
    SyntheticBackendParams params, const NetworkSpec& architecture);

// Sampling rule {1, 1+stride, 1+2*stride, ..., max}, max always included.
std::vector<int> channel_grid(int max_channels, int stride);

PlatformProfile collect_profile(const Backend& backend, const NetworkSpec& spec,
                                int channel_stride);

double query_latency(const PlatformProfile& profile, int slot_id,
                     int in_channels, int out_channels);

double simulate(const PlatformProfile& profile, const NetworkSpec& spec);

struct PrefixComparison {
  int prefix_length = 0;  // number of leading layers
  double simulated_us = 0.0;
  double measured_us = 0.0;
  double relative_error = 0.0;
};

struct ValidationReport {
  std::vector<PrefixComparison> prefixes;
  double max_relative_error = 0.0;
};

// Compares the summed table latency of each leading-layer prefix against a
// fresh backend measurement of the same layers. The full-network prefix also
// includes the fixed tail on both sides.
ValidationReport validate_profile(const PlatformProfile& profile,
                                  const Backend& backend,
                                  const NetworkSpec& spec,
                                  const std::vector<int>& prefix_lengths);

void write_profile(const PlatformProfile& profile,
                   const std::filesystem::path& path);
PlatformProfile read_profile(const std::filesystem::path& path);

std::string format_profile(const PlatformProfile& profile);
PlatformProfile parse_profile(const std::string& text);

}  // namespace compactnet

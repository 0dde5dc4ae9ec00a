#include "compactnet/latsim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "compactnet/errors.hpp"
#include "compactnet/rng.hpp"

namespace compactnet {

const CostCoefficients& SyntheticBackendParams::coefficients(int slot_id) const {
  auto it = per_slot.find(slot_id);
  return it == per_slot.end() ? defaults : it->second;
}

SyntheticBackendParams preset_params(BackendPreset preset, uint64_t seed) {
  SyntheticBackendParams params;
  params.seed = seed;
  params.noise_rel = 0.01;
  switch (preset) {
    case BackendPreset::CpuLike:
      params.name = "cpu_like";
      params.defaults = {1.0e-3, 2.0e-3, 0.5};
      params.vector_width = 4;
      break;
    case BackendPreset::NpuLike:
      params.name = "npu_like";
      params.defaults = {2.5e-4, 2.0e-3, 5.0};
      params.vector_width = 16;
      break;
  }
  return params;
}

SyntheticBackend::SyntheticBackend(SyntheticBackendParams params,
                                   NetworkSpec architecture)
    : params_(std::move(params)), arch_(std::move(architecture)) {
  if (params_.vector_width < 1) throw ConfigError("vector width must be >= 1");
  if (params_.noise_rel < 0.0 || params_.noise_rel > 0.05) {
    throw ConfigError("noise_rel must lie in [0, 0.05]");
  }
  auto check = [](const CostCoefficients& c) {
    if (!(c.alpha >= 0.0 && c.beta >= 0.0 && c.gamma >= 0.0)) {
      throw ConfigError("cost coefficients must be non-negative");
    }
  };
  check(params_.defaults);
  for (const auto& [_, c] : params_.per_slot) check(c);
}

double SyntheticBackend::noiseless_cost(int slot_id, int in_channels,
                                        int out_channels) const {
  const LayerSpec& layer = arch_.layer(slot_id);
  const Spatial out = layer.spatial_out();
  const double kernel = kernel_size(arch_, slot_id);
  const int v = params_.vector_width;
  const double cout_pad = static_cast<double>(v * ((out_channels + v - 1) / v));
  const double pixels = static_cast<double>(out.height) * out.width;
  const CostCoefficients& c = params_.coefficients(slot_id);
  return c.alpha * in_channels * cout_pad * pixels * kernel * kernel +
         c.beta * cout_pad * pixels + c.gamma;
}

double SyntheticBackend::measure(int slot_id, int in_channels, int out_channels,
                                 uint64_t trial) const {
  const double cost = noiseless_cost(slot_id, in_channels, out_channels);
  if (params_.noise_rel == 0.0) return cost;
  const uint64_t key = derive_seed(
      {params_.seed, static_cast<uint64_t>(slot_id),
       static_cast<uint64_t>(in_channels), static_cast<uint64_t>(out_channels),
       trial});
  const double eps = (2.0 * unit_double(mix64(key)) - 1.0) * params_.noise_rel;
  return cost * (1.0 + eps);
}

std::string SyntheticBackend::descriptor() const {
  std::ostringstream out;
  out << "synthetic:" << params_.name << " seed=" << params_.seed
      << " v=" << params_.vector_width << " noise=" << params_.noise_rel;
  return out.str();
}

SyntheticBackendParams preset_params(BackendPreset preset, uint64_t seed,
                                     const NetworkSpec& architecture) {
  SyntheticBackendParams params = preset_params(preset, seed);
  int max_pixels = 0;
  for (const auto& layer : architecture.layers) {
    if (!layer.is_conv()) continue;
    const Spatial out = layer.spatial_out();
    max_pixels = std::max(max_pixels, out.height * out.width);
  }
  // cpu_like runs wide, shallow layers well and narrow deep ones poorly;
  // npu_like stalls on full-resolution depthwise work and flies elsewhere.
  for (const auto& layer : architecture.layers) {
    if (!layer.is_conv()) continue;
    const Spatial out = layer.spatial_out();
    const bool full_res = out.height * out.width >= max_pixels;
    double scale = 1.0;
    if (preset == BackendPreset::CpuLike) {
      scale = full_res ? 1.0 : 6.0;
    } else if (full_res) {
      scale = layer.kind == LayerKind::Bottleneck ? 3.5 : 1.0;
    } else {
      scale = 0.25;
    }
    CostCoefficients c = params.defaults;
    c.alpha *= scale;
    params.per_slot[layer.slot_id] = c;
  }
  return params;
}

std::unique_ptr<SyntheticBackend> synthetic_backend(
    BackendPreset preset, uint64_t seed, const NetworkSpec& architecture) {
  return std::make_unique<SyntheticBackend>(
      preset_params(preset, seed, architecture), architecture);
}

std::unique_ptr<SyntheticBackend> synthetic_backend(
    SyntheticBackendParams params, const NetworkSpec& architecture) {
  return std::make_unique<SyntheticBackend>(std::move(params), architecture);
}

std::vector<int> channel_grid(int max_channels, int stride) {
  if (stride < 1) throw ConfigError("channel stride must be >= 1");
  if (max_channels < 1) throw ConfigError("channel count must be >= 1");
  std::vector<int> grid;
  for (int c = 1; c < max_channels; c += stride) grid.push_back(c);
  grid.push_back(max_channels);
  return grid;
}

PlatformProfile collect_profile(const Backend& backend, const NetworkSpec& spec,
                                int channel_stride) {
  if (channel_stride < 1) throw ConfigError("channel stride must be >= 1");
  PlatformProfile profile;
  profile.platform_name = backend.descriptor();

  auto sample = [&](int slot, int cin, int cout) {
    double value = 0.0;
    try {
      value = backend.measure(slot, cin, cout);
    } catch (const std::exception& e) {
      throw Error("measurement failed at slot " + std::to_string(slot) +
                  " (in=" + std::to_string(cin) +
                  ", out=" + std::to_string(cout) + "): " + e.what());
    }
    if (!std::isfinite(value) || value < 0.0) {
      throw Error("measurement at slot " + std::to_string(slot) + " (in=" +
                  std::to_string(cin) + ", out=" + std::to_string(cout) +
                  ") is not a finite non-negative latency");
    }
    return value;
  };

  for (const LayerSpec& layer : spec.layers) {
    if (!layer.is_conv()) {
      profile.fixed_latency_us +=
          sample(layer.slot_id, layer.in_channels, layer.out_channels);
      continue;
    }
    LatencyTable table;
    table.slot_id = layer.slot_id;
    table.in_grid = channel_grid(layer.in_channels, channel_stride);
    table.out_grid = channel_grid(layer.out_channels, channel_stride);
    table.latencies.reserve(table.in_grid.size() * table.out_grid.size());
    for (int cin : table.in_grid) {
      for (int cout : table.out_grid) {
        table.latencies.push_back(sample(layer.slot_id, cin, cout));
      }
    }
    profile.tables.emplace(layer.slot_id, std::move(table));
  }
  return profile;
}

namespace {

struct Bracket {
  size_t lo;
  size_t hi;
  double t;  // weight of hi
};

Bracket bracket(const std::vector<int>& grid, int value, int slot_id,
                const char* axis) {
  if (value < 1 || value > grid.back()) {
    throw RangeError("slot " + std::to_string(slot_id) + ": " + axis + "=" +
                     std::to_string(value) + " outside sampled range [1, " +
                     std::to_string(grid.back()) + "]");
  }
  // Values below the first grid point clamp to it.
  if (value <= grid.front()) return {0, 0, 0.0};
  auto it = std::lower_bound(grid.begin(), grid.end(), value);
  const size_t hi = static_cast<size_t>(it - grid.begin());
  if (*it == value) return {hi, hi, 0.0};
  const size_t lo = hi - 1;
  const double t = static_cast<double>(value - grid[lo]) /
                   static_cast<double>(grid[hi] - grid[lo]);
  return {lo, hi, t};
}

}  // namespace

double query_latency(const PlatformProfile& profile, int slot_id,
                     int in_channels, int out_channels) {
  auto it = profile.tables.find(slot_id);
  if (it == profile.tables.end()) {
    throw RangeError("no latency table for slot " + std::to_string(slot_id));
  }
  const LatencyTable& table = it->second;
  const Bracket bi = bracket(table.in_grid, in_channels, slot_id, "in");
  const Bracket bo = bracket(table.out_grid, out_channels, slot_id, "out");
  if (bi.lo == bi.hi && bo.lo == bo.hi) return table.at(bi.lo, bo.lo);
  const double low = (1.0 - bo.t) * table.at(bi.lo, bo.lo) +
                     bo.t * table.at(bi.lo, bo.hi);
  const double high = (1.0 - bo.t) * table.at(bi.hi, bo.lo) +
                      bo.t * table.at(bi.hi, bo.hi);
  return (1.0 - bi.t) * low + bi.t * high;
}

double simulate(const PlatformProfile& profile, const NetworkSpec& spec) {
  double total = 0.0;
  for (const LayerSpec& layer : spec.layers) {
    if (!layer.is_conv()) continue;
    total += query_latency(profile, layer.slot_id, layer.in_channels,
                           layer.out_channels);
  }
  return total + profile.fixed_latency_us;
}

ValidationReport validate_profile(const PlatformProfile& profile,
                                  const Backend& backend,
                                  const NetworkSpec& spec,
                                  const std::vector<int>& prefix_lengths) {
  constexpr uint64_t kReplayTrial = 1;
  const int layer_count = static_cast<int>(spec.layers.size());
  ValidationReport report;
  for (int p : prefix_lengths) {
    if (p < 1 || p > layer_count) {
      throw RangeError("prefix length " + std::to_string(p) +
                       " outside [1, " + std::to_string(layer_count) + "]");
    }
    PrefixComparison row;
    row.prefix_length = p;
    double measured_tail = 0.0;
    for (int j = 0; j < p; ++j) {
      const LayerSpec& layer = spec.layers[static_cast<size_t>(j)];
      const double measured = backend.measure(
          layer.slot_id, layer.in_channels, layer.out_channels, kReplayTrial);
      if (layer.is_conv()) {
        row.simulated_us += query_latency(profile, layer.slot_id,
                                          layer.in_channels, layer.out_channels);
        row.measured_us += measured;
      } else {
        measured_tail += measured;
      }
    }
    // The tail only exists as a whole in the profile.
    if (p == layer_count) {
      row.simulated_us += profile.fixed_latency_us;
      row.measured_us += measured_tail;
    }
    row.relative_error =
        row.measured_us > 0.0
            ? std::abs(row.simulated_us - row.measured_us) / row.measured_us
            : std::abs(row.simulated_us - row.measured_us);
    report.max_relative_error =
        std::max(report.max_relative_error, row.relative_error);
    report.prefixes.push_back(row);
  }
  return report;
}

}  // namespace compactnet

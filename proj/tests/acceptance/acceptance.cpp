// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compactnet/latsim.hpp"
#include "compactnet/micronn.hpp"
#include "compactnet/rng.hpp"
#include "compactnet/search.hpp"
#include "compactnet_cli/cli.hpp"
#include "compactnet_cli/run_config.hpp"

namespace fs = std::filesystem;
using namespace compactnet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "compactnet");
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  if (code != 0) std::fprintf(stderr, "compactnet exited %d: %s\n", code, err.str().c_str());
  return code;
}

// 1. simulate equals an independent per-slot table summation, bitwise.
Outcome simulator_additivity() {
  std::mt19937_64 gen(11);
  struct Case {
    NetworkSpec spec;
    PlatformProfile profile;
    int stride;
  };
  std::vector<Case> cases;
  for (int stride : {1, 8}) {
    const auto spec = stride == 1 ? micro_mobilenet_spec(4) : mobilenet_v2_spec(10);
    auto backend = synthetic_backend(BackendPreset::CpuLike, 5, spec);
    cases.push_back({spec, collect_profile(*backend, spec, stride), stride});
  }

  // Reads the grid cell directly; trimmed widths are drawn from the grid.
  auto cell = [](const PlatformProfile& p, int slot, int cin, int cout) {
    const LatencyTable& t = p.tables.at(slot);
    const auto i = std::find(t.in_grid.begin(), t.in_grid.end(), cin) - t.in_grid.begin();
    const auto j = std::find(t.out_grid.begin(), t.out_grid.end(), cout) - t.out_grid.begin();
    if (i == static_cast<long>(t.in_grid.size()) || j == static_cast<long>(t.out_grid.size())) {
      throw std::runtime_error("off-grid query in oracle");
    }
    return t.latencies[static_cast<size_t>(i) * t.out_grid.size() + static_cast<size_t>(j)];
  };

  int mismatches = 0;
  double sim_seconds = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Case& c = cases[static_cast<size_t>(trial % 2)];
    NetworkSpec spec = c.spec;
    for (int slot : trimmable_layers(spec)) {
      if (gen() % 2) continue;
      const auto grid = channel_grid(c.spec.layer(slot).out_channels, c.stride);
      spec = trim_layer(spec, slot, grid[gen() % grid.size()]);
    }
    double oracle = 0.0;
    for (const LayerSpec& l : spec.layers) {
      if (l.kind == LayerKind::Conv2D || l.kind == LayerKind::Bottleneck) {
        oracle += cell(c.profile, l.slot_id, l.in_channels, l.out_channels);
      }
    }
    oracle += c.profile.fixed_latency_us;
    const auto t0 = std::chrono::steady_clock::now();
    const double simulated = simulate(c.profile, spec);
    sim_seconds += seconds_since(t0);
    if (std::memcmp(&simulated, &oracle, sizeof(double)) != 0) ++mismatches;
  }
  return {mismatches == 0 && sim_seconds < 1.0,
          fmt("200 specs, %d mismatches, simulate time %.4f s", mismatches, sim_seconds)};
}

// 2. validate_profile with 1% backend noise stays within 2% on all prefixes.
Outcome simulator_validation() {
  double worst = 0.0;
  int prefixes = 0;
  for (BackendPreset preset : {BackendPreset::CpuLike, BackendPreset::NpuLike}) {
    for (int arch = 0; arch < 2; ++arch) {
      const auto spec = arch == 0 ? micro_mobilenet_spec(4) : mobilenet_v2_spec(10);
      auto params = preset_params(preset, 9, spec);
      params.noise_rel = 0.01;
      const auto backend = synthetic_backend(params, spec);
      const auto profile = collect_profile(*backend, spec, arch == 0 ? 1 : 8);
      std::vector<int> all(spec.layers.size());
      std::iota(all.begin(), all.end(), 1);
      const auto report = validate_profile(profile, *backend, spec, all);
      worst = std::max(worst, report.max_relative_error);
      prefixes += static_cast<int>(report.prefixes.size());
    }
  }
  return {worst <= 0.02, fmt("%d prefixes, max relative error %.5f", prefixes, worst)};
}

// 3. Schedule algebra over random (t_final, N, d).
Outcome schedule_algebra() {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_final = 0.0, worst_round_trip = 0.0;
  int decay_breaks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    SearchConfig cfg;
    cfg.t_final = 3.0 - 2.0 * unit(gen);  // (1, 3]
    if (cfg.t_final <= 1.0) cfg.t_final = 3.0;
    cfg.n_iterations = 1 + static_cast<int>(gen() % 100);
    cfg.decay = 1.0 - 0.5 * unit(gen);  // (0.5, 1]
    const auto s = schedule(cfg, 1000.0);
    double accumulated = 1.0;
    for (double inc : s.increments) accumulated += inc;
    worst_final = std::max({worst_final,
                            std::abs(accumulated - cfg.t_final) / cfg.t_final,
                            std::abs(s.cumulative_factors.back() - cfg.t_final) / cfg.t_final});
    for (size_t i = 1; i < s.increments.size(); ++i) {
      if (s.increments[i] != s.increments[i - 1] * cfg.decay) ++decay_breaks;
    }
    const double t_init = invert_initial_target(cfg.t_final, cfg.n_iterations, cfg.decay);
    double sum = 0.0, term = t_init / cfg.n_iterations;
    for (int i = 0; i < cfg.n_iterations; ++i, term *= cfg.decay) sum += term;
    worst_round_trip = std::max(worst_round_trip, std::abs(sum - cfg.t_final) / cfg.t_final);
  }
  return {worst_final <= 1e-9 && decay_breaks == 0 && worst_round_trip <= 1e-12,
          fmt("1000 triples, F_last rel err %.2e, decay breaks %d, inversion rel err %.2e",
              worst_final, decay_breaks, worst_round_trip)};
}

// Small random network with every layer kind, residual and strided blocks.
NetworkSpec random_small_spec(std::mt19937_64& gen) {
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(gen() % static_cast<unsigned>(hi - lo + 1)); };
  NetworkSpec spec;
  spec.num_classes = pick(2, 4);
  const int size = pick(3, 6);
  spec.input_shape = {3, size, size};
  const int c1 = pick(2, 5), c2 = pick(2, 5), c3 = pick(2, 5);
  const int half = (size + 1) / 2;
  auto add = [&](LayerKind kind, int in, int out, int spatial, int stride, int e) {
    LayerSpec l;
    l.slot_id = static_cast<int>(spec.layers.size());
    l.kind = kind;
    l.in_channels = in;
    l.out_channels = out;
    l.spatial_in = {spatial, spatial};
    l.stride = stride;
    l.expansion_factor = e;
    l.trimmable = kind == LayerKind::Conv2D || kind == LayerKind::Bottleneck;
    spec.layers.push_back(l);
  };
  add(LayerKind::Conv2D, 3, c1, size, 1, 1);
  add(LayerKind::Bottleneck, c1, c1, size, 1, pick(1, 3));
  add(LayerKind::Bottleneck, c1, c2, size, 2, pick(1, 3));
  add(LayerKind::Conv2D, c2, c3, half, 1, 1);
  add(LayerKind::GlobalAvgPool, c3, c3, half, 1, 1);
  add(LayerKind::Classifier, c3, spec.num_classes, 1, 1, 1);
  spec.layers.back().trimmable = false;
  return spec;
}

// 4. Finite differences for every parameter of every layer kind.
Outcome gradient_correctness() {
  std::mt19937_64 gen(4);
  std::map<LayerKind, double> worst;
  std::map<LayerKind, int> checked;
  const int instances = 24;
  const double h = 1e-5;
  for (int inst = 0; inst < instances; ++inst) {
    const auto spec = random_small_spec(gen);
    Model m = build_model(spec, gen());
    Rng rng(gen());
    for (auto& layer : m.layers) {
      for (size_t t = 1; t < layer.tensors.size(); t += 2) {
        for (auto& v : layer.tensors[t].values) v = 0.1 * rng.normal();
      }
    }
    const int batch = 3;
    std::vector<double> x(static_cast<size_t>(3 * spec.input_shape.height * spec.input_shape.width * batch));
    for (auto& v : x) v = rng.normal();
    std::vector<int> y(batch);
    for (int& label : y) label = static_cast<int>(rng.below(static_cast<uint64_t>(spec.num_classes)));
    Gradients g;
    loss_and_gradients(m, x, y, g);
    auto loss = [&] { return softmax_cross_entropy(forward(m, x), y); };
    for (size_t l = 0; l < m.layers.size(); ++l) {
      const LayerKind kind = spec.layers[l].kind;
      for (size_t t = 0; t < m.layers[l].tensors.size(); ++t) {
        for (size_t i = 0; i < m.layers[l].tensors[t].size(); ++i) {
          double& w = m.layers[l].tensors[t][i];
          const double saved = w;
          w = saved + h;
          const double up = loss();
          w = saved - h;
          const double down = loss();
          w = saved;
          const double numeric = (up - down) / (2 * h);
          const double analytic = g[l].tensors[t][i];
          const double scale = std::max(std::abs(numeric), std::abs(analytic));
          if (scale < 1e-7) continue;
          worst[kind] = std::max(worst[kind], std::abs(numeric - analytic) / scale);
          ++checked[kind];
        }
      }
    }
  }
  // Pooling owns no weights; its backward pass is checked through every
  // weight upstream of it.
  bool pass = checked.size() == 3;
  std::string detail = fmt("%d instances;", instances);
  for (const auto& [kind, n] : checked) {
    const double err = worst.count(kind) ? worst[kind] : 0.0;
    pass = pass && err < 1e-4 && n > 0;
    detail += fmt(" %s %d checks max %.1e;", std::string(to_string(kind)).c_str(), n, err);
  }
  detail += " globalavgpool via upstream weights";
  return {pass, detail};
}

// 5. trim_to_budget keeps the brute-force top-count filters by L2 norm,
// lower index first on ties.
Outcome filter_selection() {
  std::mt19937_64 gen(5);
  const auto spec = micro_mobilenet_spec(4);
  auto params = preset_params(BackendPreset::CpuLike, 1, spec);
  params.noise_rel = 0.0;
  const auto profile = collect_profile(*synthetic_backend(params, spec), spec, 1);
  const auto slots = trimmable_layers(spec);
  int failures = 0, ties = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Model m = build_model(spec, gen());
    const int slot = slots[gen() % slots.size()];
    const int width = spec.layer(slot).out_channels;
    auto& tensors = m.layers[static_cast<size_t>(spec.index_of(slot))].tensors;
    Tensor& weight = tensors[tensors.size() - 2];
    Tensor& bias = tensors.back();
    const size_t row = weight.size() / static_cast<size_t>(width);
    // Duplicate a few filters so equal norms occur.
    for (int k = 0; k < 2 && trial % 3 == 0; ++k) {
      const size_t from = gen() % static_cast<size_t>(width), to = gen() % static_cast<size_t>(width);
      std::copy_n(weight.values.begin() + static_cast<long>(from * row), row,
                  weight.values.begin() + static_cast<long>(to * row));
      bias[to] = bias[from];
    }
    const int target = 1 + static_cast<int>(gen() % static_cast<unsigned>(width - 1));
    const auto out = trim_to_budget(m, profile, slot, simulate(profile, trim_layer(spec, slot, target)), 1);
    const auto norms = filter_l2_norms(m, slot);
    const int count = static_cast<int>(out.kept.size());
    // Every subset of `count` indices; best = largest descending-sorted norm
    // profile, then smallest index list.
    std::vector<int> best;
    std::vector<double> best_key;
    std::vector<bool> mask(static_cast<size_t>(width), false);
    std::fill(mask.begin(), mask.begin() + count, true);
    do {
      std::vector<int> subset;
      for (int i = 0; i < width; ++i) {
        if (mask[static_cast<size_t>(i)]) subset.push_back(i);
      }
      std::vector<double> key;
      for (int i : subset) key.push_back(norms[static_cast<size_t>(i)]);
      std::sort(key.rbegin(), key.rend());
      if (best.empty() || key > best_key || (key == best_key && subset < best)) {
        best = subset;
        best_key = key;
      }
    } while (std::prev_permutation(mask.begin(), mask.end()));
    std::vector<double> sorted = norms;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) ++ties;
    if (out.kept != best) ++failures;
  }
  return {failures == 0, fmt("100 trials (%d with tied norms), %d mismatches", ties, failures)};
}

// 6. trim_to_budget's filter count is the largest one meeting the budget.
Outcome greedy_optimality() {
  const auto spec = micro_mobilenet_spec(4);
  int failures = 0, cases = 0;
  for (BackendPreset preset : {BackendPreset::CpuLike, BackendPreset::NpuLike}) {
    auto params = preset_params(preset, 2, spec);
    params.noise_rel = 0.0;
    const auto profile = collect_profile(*synthetic_backend(params, spec), spec, 1);
    const Model m = build_model(spec, 6);
    const double base = simulate(profile, spec);
    for (int slot : trimmable_layers(spec)) {
      const double floor = simulate(profile, trim_layer(spec, slot, 1));
      for (int b = 0; b < 20; ++b) {
        // Budgets from unchanged down to just below the one-filter latency.
        const double budget = base - (base - floor) * (b / 18.0);
        int oracle = 0;
        for (int c = 1; c <= spec.layer(slot).out_channels; ++c) {
          if (simulate(profile, trim_layer(spec, slot, c)) <= budget) oracle = c;
        }
        const auto out = trim_to_budget(m, profile, slot, budget, 1);
        const int got = out.feasible ? out.model.spec.layer(slot).out_channels : 0;
        ++cases;
        if (got != oracle) ++failures;
      }
    }
  }
  return {failures == 0, fmt("%d (slot, budget) cases over 2 backends, %d mismatches", cases, failures)};
}

struct RunArtifacts {
  fs::path work;
  fs::path config;
  fs::path cpu_profile;
  fs::path npu_profile;
  fs::path run7;
  fs::path cross8;
  fs::path run9;
  bool run7_ok = false;
  bool cross8_ok = false;
  double run7_seconds = 0.0;
};

// 7. Seeded end-to-end search through the CLI.
Outcome end_to_end(RunArtifacts& a) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cli({"profile", "--arch", "micro_mobilenet", "--classes", "4", "--backend",
           "synthetic:cpu_like:seed=7", "--stride", "1", "--out", a.cpu_profile.string()}) != 0) {
    return {false, "profile collection failed"};
  }
  if (cli({"search", "--config", a.config.string(), "--profile", a.cpu_profile.string(),
           "--out", a.run7.string(), "--pretrain"}) != 0) {
    return {false, "search did not complete"};
  }
  a.run7_seconds = seconds_since(t0);
  a.run7_ok = true;
  const auto report = nlohmann::json::parse(slurp(a.run7 / "report.json"));
  const double pre = report["pretrained_accuracy"];
  const double fin = report["final_accuracy"];
  const double speedup = report["achieved_speedup"];
  const bool pass = pre >= 0.90 && speedup >= 1.4 && fin >= pre - 0.03 && a.run7_seconds < 600.0;
  return {pass, fmt("pretrained %.4f, final %.4f, speedup %.4f, %.0f s", pre, fin, speedup,
                    a.run7_seconds)};
}

// 8. cpu_like and npu_like optimize to different, non-transferable models.
Outcome platform_specificity(RunArtifacts& a) {
  if (!a.run7_ok) return {false, "needs the pretrained checkpoint from criterion 7"};
  const auto t0 = std::chrono::steady_clock::now();
  if (cli({"profile", "--arch", "micro_mobilenet", "--classes", "4", "--backend",
           "synthetic:npu_like:seed=7", "--stride", "1", "--out", a.npu_profile.string()}) != 0) {
    return {false, "profile collection failed"};
  }
  if (cli({"cross", "--config", a.config.string(), "--profile-a", a.cpu_profile.string(),
           "--profile-b", a.npu_profile.string(), "--pretrained", (a.run7 / "pretrained").string(),
           "--out", a.cross8.string()}) != 0) {
    return {false, "cross experiment did not complete"};
  }
  const double elapsed = seconds_since(t0);
  a.cross8_ok = true;
  const auto doc = nlohmann::json::parse(slurp(a.cross8 / "cross.json"));
  const auto s = doc["speedup"].get<std::vector<std::vector<double>>>();
  const auto fa = doc["filters"][0].get<std::vector<int>>();
  const auto fb = doc["filters"][1].get<std::vector<int>>();
  const bool differ = fa != fb;
  const bool on_b = s[0][1] < s[1][1];  // cpu-optimized model timed on npu
  const bool on_a = s[1][0] < s[0][0];  // npu-optimized model timed on cpu
  auto join = [](const std::vector<int>& v) {
    std::string out;
    for (int c : v) out += (out.empty() ? "" : " ") + std::to_string(c);
    return out;
  };
  return {differ && on_a && on_b && elapsed < 1200.0,
          fmt("cpu filters [%s] npu filters [%s]; on cpu %.4f vs %.4f, on npu %.4f vs %.4f; %.0f s",
              join(fa).c_str(), join(fb).c_str(), s[1][0], s[0][0], s[0][1], s[1][1], elapsed)};
}

std::string report_without_metadata(const fs::path& p) {
  auto doc = nlohmann::ordered_json::parse(slurp(p));
  doc.erase("metadata");
  return doc.dump();
}

// 9. A search stopped after three iterations and resumed matches run 7.
Outcome determinism_and_resume(RunArtifacts& a) {
  if (!a.run7_ok) return {false, "needs the uninterrupted run from criterion 7"};
  const auto t0 = std::chrono::steady_clock::now();
  if (cli({"search", "--config", a.config.string(), "--profile", a.cpu_profile.string(),
           "--out", a.run9.string(), "--pretrain", "--stop-after-iteration", "3"}) != 0) {
    return {false, "interrupted run failed"};
  }
  const bool stopped = !fs::exists(a.run9 / "report.json") && fs::exists(a.run9 / "iter_2") &&
                       !fs::exists(a.run9 / "iter_3");
  if (cli({"search", "--resume", a.run9.string()}) != 0) return {false, "resume failed"};
  const double elapsed = seconds_since(t0);
  const bool same = report_without_metadata(a.run7 / "report.json") ==
                    report_without_metadata(a.run9 / "report.json");
  const bool md_same = slurp(a.run7 / "report.md") == slurp(a.run9 / "report.md");
  return {stopped && same && md_same && elapsed < 2.0 * a.run7_seconds,
          fmt("stopped after 3 iterations: %s; report.json identical: %s; report.md identical: %s; "
              "%.0f s vs limit %.0f s",
              stopped ? "yes" : "no", same ? "yes" : "no", md_same ? "yes" : "no", elapsed,
              2.0 * a.run7_seconds)};
}

// 10. Every search log trims at most one layer per iteration.
Outcome one_layer_per_iteration(const RunArtifacts& a) {
  if (!a.run7_ok || !a.cross8_ok) return {false, "needs the logs from criteria 7 and 8"};
  std::vector<std::pair<std::string, SearchLog>> logs;
  const auto report = nlohmann::json::parse(slurp(a.run7 / "report.json"));
  logs.emplace_back("criterion 7", search_log_from_json(report["search_log"]));
  const auto cross = nlohmann::json::parse(slurp(a.cross8 / "cross.json"));
  logs.emplace_back("criterion 8 cpu_like", search_log_from_json(cross["logs"][0]));
  logs.emplace_back("criterion 8 npu_like", search_log_from_json(cross["logs"][1]));
  int violations = 0, iterations = 0;
  for (const auto& [name, log] : logs) {
    iterations += static_cast<int>(log.iterations.size());
    for (const auto& v : audit_one_layer_per_iteration(log)) {
      std::fprintf(stderr, "%s: %s\n", name.c_str(), v.c_str());
      ++violations;
    }
  }
  return {violations == 0 && iterations > 0,
          fmt("%zu logs, %d iterations audited, %d violations", logs.size(), iterations, violations)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "compactnet_acceptance";
  fs::path config_source;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--workdir") {
      work = argv[i + 1];
    } else if (flag == "--config") {
      config_source = argv[i + 1];
    } else {
      std::fprintf(stderr, "usage: acceptance [--workdir DIR] [--config micro_cpu_desk.json]\n");
      return 2;
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);

  RunArtifacts a;
  a.work = work;
  a.config = work / "micro_cpu_desk.json";
  a.cpu_profile = work / "cpu_like.csv";
  a.npu_profile = work / "npu_like.csv";
  a.run7 = work / "run7";
  a.cross8 = work / "cross8";
  a.run9 = work / "run9";

  // The pinned desk configuration: micro model, 4 classes, cpu_like,
  // t_final 1.4, N 6, d 0.96, desk training presets, seed 1.
  cli::RunConfig cfg;
  if (!config_source.empty()) cfg = cli::load_run_config(config_source);
  else {
    cfg.architecture = "micro_mobilenet";
    cfg.num_classes = 4;
    cfg.seed = 1;
    cfg.search.t_final = 1.4;
    cfg.search.n_iterations = 6;
    cfg.search.decay = 0.96;
  }
  std::ofstream(a.config) << cli::to_json(cfg).dump(2) << "\n";

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"simulator additivity", simulator_additivity},
      {"simulator validation", simulator_validation},
      {"schedule algebra", schedule_algebra},
      {"gradient correctness", gradient_correctness},
      {"filter selection", filter_selection},
      {"greedy budget optimality", greedy_optimality},
      {"end-to-end speedup guarantee", [&] { return end_to_end(a); }},
      {"platform specificity", [&] { return platform_specificity(a); }},
      {"determinism and resume", [&] { return determinism_and_resume(a); }},
      {"one layer per iteration", [&] { return one_layer_per_iteration(a); }},
  };

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("criterion %2zu %s  %s: %s [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL",
                criteria[i].first.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<size_t>(failed),
              criteria.size());
  return failed == 0 ? 0 : 1;
}

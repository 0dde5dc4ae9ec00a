#include "compactnet_cli/cli.hpp"

#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "compactnet/errors.hpp"
#include "compactnet_cli/report.hpp"
#include "compactnet_cli/run_config.hpp"

namespace compactnet::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct UsageError : ConfigError {
  using ConfigError::ConfigError;
};

struct ToleranceExceeded : Error {
  using Error::Error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Writes a checkpoint-like directory atomically: build in `<dir>.tmp`, then
// rename into place.
template <typename Fn>
void write_dir_atomically(const fs::path& dir, Fn fill) {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  fill(tmp);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    if (fs::exists(path_)) {
      long pid = 0;
      std::ifstream(path_) >> pid;
      if (pid > 0 && pid != static_cast<long>(::getpid()) &&
          ::kill(static_cast<pid_t>(pid), 0) == 0) {
        throw UsageError("run directory '" + dir.string() +
                         "' is locked by running process " + std::to_string(pid));
      }
    }
    write_text(path_, std::to_string(::getpid()) + "\n");
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

Model obtain_pretrained(const RunConfig& cfg, const DatasetPair& data,
                        std::ostream& out) {
  const NetworkSpec spec = architecture_spec(cfg);
  out << "pretraining " << cfg.architecture << " for " << cfg.pretrain.epochs
      << " epochs\n";
  TrainResult result = train(build_model(spec, model_init_seed(cfg)), data.train,
                             data.validation, effective_pretrain(cfg));
  const double acc = evaluate(result.model, data.validation);
  out << "pretrained validation accuracy " << acc << "\n";
  return std::move(result.model);
}

Model load_pretrained(const fs::path& dir, const RunConfig& cfg) {
  if (!fs::is_directory(dir)) {
    throw UsageError("pretrained checkpoint '" + dir.string() + "' not found");
  }
  Model model = load_checkpoint(dir);
  if (!(model.spec == architecture_spec(cfg))) {
    throw ConfigError("pretrained checkpoint does not match the configured " +
                      cfg.architecture + " architecture");
  }
  return model;
}

PlatformProfile load_profile(const std::string& path) {
  if (path.empty()) {
    throw UsageError("no profile given (use --profile or set \"profile\" in the config)");
  }
  if (!fs::exists(path)) throw UsageError("profile '" + path + "' not found");
  return read_profile(path);
}

// ---- profile ---------------------------------------------------------------

struct ProfileArgs {
  std::string config;
  std::string arch = "micro_mobilenet";
  int classes = 4;
  int image_size = 0;
  std::string backend;
  int stride = 1;
  std::string out;
};

int image_size_for(const std::string& arch, int requested) {
  if (requested > 0) return requested;
  return arch == "mobilenet_v2" ? 32 : 12;
}

int cmd_profile(const ProfileArgs& a, std::ostream& out) {
  if (a.stride < 1) throw UsageError("--stride must be >= 1");
  const NetworkSpec spec =
      architecture_spec(a.arch, a.classes, image_size_for(a.arch, a.image_size));
  const BackendSpec backend_spec = parse_backend_spec(a.backend);
  const auto backend = make_backend(backend_spec, spec);
  const PlatformProfile profile = collect_profile(*backend, spec, a.stride);
  write_profile(profile, a.out);

  size_t entries = 0;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& [slot, table] : profile.tables) {
    entries += table.latencies.size();
    const auto [mn, mx] = std::minmax_element(table.latencies.begin(),
                                              table.latencies.end());
    lo = first ? *mn : std::min(lo, *mn);
    hi = first ? *mx : std::max(hi, *mx);
    first = false;
    out << "slot " << slot << ": " << table.in_grid.size() << " x "
        << table.out_grid.size() << " grid, " << *mn << " .. " << *mx << " us\n";
  }
  out << profile.tables.size() << " tables, " << entries << " entries, latency "
      << lo << " .. " << hi << " us, fixed tail " << profile.fixed_latency_us
      << " us\nwrote " << a.out << "\n";
  return kOk;
}

// ---- validate --------------------------------------------------------------

struct ValidateArgs {
  std::string config;
  std::string arch = "micro_mobilenet";
  int classes = 4;
  int image_size = 0;
  std::string backend;
  std::string profile;
  double tolerance = 0.02;
};

int cmd_validate(ValidateArgs a, std::ostream& out) {
  if (a.tolerance < 0.0) throw UsageError("--tolerance must be >= 0");
  NetworkSpec spec;
  if (!a.config.empty()) {
    const RunConfig cfg = load_run_config(a.config);
    spec = architecture_spec(cfg);
    if (a.backend.empty()) a.backend = cfg.backend;
    if (a.profile.empty()) a.profile = cfg.profile;
  } else {
    spec = architecture_spec(a.arch, a.classes, image_size_for(a.arch, a.image_size));
  }
  if (a.backend.empty()) throw UsageError("--backend is required");
  const PlatformProfile profile = load_profile(a.profile);
  const auto backend = make_backend(parse_backend_spec(a.backend), spec);

  std::vector<int> prefixes;
  for (int n = 1; n <= static_cast<int>(spec.layers.size()); ++n) prefixes.push_back(n);
  const ValidationReport report = validate_profile(profile, *backend, spec, prefixes);

  char line[160];
  out << "prefix  simulated_us  measured_us  rel_error\n";
  for (const auto& p : report.prefixes) {
    std::snprintf(line, sizeof(line), "%6d  %12.4f  %11.4f  %9.6f\n",
                  p.prefix_length, p.simulated_us, p.measured_us, p.relative_error);
    out << line;
  }
  std::snprintf(line, sizeof(line), "max relative error %.6f (tolerance %.6f)\n",
                report.max_relative_error, a.tolerance);
  out << line;
  if (report.max_relative_error > a.tolerance) {
    throw ToleranceExceeded("simulator error exceeds tolerance");
  }
  return kOk;
}

// ---- search ----------------------------------------------------------------

struct SearchArgs {
  std::string config;
  std::string profile;
  std::string out;
  std::string resume;
  bool pretrain = false;
  std::string pretrained;
  std::optional<uint64_t> seed;
  int jobs = 1;
  int stop_after = -1;
};

fs::path iter_dir(const fs::path& run, int i) {
  return run / ("iter_" + std::to_string(i));
}

void save_iteration(const fs::path& run, const SearchState& state,
                    const SearchLog& log) {
  const int i = state.iteration - 1;
  write_dir_atomically(iter_dir(run, i), [&](const fs::path& dir) {
    save_checkpoint(state.model, dir / "model");
    ojson st;
    st["iteration"] = state.iteration;
    st["original_latency_us"] = state.original_latency_us;
    st["accuracy"] = state.accuracy;
    st["original_filter_counts"] = state.original_filter_counts;
    write_text(dir / "state.json", st.dump(2) + "\n");
    write_text(dir / "log.json", to_json(log).dump(2) + "\n");
  });
}

int latest_iteration(const fs::path& run) {
  int latest = -1;
  if (!fs::is_directory(run)) return latest;
  for (const auto& entry : fs::directory_iterator(run)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("iter_", 0) != 0) continue;
    const std::string digits = name.substr(5);
    if (digits.empty() ||
        !std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(c); })) {
      continue;
    }
    latest = std::max(latest, std::stoi(digits));
  }
  return latest;
}

int finish_search(const fs::path& run, const RunConfig& cfg,
                  const PlatformProfile& profile, const Model& pretrained,
                  const SearchResult& result, std::ostream& out) {
  write_dir_atomically(run / "final", [&](const fs::path& dir) {
    save_checkpoint(result.model, dir);
  });
  ojson report = build_report(cfg, profile, pretrained, result);
  write_text(run / "report.md", render_markdown(report));
  report["metadata"] = {{"created_at", timestamp()}};
  write_text(run / "report.json", report.dump(2) + "\n");
  out << "speedup " << report["achieved_speedup"].get<double>() << " (target "
      << cfg.search.t_final << "), accuracy "
      << report["pretrained_accuracy"].get<double>() << " -> "
      << report["final_accuracy"].get<double>() << "\nwrote " << (run / "report.json").string()
      << "\n";
  return kOk;
}

int cmd_search(const SearchArgs& a, std::ostream& out) {
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  const bool resuming = !a.resume.empty();
  fs::path run;
  RunConfig cfg;
  if (resuming) {
    if (!a.config.empty() || !a.profile.empty() || a.pretrain ||
        !a.pretrained.empty() || a.seed) {
      throw UsageError("--resume takes its inputs from the run directory");
    }
    run = a.resume;
    if (!fs::exists(run / "config.json") || !fs::exists(run / "profile.csv")) {
      throw UsageError("'" + run.string() + "' is not a run directory");
    }
    cfg = run_config_from_json(read_json(run / "config.json"));
    if (fs::exists(run / "report.json")) {
      out << "run already complete; see " << (run / "report.json").string() << "\n";
      return kOk;
    }
  } else {
    if (a.config.empty()) throw UsageError("--config is required");
    if (a.pretrain == !a.pretrained.empty()) {
      throw UsageError("pass exactly one of --pretrain or --pretrained <dir>");
    }
    cfg = load_run_config(a.config);
    if (a.seed) cfg.override_seed(*a.seed);
    if (!a.profile.empty()) cfg.profile = a.profile;
    if (!a.out.empty()) cfg.output_dir = a.out;
    if (cfg.output_dir.empty()) throw UsageError("no output directory (use --out)");
    run = cfg.output_dir;
    if (fs::exists(run / "config.json")) {
      throw UsageError("'" + run.string() + "' already holds a run; use --resume");
    }
  }

  const PlatformProfile profile =
      load_profile(resuming ? (run / "profile.csv").string() : cfg.profile);
  std::optional<Model> given;
  if (!resuming && !a.pretrained.empty()) given = load_pretrained(a.pretrained, cfg);

  fs::create_directories(run);
  RunLock lock(run);
  if (!resuming) {
    write_text(run / "profile.csv", format_profile(profile));
    write_text(run / "config.json", to_json(cfg).dump(2) + "\n");
  }

  const DatasetPair data = make_dataset(cfg);
  Model pretrained;
  if (fs::is_directory(run / "pretrained")) {
    pretrained = load_checkpoint(run / "pretrained");
  } else {
    pretrained = given ? *given : obtain_pretrained(cfg, data, out);
    write_dir_atomically(run / "pretrained", [&](const fs::path& dir) {
      save_checkpoint(pretrained, dir);
    });
  }

  const SearchConfig search = effective_search(cfg);
  SearchOptions options;
  options.jobs = a.jobs;
  options.on_iteration = [&](const SearchState& state, const SearchLog& log) {
    save_iteration(run, state, log);
    const auto& it = log.iterations.back();
    out << "iteration " << it.iteration << ": trimmed slot " << it.selected_slot
        << ", latency " << it.latency_us << " us (budget " << it.budget_us
        << "), accuracy " << it.accuracy << "\n"
        << std::flush;
    return a.stop_after < 0 || state.iteration < a.stop_after;
  };

  SearchResult result;
  try {
    const int latest = resuming ? latest_iteration(run) : -1;
    if (latest >= 0) {
      const fs::path dir = iter_dir(run, latest);
      const auto st = read_json(dir / "state.json");
      const SearchLog log = search_log_from_json(read_json(dir / "log.json"));
      SearchState state;
      state.iteration = st.at("iteration").get<int>();
      state.model = load_checkpoint(dir / "model");
      state.original_latency_us = st.at("original_latency_us").get<double>();
      state.accuracy = st.at("accuracy").get<double>();
      state.original_filter_counts =
          st.at("original_filter_counts").get<std::vector<int>>();
      state.history = log.iterations;
      out << "resuming after iteration " << latest << "\n";
      result = continue_search(search, std::move(state), log.pretrained_accuracy,
                               profile, data.train, data.validation, {}, options);
    } else {
      result = run_search(search, pretrained, profile, data.train,
                          data.validation, {}, options);
    }
  } catch (const TargetUnreachable& e) {
    write_text(run / "partial_log.json", to_json(e.partial_log()).dump(2) + "\n");
    throw;
  }

  if (!result.completed) {
    out << "stopped after iteration " << a.stop_after - 1
        << "; continue with --resume " << run.string() << "\n";
    return kOk;
  }
  return finish_search(run, cfg, profile, pretrained, result, out);
}

// ---- cross -----------------------------------------------------------------

struct CrossArgs {
  std::string config;
  std::string profile_a;
  std::string profile_b;
  bool pretrain = false;
  std::string pretrained;
  std::string out;
  std::optional<uint64_t> seed;
  int jobs = 1;
};

int cmd_cross(const CrossArgs& a, std::ostream& out) {
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  if (a.pretrain == !a.pretrained.empty()) {
    throw UsageError("pass exactly one of --pretrain or --pretrained <dir>");
  }
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.override_seed(*a.seed);
  const PlatformProfile pa = load_profile(a.profile_a);
  const PlatformProfile pb = load_profile(a.profile_b);
  const DatasetPair data = make_dataset(cfg);
  const Model pretrained = a.pretrain ? obtain_pretrained(cfg, data, out)
                                      : load_pretrained(a.pretrained, cfg);
  SearchOptions options;
  options.jobs = a.jobs;
  const CrossReport report = cross_platform_experiment(
      effective_search(cfg), pretrained, pa, pb, data.train, data.validation, {},
      options);
  const std::string md = render_cross_markdown(report);
  out << md;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    ojson doc = cross_report_json(report);
    doc["config"] = to_json(cfg);
    write_text(fs::path(a.out) / "cross.md", md);
    doc["metadata"] = {{"created_at", timestamp()}};
    write_text(fs::path(a.out) / "cross.json", doc.dump(2) + "\n");
  }
  return kOk;
}

// ---- report ----------------------------------------------------------------

int cmd_report(const std::string& run, bool verify, std::ostream& out) {
  const fs::path dir = run;
  if (!fs::exists(dir / "report.json")) {
    throw UsageError("'" + run + "' has no report.json");
  }
  if (!verify) {
    out << read_text(dir / "report.md");
    return kOk;
  }
  const auto problems = verify_run(dir);
  for (const auto& p : problems) out << "MISMATCH " << p << "\n";
  if (!problems.empty()) throw ToleranceExceeded("report does not match the artifacts");
  out << "report verified against checkpoints and profile\n";
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"compactnet: latency-driven filter trimming for compact CNNs"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  ProfileArgs pa;
  auto* profile = app.add_subcommand("profile", "collect a latency profile from a backend");
  profile->add_option("--config", pa.config,
                      "run config supplying arch, classes, image size, backend and stride");
  auto* p_arch = profile->add_option("--arch", pa.arch, "micro_mobilenet or mobilenet_v2")
                     ->capture_default_str();
  auto* p_classes =
      profile->add_option("--classes", pa.classes, "number of classes")->capture_default_str();
  auto* p_size = profile->add_option("--image-size", pa.image_size,
                                     "input resolution (default 12 for micro, 32 for mobilenet_v2)");
  auto* p_backend =
      profile->add_option("--backend", pa.backend, "backend, e.g. synthetic:cpu_like:seed=7");
  auto* p_stride = profile->add_option("--stride", pa.stride, "channel sampling stride")
                       ->capture_default_str();
  profile->add_option("--out", pa.out, "output CSV")->required();

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate", "compare simulated and measured latency");
  validate->add_option("--config", va.config, "run config supplying arch/backend/profile");
  validate->add_option("--arch", va.arch, "architecture")->capture_default_str();
  validate->add_option("--classes", va.classes, "number of classes")->capture_default_str();
  validate->add_option("--image-size", va.image_size, "input resolution");
  validate->add_option("--backend", va.backend, "backend to measure against");
  validate->add_option("--profile", va.profile, "profile CSV");
  validate->add_option("--tolerance", va.tolerance, "maximum relative error")
      ->capture_default_str();

  SearchArgs sa;
  uint64_t search_seed = 0;
  auto* search = app.add_subcommand("search", "run the trimming search");
  search->add_option("--config", sa.config, "run config JSON");
  search->add_option("--profile", sa.profile, "profile CSV (overrides the config)");
  search->add_option("--out", sa.out, "run directory (overrides the config)");
  search->add_option("--resume", sa.resume, "continue an interrupted run directory");
  search->add_flag("--pretrain", sa.pretrain, "pretrain the model from scratch");
  search->add_option("--pretrained", sa.pretrained, "pretrained checkpoint directory");
  auto* seed_opt = search->add_option("--seed", search_seed, "override every seed");
  search->add_option("--jobs", sa.jobs, "candidates trained in parallel")
      ->capture_default_str();
  search->add_option("--stop-after-iteration", sa.stop_after,
                     "stop once this many iterations are checkpointed")
      ->group("");

  CrossArgs ca;
  uint64_t cross_seed = 0;
  auto* cross = app.add_subcommand("cross", "exchange optima between two platforms");
  cross->add_option("--config", ca.config, "run config JSON")->required();
  cross->add_option("--profile-a", ca.profile_a, "first profile")->required();
  cross->add_option("--profile-b", ca.profile_b, "second profile")->required();
  cross->add_flag("--pretrain", ca.pretrain, "pretrain the model from scratch");
  cross->add_option("--pretrained", ca.pretrained, "pretrained checkpoint directory");
  cross->add_option("--out", ca.out, "directory for cross.json and cross.md");
  auto* cross_seed_opt = cross->add_option("--seed", cross_seed, "override every seed");
  cross->add_option("--jobs", ca.jobs, "candidates trained in parallel")
      ->capture_default_str();

  std::string report_dir;
  bool verify = false;
  auto* report = app.add_subcommand("report", "print or verify a run report");
  report->add_option("run", report_dir, "run directory")->required();
  report->add_flag("--verify", verify, "recompute and check report.json");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  if (*seed_opt) sa.seed = search_seed;
  if (*cross_seed_opt) ca.seed = cross_seed;

  try {
    if (*profile) {
      if (!pa.config.empty()) {
        // Explicit flags win over the config.
        const RunConfig cfg = load_run_config(pa.config);
        if (!*p_arch) pa.arch = cfg.architecture;
        if (!*p_classes) pa.classes = cfg.num_classes;
        if (!*p_size) pa.image_size = cfg.dataset.image_size;
        if (!*p_backend) pa.backend = cfg.backend;
        if (!*p_stride) pa.stride = cfg.channel_stride;
      }
      if (pa.backend.empty()) throw UsageError("profile needs --backend or --config");
      return cmd_profile(pa, out);
    }
    if (*validate) return cmd_validate(va, out);
    if (*search) return cmd_search(sa, out);
    if (*cross) return cmd_cross(ca, out);
    if (*report) return cmd_report(report_dir, verify, out);
  } catch (const TargetUnreachable& e) {
    err << "error: " << e.what() << "\n";
    return kUnreachable;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kTrainingFailed;
  } catch (const ToleranceExceeded& e) {
    err << "error: " << e.what() << "\n";
    return kToleranceExceeded;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const SpecError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const RangeError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace compactnet::cli

#include "compactnet_cli/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "compactnet/errors.hpp"
#include "compactnet/rng.hpp"

namespace compactnet::cli {

namespace {

using json = nlohmann::json;

void require_object(const json& doc, const std::string& where,
                    std::initializer_list<std::string_view> allowed) {
  if (!doc.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown field '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& doc, const char* key, T& out, const std::string& where) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

double parse_double(std::string_view text, std::string_view key) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("backend option '" + std::string(key) +
                      "' needs a number, got '" + std::string(text) + "'");
  }
  return value;
}

uint64_t parse_uint(std::string_view text, std::string_view key) {
  uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("backend option '" + std::string(key) +
                      "' needs a non-negative integer, got '" +
                      std::string(text) + "'");
  }
  return value;
}

}  // namespace

BackendSpec parse_backend_spec(const std::string& text) {
  const auto first = text.find(':');
  if (first == std::string::npos || text.substr(0, first) != "synthetic") {
    throw ConfigError("unknown backend '" + text +
                      "' (expected synthetic:<cpu_like|npu_like|custom>[:opts])");
  }
  const auto second = text.find(':', first + 1);
  const std::string kind = text.substr(first + 1, second == std::string::npos
                                                      ? std::string::npos
                                                      : second - first - 1);
  const std::string opts =
      second == std::string::npos ? std::string() : text.substr(second + 1);

  BackendSpec spec;
  if (kind == "cpu_like") {
    spec.preset = BackendPreset::CpuLike;
  } else if (kind == "npu_like") {
    spec.preset = BackendPreset::NpuLike;
  } else if (kind != "custom") {
    throw ConfigError("unknown synthetic backend preset '" + kind + "'");
  }
  if (spec.preset) spec.params = preset_params(*spec.preset, 0);

  bool have_alpha = false, have_beta = false, have_gamma = false;
  std::string_view rest = opts;
  while (!rest.empty()) {
    auto comma = rest.find(',');
    std::string_view item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view() : rest.substr(comma + 1);
    auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("backend option '" + std::string(item) + "' lacks '='");
    }
    auto key = item.substr(0, eq);
    auto value = item.substr(eq + 1);
    if (key == "seed") {
      spec.params.seed = parse_uint(value, key);
    } else if (key == "noise") {
      spec.params.noise_rel = parse_double(value, key);
    } else if (key == "v" && !spec.preset) {
      const uint64_t v = parse_uint(value, key);
      if (v < 1 || v > 4096) throw ConfigError("vector width must be in [1, 4096]");
      spec.params.vector_width = static_cast<int>(v);
    } else if (key == "alpha" && !spec.preset) {
      spec.params.defaults.alpha = parse_double(value, key);
      have_alpha = true;
    } else if (key == "beta" && !spec.preset) {
      spec.params.defaults.beta = parse_double(value, key);
      have_beta = true;
    } else if (key == "gamma" && !spec.preset) {
      spec.params.defaults.gamma = parse_double(value, key);
      have_gamma = true;
    } else {
      throw ConfigError("unsupported backend option '" + std::string(key) +
                        "' for synthetic:" + kind);
    }
  }
  if (!spec.preset) {
    if (!have_alpha || !have_beta || !have_gamma) {
      throw ConfigError("synthetic:custom needs alpha, beta and gamma");
    }
    spec.params.name = "custom";
  }
  if (spec.params.noise_rel < 0.0 || spec.params.noise_rel > 0.05) {
    throw ConfigError("noise must lie in [0, 0.05]");
  }
  return spec;
}

std::unique_ptr<Backend> make_backend(const BackendSpec& spec,
                                      const NetworkSpec& architecture) {
  if (spec.preset) {
    SyntheticBackendParams params =
        preset_params(*spec.preset, spec.params.seed, architecture);
    params.noise_rel = spec.params.noise_rel;
    return synthetic_backend(std::move(params), architecture);
  }
  return synthetic_backend(spec.params, architecture);
}

void RunConfig::override_seed(uint64_t value) {
  seed = value;
  dataset.seed = value;
}

nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json doc;
  doc["learning_rate"] = cfg.learning_rate;
  doc["decay"] = cfg.decay;
  doc["epochs"] = cfg.epochs;
  doc["batch_size"] = cfg.batch_size;
  doc["rmsprop_rho"] = cfg.rmsprop_rho;
  doc["rmsprop_eps"] = cfg.rmsprop_eps;
  return doc;
}

TrainConfig train_config_from_json(const json& doc, const TrainConfig& defaults) {
  require_object(doc, "training config",
                 {"learning_rate", "decay", "epochs", "batch_size",
                  "rmsprop_rho", "rmsprop_eps"});
  TrainConfig cfg = defaults;
  read(doc, "learning_rate", cfg.learning_rate, "training config");
  read(doc, "decay", cfg.decay, "training config");
  read(doc, "epochs", cfg.epochs, "training config");
  read(doc, "batch_size", cfg.batch_size, "training config");
  read(doc, "rmsprop_rho", cfg.rmsprop_rho, "training config");
  read(doc, "rmsprop_eps", cfg.rmsprop_eps, "training config");
  cfg.check();
  return cfg;
}

RunConfig run_config_from_json(const json& doc) {
  require_object(doc, "config",
                 {"architecture", "num_classes", "dataset", "backend", "profile",
                  "channel_stride", "seed", "pretrain", "search", "output_dir"});
  RunConfig cfg;
  read(doc, "architecture", cfg.architecture, "config");
  read(doc, "num_classes", cfg.num_classes, "config");
  read(doc, "backend", cfg.backend, "config");
  read(doc, "channel_stride", cfg.channel_stride, "config");
  read(doc, "seed", cfg.seed, "config");
  read(doc, "output_dir", cfg.output_dir, "config");
  if (auto it = doc.find("profile"); it != doc.end() && !it->is_null()) {
    read(doc, "profile", cfg.profile, "config");
  }
  if (auto it = doc.find("dataset"); it != doc.end()) {
    require_object(*it, "dataset", {"train_size", "val_size", "seed", "image_size"});
    read(*it, "train_size", cfg.dataset.train_size, "dataset");
    read(*it, "val_size", cfg.dataset.val_size, "dataset");
    read(*it, "image_size", cfg.dataset.image_size, "dataset");
    if (auto s = it->find("seed"); s != it->end() && !s->is_null()) {
      uint64_t seed = 0;
      read(*it, "seed", seed, "dataset");
      cfg.dataset.seed = seed;
    }
  }
  if (auto it = doc.find("pretrain"); it != doc.end()) {
    cfg.pretrain = train_config_from_json(*it, cfg.pretrain);
  }
  if (auto it = doc.find("search"); it != doc.end()) {
    require_object(*it, "search",
                   {"t_final", "n_iterations", "decay", "min_filters",
                    "finetune", "retrain"});
    read(*it, "t_final", cfg.search.t_final, "search");
    read(*it, "n_iterations", cfg.search.n_iterations, "search");
    read(*it, "decay", cfg.search.decay, "search");
    read(*it, "min_filters", cfg.search.min_filters, "search");
    if (auto f = it->find("finetune"); f != it->end()) {
      cfg.search.finetune = train_config_from_json(*f, cfg.search.finetune);
    }
    if (auto r = it->find("retrain"); r != it->end()) {
      cfg.search.retrain = train_config_from_json(*r, cfg.search.retrain);
    }
  }

  if (cfg.architecture != "micro_mobilenet" && cfg.architecture != "mobilenet_v2") {
    throw ConfigError("architecture must be micro_mobilenet or mobilenet_v2");
  }
  if (cfg.channel_stride < 1) throw ConfigError("channel_stride must be >= 1");
  if (cfg.dataset.train_size < 1 || cfg.dataset.val_size < 1) {
    throw ConfigError("dataset sizes must be positive");
  }
  cfg.search.check();
  cfg.pretrain.check();
  parse_backend_spec(cfg.backend);
  architecture_spec(cfg);
  return cfg;
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  nlohmann::ordered_json doc;
  doc["architecture"] = cfg.architecture;
  doc["num_classes"] = cfg.num_classes;
  nlohmann::ordered_json data;
  data["train_size"] = cfg.dataset.train_size;
  data["val_size"] = cfg.dataset.val_size;
  if (cfg.dataset.seed) {
    data["seed"] = *cfg.dataset.seed;
  } else {
    data["seed"] = nullptr;
  }
  data["image_size"] = cfg.dataset.image_size;
  doc["dataset"] = std::move(data);
  doc["backend"] = cfg.backend;
  if (cfg.profile.empty()) {
    doc["profile"] = nullptr;
  } else {
    doc["profile"] = cfg.profile;
  }
  doc["channel_stride"] = cfg.channel_stride;
  doc["seed"] = cfg.seed;
  doc["pretrain"] = to_json(cfg.pretrain);
  nlohmann::ordered_json search;
  search["t_final"] = cfg.search.t_final;
  search["n_iterations"] = cfg.search.n_iterations;
  search["decay"] = cfg.search.decay;
  search["min_filters"] = cfg.search.min_filters;
  search["finetune"] = to_json(cfg.search.finetune);
  search["retrain"] = to_json(cfg.search.retrain);
  doc["search"] = std::move(search);
  doc["output_dir"] = cfg.output_dir;
  return doc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc);
}

NetworkSpec architecture_spec(const std::string& name, int num_classes,
                              int image_size) {
  if (name == "micro_mobilenet") {
    if (image_size != 12) {
      throw ConfigError("micro_mobilenet expects 12x12 images");
    }
    return micro_mobilenet_spec(num_classes);
  }
  if (name == "mobilenet_v2") {
    return mobilenet_v2_spec(num_classes, {3, image_size, image_size});
  }
  throw ConfigError("unknown architecture '" + name + "'");
}

NetworkSpec architecture_spec(const RunConfig& cfg) {
  return architecture_spec(cfg.architecture, cfg.num_classes,
                           cfg.dataset.image_size);
}

DatasetPair make_dataset(const RunConfig& cfg) {
  return synthetic_dataset(cfg.num_classes, cfg.dataset.train_size,
                           cfg.dataset.val_size, cfg.dataset_seed(),
                           cfg.dataset.image_size);
}

SearchConfig effective_search(const RunConfig& cfg) {
  SearchConfig search = cfg.search;
  search.seed = cfg.seed;
  return search;
}

TrainConfig effective_pretrain(const RunConfig& cfg) {
  TrainConfig pretrain = cfg.pretrain;
  pretrain.seed = derive_seed({cfg.seed, 0x7072});
  return pretrain;
}

uint64_t model_init_seed(const RunConfig& cfg) {
  return derive_seed({cfg.seed, 0x696e});
}

}  // namespace compactnet::cli

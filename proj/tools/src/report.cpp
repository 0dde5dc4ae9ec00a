#include "compactnet_cli/report.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "compactnet/errors.hpp"

namespace compactnet::cli {

namespace {

using ojson = nlohmann::ordered_json;

std::string kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::Bottleneck: return "bottleneck";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Classifier: return "classifier";
  }
  return "?";
}

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, value);
  return buf;
}

ojson layer_rows(const NetworkSpec& before, const NetworkSpec& after) {
  ojson rows = ojson::array();
  for (const auto& layer : before.layers) {
    if (!layer.trimmable) continue;
    ojson row;
    row["slot"] = layer.slot_id;
    row["kind"] = kind_name(layer.kind);
    row["filters_before"] = layer.out_channels;
    row["filters_after"] = after.layer(layer.slot_id).out_channels;
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// The run's location is not part of its result.
ojson config_echo(const RunConfig& cfg) {
  ojson doc = to_json(cfg);
  doc.erase("output_dir");
  return doc;
}

}  // namespace

ojson build_report(const RunConfig& cfg, const PlatformProfile& profile,
                   const Model& pretrained, const SearchResult& result) {
  const SearchLog& log = result.log;
  ojson doc;
  doc["tool"] = {{"name", "compactnet"}, {"version", kToolVersion}};
  doc["config"] = config_echo(cfg);
  doc["platform"] = profile.platform_name;
  doc["architecture"] = cfg.architecture;
  doc["target_speedup"] = cfg.search.t_final;
  doc["achieved_speedup"] =
      log.schedule.original_latency_us / log.final_latency_us;
  doc["original_latency_us"] = log.schedule.original_latency_us;
  doc["final_latency_us"] = log.final_latency_us;
  doc["pretrained_accuracy"] = log.pretrained_accuracy;
  doc["final_accuracy"] = log.final_accuracy;
  doc["layers"] = layer_rows(pretrained.spec, result.model.spec);

  const auto& s = log.schedule;
  ojson sched;
  sched["increments"] = s.increments;
  sched["cumulative_factors"] = s.cumulative_factors;
  sched["latency_budgets_us"] = s.latency_budgets;
  const double raw_sum =
      std::accumulate(s.raw_subtargets.begin(), s.raw_subtargets.end(), 0.0);
  sched["raw"] = {{"t_init", s.t_init},
                  {"subtargets", s.raw_subtargets},
                  {"sum", raw_sum},
                  {"one_plus_sum", 1.0 + raw_sum}};
  doc["schedule"] = std::move(sched);
  doc["search_log"] = to_json(log);
  return doc;
}

std::string render_markdown(const ojson& report) {
  std::ostringstream md;
  md << "# compactnet run report\n\n";
  md << "- platform: `" << report["platform"].get<std::string>() << "`\n";
  md << "- architecture: " << report["architecture"].get<std::string>() << "\n";
  md << "- speedup: " << fmt("%.4f", report["achieved_speedup"].get<double>())
     << " (target " << fmt("%.4f", report["target_speedup"].get<double>()) << ")\n";
  md << "- latency: " << fmt("%.3f", report["original_latency_us"].get<double>())
     << " us -> " << fmt("%.3f", report["final_latency_us"].get<double>()) << " us\n";
  md << "- accuracy: " << fmt("%.4f", report["pretrained_accuracy"].get<double>())
     << " -> " << fmt("%.4f", report["final_accuracy"].get<double>()) << "\n";
  md << "- tool version: " << report["tool"]["version"].get<std::string>() << "\n\n";

  md << "## Filters per layer\n\n| slot | kind | before | after |\n|---:|---|---:|---:|\n";
  for (const auto& row : report["layers"]) {
    md << "| " << row["slot"].get<int>() << " | " << row["kind"].get<std::string>()
       << " | " << row["filters_before"].get<int>() << " | "
       << row["filters_after"].get<int>() << " |\n";
  }

  md << "\n## Schedule\n\n| iter | increment | cumulative | budget (us) | raw sub-target |\n"
        "|---:|---:|---:|---:|---:|\n";
  const auto& sched = report["schedule"];
  for (size_t i = 0; i < sched["increments"].size(); ++i) {
    md << "| " << i << " | " << fmt("%.5f", sched["increments"][i].get<double>())
       << " | " << fmt("%.5f", sched["cumulative_factors"][i].get<double>())
       << " | " << fmt("%.3f", sched["latency_budgets_us"][i].get<double>())
       << " | " << fmt("%.5f", sched["raw"]["subtargets"][i].get<double>()) << " |\n";
  }
  md << "\nraw t_init " << fmt("%.5f", sched["raw"]["t_init"].get<double>())
     << ", raw sum " << fmt("%.5f", sched["raw"]["sum"].get<double>())
     << ", 1 + raw sum " << fmt("%.5f", sched["raw"]["one_plus_sum"].get<double>())
     << "\n";

  md << "\n## Iterations\n\n| iter | trimmed slot | latency (us) | budget (us) | accuracy | filters |\n"
        "|---:|---:|---:|---:|---:|---|\n";
  for (const auto& it : report["search_log"]["iterations"]) {
    std::string counts;
    for (const auto& c : it["filter_counts"]) {
      if (!counts.empty()) counts += " ";
      counts += std::to_string(c.get<int>());
    }
    md << "| " << it["iteration"].get<int>() << " | " << it["selected_slot"].get<int>()
       << " | " << fmt("%.3f", it["latency_us"].get<double>()) << " | "
       << fmt("%.3f", it["budget_us"].get<double>()) << " | "
       << fmt("%.4f", it["accuracy"].get<double>()) << " | " << counts << " |\n";
  }
  return md.str();
}

std::vector<std::string> verify_run(const std::filesystem::path& run_dir) {
  const auto report = load_json(run_dir / "report.json");
  const RunConfig cfg = run_config_from_json(load_json(run_dir / "config.json"));
  const PlatformProfile profile = read_profile(run_dir / "profile.csv");
  const Model pretrained = load_checkpoint(run_dir / "pretrained");
  const Model final_model = load_checkpoint(run_dir / "final");
  const DatasetPair data = make_dataset(cfg);

  const double original = simulate(profile, pretrained.spec);
  const double final_latency = simulate(profile, final_model.spec);

  std::vector<std::string> problems;
  auto check = [&](const char* key, const nlohmann::json& expected) {
    auto it = report.find(key);
    if (it == report.end()) {
      problems.push_back(std::string(key) + ": missing from report.json");
    } else if (*it != expected) {
      problems.push_back(std::string(key) + ": report says " + it->dump() +
                         ", recomputed " + expected.dump());
    }
  };
  check("platform", profile.platform_name);
  check("original_latency_us", original);
  check("final_latency_us", final_latency);
  check("achieved_speedup", original / final_latency);
  check("pretrained_accuracy", evaluate(pretrained, data.validation));
  check("final_accuracy", evaluate(final_model, data.validation));
  check("layers", nlohmann::json(layer_rows(pretrained.spec, final_model.spec)));
  check("config", nlohmann::json(config_echo(cfg)));
  if (auto it = report.find("achieved_speedup");
      it != report.end() && it->is_number() &&
      it->get<double>() < cfg.search.t_final * (1.0 - 1e-12)) {
    problems.push_back("achieved_speedup is below the configured target");
  }
  return problems;
}

ojson cross_report_json(const CrossReport& report) { return to_json(report); }

std::string render_cross_markdown(const CrossReport& report) {
  std::ostringstream md;
  md << "# Cross-platform exchange\n\n";
  md << "| optimized for \\ timed on | " << report.names[0] << " | "
     << report.names[1] << " |\n|---|---:|---:|\n";
  for (int p = 0; p < 2; ++p) {
    md << "| " << report.names[p] << " | " << fmt("%.4f", report.speedup[p][0])
       << " | " << fmt("%.4f", report.speedup[p][1]) << " |\n";
  }
  md << "\n## Filters per trimmable layer\n\n";
  for (int p = 0; p < 2; ++p) {
    md << "- " << report.names[p] << ":";
    for (int c : report.filters[p]) md << " " << c;
    md << " (accuracy " << fmt("%.4f", report.accuracy[p]) << ")\n";
  }
  return md.str();
}

}  // namespace compactnet::cli

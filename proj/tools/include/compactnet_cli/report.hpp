#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compactnet/search.hpp"
#include "compactnet_cli/run_config.hpp"

namespace compactnet::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Everything except "metadata" is a pure function of the run's inputs.
nlohmann::ordered_json build_report(const RunConfig& cfg,
                                    const PlatformProfile& profile,
                                    const Model& pretrained,
                                    const SearchResult& result);

std::string render_markdown(const nlohmann::ordered_json& report);

// Recomputes the report's numbers from the run directory's checkpoints and
// profile. Returns one line per mismatch; empty means verified.
std::vector<std::string> verify_run(const std::filesystem::path& run_dir);

nlohmann::ordered_json cross_report_json(const CrossReport& report);
std::string render_cross_markdown(const CrossReport& report);

}  // namespace compactnet::cli

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>

#include <json.hpp>

#include "cfkin/pipeline.hpp"

namespace cfkin::report {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Six significant digits, as emitted in CSV cells.
std::string format6(double x);
/// JSON number rounded to six significant digits; non-finite values become strings.
nlohmann::ordered_json number6(double x);

/// Bundle contents keyed by file name, run_manifest.json included.
using Bundle = std::map<std::string, std::string>;

Bundle build_bundle(const pipeline::Collected& collected, const pipeline::Analysis& analysis,
                    const pipeline::PipelineConfig& config, bool census_only = false);

/// Throws ConfigError unless `out` can be created or replaced.
void check_writable(const std::filesystem::path& out);

/// Writes into a sibling temporary directory, then renames it over `out`. A
/// previous bundle at `out` is replaced; any other existing content is refused.
void write_bundle(const Bundle& bundle, const std::filesystem::path& out);

nlohmann::json event_to_json(const events::DecelerationEvent& event);
events::DecelerationEvent event_from_json(const nlohmann::json& j);

/// Full-precision stage outputs consumed by the `report` verb.
nlohmann::json intermediates_to_json(const pipeline::Collected& collected, const pipeline::PipelineConfig& config);
std::pair<pipeline::Collected, pipeline::PipelineConfig> intermediates_from_json(const nlohmann::json& j);

}  // namespace cfkin::report

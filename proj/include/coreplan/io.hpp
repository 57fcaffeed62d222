#pragma once

// JSON and CSV persistence for instances, configs, results and traces, plus
// the instance hash that ties run artifacts to the instance they came from.

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "coreplan/features.hpp"
#include "coreplan/mdp.hpp"
#include "coreplan/planner.hpp"

namespace coreplan::io {

using Json = nlohmann::json;

/// "<semver>+<git describe>" of the build.
std::string version_string();

Json to_json(const Mdp& mdp);
Mdp mdp_from_json(const Json& j);

Json to_json(const FeatureMap& phi);
FeatureMap features_from_json(const Json& j);

/// Only core_indices and interp are stored; the residual is recomputed on load.
Json to_json(const CoreSet& core);
CoreSet coreset_from_json(const Json& j, const FeatureMap& phi);

Json to_json(const LinearMdpWitness& w);
LinearMdpWitness witness_from_json(const Json& j);

Json to_json(const PlannerConfig& cfg);
PlannerConfig config_from_json(const Json& j);

/// 16 hex digits of FNV-1a over the compact dump of {mdp, features, coreset}.
std::string instance_hash(const Mdp& mdp, const FeatureMap& phi, const CoreSet& core);

/// {"version", "config", "instance_hash"}.
Json make_meta(const Json& config, const std::string& hash);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

/// Comment line "# meta <json>", a header "t,lambda_0..,theta_0..", then one
/// row per recorded round with values printed to round-trip precision.
void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace, const Json& meta);

struct LoadedTrace {
    RunTrace trace;
    Json meta;
};

LoadedTrace read_trace_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

/// An instance directory: mdp.json, features.json, coreset.json and an
/// optional witness.json.
struct InstanceFiles {
    Mdp mdp;
    FeatureMap features;
    CoreSet core;
    std::optional<LinearMdpWitness> witness;
    std::string hash;
};

/// Loads and validates the instance; throws IntegrityError when the hash
/// embedded in any file disagrees with the recomputed one.
InstanceFiles load_instance(const std::filesystem::path& dir);

void save_instance(const std::filesystem::path& dir, const LinearMdpInstance& inst, const Json& config);

}  // namespace coreplan::io

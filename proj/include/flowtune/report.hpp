#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "flowtune/agent.hpp"
#include "flowtune/evaluator.hpp"
#include "flowtune/metrics.hpp"
#include "flowtune/param_space.hpp"
#include "flowtune/retrieval.hpp"

namespace flowtune {

/// Parsed run configuration (one JSON document with sections
/// {space, objective, evaluator, loop, retrieval, backend}).
struct RunConfig {
    ParamSpace space;
    Objective objective;
    EvaluatorConfig evaluator;
    SyntheticProfile profile;
    LoopConfig loop;
    std::string backend_kind = "scripted"; // scripted | scripted_direct | http
    std::string platform;
    std::string circuit;
    nlohmann::json raw; // verbatim snapshot for the manifest

    static RunConfig from_json(const nlohmann::json& j,
                               const BaselineTable* baselines = nullptr);
    static RunConfig from_file(const std::filesystem::path& path,
                               const BaselineTable* baselines = nullptr);
};

struct RunManifest {
    nlohmann::json config_snapshot;
    std::uint64_t seed = 0;
    std::string backend_id;
    std::string started_at;
    std::string ended_at;
    std::map<std::string, std::string> artifact_paths;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

struct TuneOutcome {
    FinalReport report;
    std::filesystem::path run_dir;
    int exit_status = 0;
};

/// Executes a full tuning run and writes manifest, iteration records,
/// archives and the final report under out_dir.
TuneOutcome run_tune(const RunConfig& config, const std::filesystem::path& out_dir,
                     ProviderClient* provider_override = nullptr);

/// Re-executes the decision stages of a logged run against its caches; zero
/// provider network calls. Throws ReplayDivergenceError on any mismatch.
/// Returns the attempted-network-call count observed (always 0 on success).
int run_replay(const std::filesystem::path& run_dir);

/// Runs the evaluator once at default parameters and writes a baseline JSON
/// document usable by the normalization arithmetic.
Baseline run_baseline(const RunConfig& config, const std::filesystem::path& out_file);

/// CSV reports over a finished run directory.
void write_trajectory_csv(const std::filesystem::path& run_dir, std::ostream& out);
void write_correlation_csv(const std::filesystem::path& run_dir, std::ostream& out);
void write_pareto_csv(const std::filesystem::path& run_dir, std::ostream& out);

/// Nondominated (minimize, minimize) pairs, preserving input order.
std::vector<std::pair<double, double>> pareto_front_min(
    const std::vector<std::pair<double, double>>& points);

} // namespace flowtune

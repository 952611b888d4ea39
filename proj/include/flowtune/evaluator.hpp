#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "flowtune/metrics.hpp"
#include "flowtune/param_space.hpp"

namespace flowtune {

enum class EvaluatorKind {
    Synthetic,
    ExternalCommand,
    /// Replay mode: results come from a previous run's archive; requested
    /// points must match the archived ones exactly.
    ArchiveReplay,
};

struct EvaluatorConfig {
    EvaluatorKind kind = EvaluatorKind::Synthetic;
    double timeout_s = 30.0;
    std::filesystem::path workdir;
    int parallel_k = 25;

    // external command adapter
    std::string command_template;
    /// param name -> flow variable name; unmapped names default to UPPER_SNAKE.
    std::map<std::string, std::string> param_key_map;
    /// canonical metrics key -> key actually present in the metrics file.
    std::map<std::string, std::string> metrics_key_map;

    // synthetic evaluator
    std::uint64_t synthetic_seed = 0;

    void validate() const;
};

/// Seconds between the termination signal and the hard kill, letting an
/// external flow flush partial metric logs.
inline constexpr double kTimeoutGraceSeconds = 5.0;

/// Landscape anchors for the synthetic evaluator. The CTS anchors are tied to
/// the generator's surrogate ratios so surrogate-normalized losses stay
/// unbiased; the landscape shape is derived from landscape_key, so renaming a
/// circuit label need not change the landscape.
struct SyntheticProfile {
    Baseline anchors;
    std::string landscape_key;

    static SyntheticProfile for_circuit(const Baseline& baseline);
};

/// CTS surrogate generator ratios (WL' ~ 0.92 WL, ECP' ~ 0.97 ECP).
inline constexpr double kCtsWlRatio = 0.92;
inline constexpr double kCtsEcpRatio = 0.97;

struct JobResult {
    std::string run_id;
    int iteration = 0;
    ParamVector params;
    MetricRecord metrics;
    double wall_time_s = 0.0;
    std::filesystem::path log_path;

    nlohmann::json to_json() const;
    static JobResult from_json(const nlohmann::json& j);
};

/// Deterministic synthetic flow model for a parameter point.
MetricRecord synthetic_evaluate(const ParamVector& point, const ParamSpace& space,
                                const SyntheticProfile& profile, std::uint64_t seed);

/// Noise-free model means (no timeout channel); the brute-force oracle target.
MetricRecord synthetic_expected(const ParamVector& point, const ParamSpace& space,
                                const SyntheticProfile& profile);

/// Probability that the routed stages of a run at this clock period time out.
double synthetic_timeout_probability(const ParamVector& point, const ParamSpace& space,
                                     const SyntheticProfile& profile);

struct BatchStats {
    int max_in_flight = 0;
    std::vector<std::filesystem::path> run_dirs;
};

class Evaluator {
public:
    Evaluator(EvaluatorConfig config, ParamSpace space,
              std::optional<SyntheticProfile> profile = std::nullopt);

    /// One JobResult per point, batch order preserved, at most parallel_k jobs
    /// in flight. A spawn failure yields status=failed for that job only.
    std::vector<JobResult> run_batch(const std::vector<ParamVector>& points, int iteration,
                                     BatchStats* stats = nullptr) const;

    JobResult evaluate_one(const ParamVector& point, int iteration, int index) const;

    const EvaluatorConfig& config() const { return config_; }
    const ParamSpace& space() const { return space_; }
    const SyntheticProfile& profile() const;

private:
    EvaluatorConfig config_;
    ParamSpace space_;
    std::optional<SyntheticProfile> profile_;
};

/// Writes the override + constraint files, runs the command with RUN_DIR and
/// TIMEOUT_S in its environment, and parses the canonical metrics file.
JobResult external_prepare_and_invoke(const ParamVector& point, const EvaluatorConfig& config,
                                      const ParamSpace& space, int iteration, int index);

/// Default flow-variable name for a parameter ("Core Utilization" -> CORE_UTILIZATION).
std::string default_flow_variable_name(std::string_view param_name);

/// Parses a canonical metrics JSON object into a MetricRecord
/// (keys route__wirelength, timing__ecp, cts__wirelength, cts__ecp,
/// design__area, design__instance_count, power__total).
MetricRecord parse_canonical_metrics(const nlohmann::json& j,
                                     const std::map<std::string, std::string>& key_map);

/// Moves the iteration's run directories into an immutable archive directory
/// and returns its path. Re-archiving the same iteration is an error.
std::filesystem::path archive_iteration(int iteration, const std::filesystem::path& workdir);

/// Run directory for (iteration, index) under workdir.
std::filesystem::path run_directory(const std::filesystem::path& workdir, int iteration,
                                    int index);

} // namespace flowtune

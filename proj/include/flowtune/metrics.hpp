#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace flowtune {

enum class MetricId { Wl, Ecp, CtsWl, CtsEcp, Area, InstanceCount, Power, Pdp };

const char* metric_name(MetricId id);
MetricId metric_from_name(std::string_view name);
/// CTS-stage surrogate for a routed metric, if one exists (WL -> WL', ECP -> ECP').
std::optional<MetricId> surrogate_of(MetricId id);

enum class RunStatus { Complete, Timeout, Failed };

const char* run_status_name(RunStatus s);
RunStatus run_status_from_name(std::string_view name);

/// One flow run's outcome. Routed metrics may be absent after a timeout;
/// CTS surrogates usually survive.
struct MetricRecord {
    std::optional<double> wl;             // routed wirelength (um)
    std::optional<double> ecp;            // effective clock period (ns or ps)
    std::optional<double> cts_wl;         // CTS-stage wirelength surrogate
    std::optional<double> cts_ecp;        // CTS-stage clock period surrogate
    std::optional<double> area;           // um^2
    std::optional<double> instance_count;
    std::optional<double> power;          // W
    std::optional<double> pdp;            // power x ECP, derived
    RunStatus status = RunStatus::Failed;

    std::optional<double> get(MetricId id) const;
    void set(MetricId id, double value);

    /// Throws DomainError on invariant violations (nonpositive values,
    /// complete without wl/ecp, pdp mismatch beyond 1e-6 relative).
    void validate() const;

    nlohmann::json to_json() const;
    static MetricRecord from_json(const nlohmann::json& j);
};

/// Fills pdp = power x ecp when both are present; recomputation mismatch
/// beyond 1e-6 relative marks the record failed. Idempotent.
MetricRecord derive_pdp(MetricRecord record);

/// Default-flow metric anchors used for normalization.
struct Baseline {
    std::string circuit;
    std::string platform;
    double wl_alpha = 1.0;
    double ecp_alpha = 1.0;
    double cts_wl_alpha = 1.0;
    double cts_ecp_alpha = 1.0;
    double area_alpha = 1.0;
    double count_alpha = 1.0;
    double power_alpha = 1.0;
    double pdp_alpha = 1.0;

    double alpha_for(MetricId id) const;
    void validate() const; // all values > 0

    nlohmann::json to_json() const;
    static Baseline from_json(const nlohmann::json& j);
};

/// Baselines keyed by (platform, circuit); mirrors the default-flow table.
class BaselineTable {
public:
    /// The six built-in (SKY130HD, ASAP7) x (IBEX, AES, JPEG) profiles.
    static BaselineTable builtin_defaults();
    static BaselineTable from_json(const nlohmann::json& j);
    static BaselineTable from_json_file(const std::filesystem::path& path);

    const Baseline* find(std::string_view platform, std::string_view circuit) const;
    const std::vector<Baseline>& all() const { return entries_; }
    void add(Baseline b);
    nlohmann::json to_json() const;

private:
    std::vector<Baseline> entries_;
};

struct Constraint {
    MetricId metric = MetricId::Area;
    double leeway_percent = 0.0; // maximum allowed worsening vs baseline, in percent
};

/// Scoring rule. Constrained wraps a non-constrained target objective.
struct Objective {
    enum class Kind { Single, WeightedSum, CoOptimize, Constrained };

    Kind kind = Kind::Single;
    MetricId metric = MetricId::Wl;                        // Single
    std::vector<std::pair<MetricId, double>> weights;      // WeightedSum
    std::vector<Constraint> constraints;                   // Constrained
    std::shared_ptr<const Objective> target;               // Constrained
    Baseline baseline;

    static Objective single(MetricId metric, Baseline baseline);
    static Objective weighted_sum(std::vector<std::pair<MetricId, double>> weights,
                                  Baseline baseline);
    static Objective co_optimize(Baseline baseline);
    static Objective constrained(Objective target, std::vector<Constraint> constraints);

    void validate() const;

    nlohmann::json to_json() const;
    static Objective from_json(const nlohmann::json& j, const BaselineTable* baselines = nullptr);
};

/// Penalty added to the target value of constraint-violating candidates so
/// they stay in the dataset but never rank as the reported best.
inline constexpr double kConstraintPenalty = 10.0;

struct ObjectiveValue {
    double value = 0.0;
    bool surrogate_used = false;
    bool missing = true; // no usable signal; sorted after all non-missing values
};

/// Normalized loss under the objective, with per-term surrogate fallback
/// (WL -> WL', ECP -> ECP'). A term with neither routed nor surrogate value
/// makes the result missing. Throws ConfigError on nonpositive baselines.
ObjectiveValue normalized_loss(const MetricRecord& record, const Objective& objective);

enum class ConstraintState { Pass, Violation, Unverifiable };

struct ConstraintCheck {
    MetricId metric;
    double leeway_percent;
    std::optional<double> percent_change; // 100 * (value/baseline - 1)
    ConstraintState state;
};

struct ConstraintReport {
    std::vector<ConstraintCheck> checks;
    bool any_violation = false;
    std::vector<MetricId> violations;
    nlohmann::json to_json() const;
};

/// Percent-change check against leeway; metrics absent from the record are
/// flagged Unverifiable, not violations.
ConstraintReport check_constraints(const MetricRecord& record, const Baseline& baseline,
                                   const std::vector<Constraint>& constraints);

/// exp(mean(log values)); throws DomainError for nonpositive inputs.
double geometric_mean(std::span<const double> values);

/// 0.5-scaled co-optimization average used for reporting (the in-loop value
/// is the plain sum; the argmin is identical either way).
inline double co_optimize_report_average(double in_loop_sum) { return 0.5 * in_loop_sum; }

} // namespace flowtune

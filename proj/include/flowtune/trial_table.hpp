#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "flowtune/evaluator.hpp"
#include "flowtune/metrics.hpp"
#include "flowtune/param_space.hpp"

namespace flowtune {

struct TrialRow {
    int iteration = 0;
    ParamVector params;
    MetricRecord metrics;
    ObjectiveValue objective;
    bool surrogate_only = false;

    nlohmann::json to_json() const;
    static TrialRow from_json(const nlohmann::json& j);
};

/// Immutable collated dataset of all runs across iterations; the substrate
/// every tool operates on.
class TrialTable {
public:
    TrialTable() = default;
    TrialTable(ParamSpace space, Objective objective);

    const std::vector<TrialRow>& rows() const { return rows_; }
    const ParamSpace& space() const { return space_; }
    const Objective& objective() const { return objective_; }
    bool empty() const { return rows_.empty(); }
    std::size_t size() const { return rows_.size(); }

    /// Internal: appends a validated row (collate's implementation detail).
    void append_row(TrialRow row);

private:
    std::vector<TrialRow> rows_;
    ParamSpace space_;
    Objective objective_;
};

/// Appends one row per result whose objective has usable signal (routed or
/// surrogate); rows with neither are skipped. Prior rows are untouched.
TrialTable collate(const std::vector<JobResult>& results, const TrialTable& prior);

/// Row with the minimal non-missing objective; ties within 1e-9 prefer
/// non-surrogate rows. Null when the table is empty or all rows are missing.
const TrialRow* best_so_far(const TrialTable& table);

struct TrialMatrix {
    Eigen::MatrixXd X;                // n x d, unit-cube encoded in spec order
    Eigen::VectorXd y;                // objective values
    std::vector<bool> surrogate_mask; // per-row surrogate flag
};

/// Grid-encoded parameter coordinates scaled to [0,1] per dimension plus the
/// objective vector. Throws DomainError on an empty table.
TrialMatrix to_matrix(const TrialTable& table);

/// Line-delimited JSON persistence (one row per line).
void save_trials_ldjson(const TrialTable& table, const std::filesystem::path& path);
TrialTable load_trials_ldjson(const std::filesystem::path& path, ParamSpace space,
                              Objective objective);

} // namespace flowtune

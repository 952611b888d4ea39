#include "flowtune/trial_table.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"

namespace flowtune {

nlohmann::json TrialRow::to_json() const {
    nlohmann::json j{{"iteration", iteration},
                     {"params", params.to_json()},
                     {"metrics", metrics.to_json()},
                     {"surrogate_only", surrogate_only}};
    j["objective"] = nlohmann::json{{"missing", objective.missing},
                                    {"surrogate_used", objective.surrogate_used}};
    if (!objective.missing) j["objective"]["value"] = objective.value;
    return j;
}

TrialRow TrialRow::from_json(const nlohmann::json& j) {
    TrialRow r;
    r.iteration = j.at("iteration").get<int>();
    r.params = ParamVector::from_json(j.at("params"));
    r.metrics = MetricRecord::from_json(j.at("metrics"));
    r.surrogate_only = j.at("surrogate_only").get<bool>();
    const auto& o = j.at("objective");
    r.objective.missing = o.at("missing").get<bool>();
    r.objective.surrogate_used = o.at("surrogate_used").get<bool>();
    if (!r.objective.missing) r.objective.value = o.at("value").get<double>();
    return r;
}

TrialTable::TrialTable(ParamSpace space, Objective objective)
    : space_(std::move(space)), objective_(std::move(objective)) {}

void TrialTable::append_row(TrialRow row) {
    row.params.validate(space_);
    rows_.push_back(std::move(row));
}

namespace {

/// Routed target metrics of the active objective (what surrogate_only is
/// judged against).
std::vector<MetricId> routed_targets(const Objective& objective) {
    switch (objective.kind) {
    case Objective::Kind::Single: return {objective.metric};
    case Objective::Kind::CoOptimize: return {MetricId::Wl, MetricId::Ecp};
    case Objective::Kind::WeightedSum: {
        std::vector<MetricId> out;
        for (const auto& [m, w] : objective.weights) out.push_back(m);
        return out;
    }
    case Objective::Kind::Constrained: return routed_targets(*objective.target);
    }
    return {};
}

} // namespace

TrialTable collate(const std::vector<JobResult>& results, const TrialTable& prior) {
    TrialTable table = prior;
    const auto targets = routed_targets(table.objective());
    for (const auto& job : results) {
        if (job.metrics.status == RunStatus::Failed) continue;
        const auto value = normalized_loss(job.metrics, table.objective());
        if (value.missing) continue; // routed and surrogate signals both absent

        bool any_routed_absent = false;
        for (const auto m : targets)
            if (!job.metrics.get(m)) any_routed_absent = true;

        TrialRow row;
        row.iteration = job.iteration;
        row.params = job.params;
        row.metrics = job.metrics;
        row.objective = value;
        row.surrogate_only = any_routed_absent && value.surrogate_used;
        table.append_row(std::move(row));
    }
    return table;
}

const TrialRow* best_so_far(const TrialTable& table) {
    const TrialRow* best = nullptr;
    for (const auto& row : table.rows()) {
        if (row.objective.missing) continue;
        if (!best) {
            best = &row;
            continue;
        }
        const double delta = row.objective.value - best->objective.value;
        if (delta < -1e-9) {
            best = &row;
        } else if (std::abs(delta) <= 1e-9 && best->surrogate_only && !row.surrogate_only) {
            best = &row; // tie: prefer the routed measurement
        }
    }
    return best;
}

TrialMatrix to_matrix(const TrialTable& table) {
    if (table.empty()) throw DomainError("to_matrix on an empty table");
    const auto& space = table.space();
    const auto n = static_cast<Eigen::Index>(table.size());
    const auto d = static_cast<Eigen::Index>(space.size());

    TrialMatrix m;
    m.X.resize(n, d);
    m.y.resize(n);
    m.surrogate_mask.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = table.rows()[static_cast<std::size_t>(i)];
        const auto unit = to_unit_row(space, row.params);
        for (Eigen::Index j = 0; j < d; ++j) m.X(i, j) = unit[static_cast<std::size_t>(j)];
        m.y(i) = row.objective.value;
        m.surrogate_mask[static_cast<std::size_t>(i)] = row.surrogate_only;
    }
    return m;
}

void save_trials_ldjson(const TrialTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write trial table: " + path.string());
    for (const auto& row : table.rows()) out << row.to_json().dump() << "\n";
}

TrialTable load_trials_ldjson(const std::filesystem::path& path, ParamSpace space,
                              Objective objective) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read trial table: " + path.string());
    TrialTable table(std::move(space), std::move(objective));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        table.append_row(TrialRow::from_json(nlohmann::json::parse(line)));
    }
    return table;
}

} // namespace flowtune

#include "flowtune/metrics.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"

namespace flowtune {

namespace {

constexpr MetricId kAllMetrics[] = {MetricId::Wl,   MetricId::Ecp,           MetricId::CtsWl,
                                    MetricId::CtsEcp, MetricId::Area,        MetricId::InstanceCount,
                                    MetricId::Power,  MetricId::Pdp};

} // namespace

const char* metric_name(MetricId id) {
    switch (id) {
    case MetricId::Wl: return "wl";
    case MetricId::Ecp: return "ecp";
    case MetricId::CtsWl: return "cts_wl";
    case MetricId::CtsEcp: return "cts_ecp";
    case MetricId::Area: return "area";
    case MetricId::InstanceCount: return "instance_count";
    case MetricId::Power: return "power";
    case MetricId::Pdp: return "pdp";
    }
    return "unknown";
}

MetricId metric_from_name(std::string_view name) {
    for (MetricId id : kAllMetrics)
        if (name == metric_name(id)) return id;
    throw ConfigError("unknown metric: " + std::string(name));
}

std::optional<MetricId> surrogate_of(MetricId id) {
    if (id == MetricId::Wl) return MetricId::CtsWl;
    if (id == MetricId::Ecp) return MetricId::CtsEcp;
    return std::nullopt;
}

const char* run_status_name(RunStatus s) {
    switch (s) {
    case RunStatus::Complete: return "complete";
    case RunStatus::Timeout: return "timeout";
    case RunStatus::Failed: return "failed";
    }
    return "unknown";
}

RunStatus run_status_from_name(std::string_view name) {
    if (name == "complete") return RunStatus::Complete;
    if (name == "timeout") return RunStatus::Timeout;
    if (name == "failed") return RunStatus::Failed;
    throw ConfigError("unknown run status: " + std::string(name));
}

std::optional<double> MetricRecord::get(MetricId id) const {
    switch (id) {
    case MetricId::Wl: return wl;
    case MetricId::Ecp: return ecp;
    case MetricId::CtsWl: return cts_wl;
    case MetricId::CtsEcp: return cts_ecp;
    case MetricId::Area: return area;
    case MetricId::InstanceCount: return instance_count;
    case MetricId::Power: return power;
    case MetricId::Pdp: return pdp;
    }
    return std::nullopt;
}

void MetricRecord::set(MetricId id, double value) {
    switch (id) {
    case MetricId::Wl: wl = value; return;
    case MetricId::Ecp: ecp = value; return;
    case MetricId::CtsWl: cts_wl = value; return;
    case MetricId::CtsEcp: cts_ecp = value; return;
    case MetricId::Area: area = value; return;
    case MetricId::InstanceCount: instance_count = value; return;
    case MetricId::Power: power = value; return;
    case MetricId::Pdp: pdp = value; return;
    }
}

void MetricRecord::validate() const {
    for (MetricId id : kAllMetrics) {
        const auto v = get(id);
        if (v && *v <= 0.0)
            throw DomainError(std::string("metric ") + metric_name(id) + " must be positive");
    }
    if (status == RunStatus::Complete && (!wl || !ecp))
        throw DomainError("complete record requires wl and ecp");
    if (power && ecp && pdp) {
        const double expected = *power * *ecp;
        if (std::abs(*pdp - expected) > 1e-6 * std::abs(expected))
            throw DomainError("pdp inconsistent with power x ecp");
    }
}

nlohmann::json MetricRecord::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (MetricId id : kAllMetrics)
        if (const auto v = get(id)) j[metric_name(id)] = *v;
    j["status"] = run_status_name(status);
    return j;
}

MetricRecord MetricRecord::from_json(const nlohmann::json& j) {
    MetricRecord r;
    for (MetricId id : kAllMetrics)
        if (j.contains(metric_name(id))) r.set(id, j.at(metric_name(id)).get<double>());
    if (j.contains("status")) r.status = run_status_from_name(j.at("status").get<std::string>());
    return r;
}

MetricRecord derive_pdp(MetricRecord record) {
    if (record.power && record.ecp) {
        const double expected = *record.power * *record.ecp;
        if (record.pdp && std::abs(*record.pdp - expected) > 1e-6 * std::abs(expected)) {
            // log-parsing corruption guard
            record.status = RunStatus::Failed;
            return record;
        }
        record.pdp = expected;
    }
    return record;
}

double Baseline::alpha_for(MetricId id) const {
    switch (id) {
    case MetricId::Wl: return wl_alpha;
    case MetricId::Ecp: return ecp_alpha;
    case MetricId::CtsWl: return cts_wl_alpha;
    case MetricId::CtsEcp: return cts_ecp_alpha;
    case MetricId::Area: return area_alpha;
    case MetricId::InstanceCount: return count_alpha;
    case MetricId::Power: return power_alpha;
    case MetricId::Pdp: return pdp_alpha;
    }
    return 0.0;
}

void Baseline::validate() const {
    for (MetricId id : kAllMetrics)
        if (alpha_for(id) <= 0.0)
            throw ConfigError(std::string("baseline ") + metric_name(id) +
                              " must be positive (" + platform + "-" + circuit + ")");
}

nlohmann::json Baseline::to_json() const {
    return nlohmann::json{{"circuit", circuit},
                          {"platform", platform},
                          {"wl_alpha", wl_alpha},
                          {"ecp_alpha", ecp_alpha},
                          {"cts_wl_alpha", cts_wl_alpha},
                          {"cts_ecp_alpha", cts_ecp_alpha},
                          {"area_alpha", area_alpha},
                          {"count_alpha", count_alpha},
                          {"power_alpha", power_alpha},
                          {"pdp_alpha", pdp_alpha}};
}

Baseline Baseline::from_json(const nlohmann::json& j) {
    Baseline b;
    b.circuit = j.at("circuit").get<std::string>();
    b.platform = j.at("platform").get<std::string>();
    b.wl_alpha = j.at("wl_alpha").get<double>();
    b.ecp_alpha = j.at("ecp_alpha").get<double>();
    b.cts_wl_alpha = j.at("cts_wl_alpha").get<double>();
    b.cts_ecp_alpha = j.at("cts_ecp_alpha").get<double>();
    b.area_alpha = j.at("area_alpha").get<double>();
    b.count_alpha = j.at("count_alpha").get<double>();
    b.power_alpha = j.at("power_alpha").get<double>();
    b.pdp_alpha = j.at("pdp_alpha").get<double>();
    return b;
}

BaselineTable BaselineTable::builtin_defaults() {
    // Default-flow anchors: WL' ECP' WL ECP | Area Count Power PDP
    struct Row {
        const char* platform;
        const char* circuit;
        double cts_wl, cts_ecp, wl, ecp, area, count, power, pdp;
    };
    static const Row rows[] = {
        {"SKY130HD", "IBEX", 550963, 10.84, 808423, 11.54, 192784, 20944, 0.097, 1.12},
        {"ASAP7", "IBEX", 93005, 1308, 115285, 1361, 2729, 21831, 0.057, 77.58},
        {"SKY130HD", "AES", 428916, 5.34, 589825, 4.72, 122361, 18324, 0.411, 1.94},
        {"ASAP7", "AES", 61103, 432, 75438, 460, 2046, 17693, 0.149, 68.54},
        {"SKY130HD", "JPEG", 1199090, 8.00, 1374966, 7.73, 541327, 65670, 0.811, 6.27},
        {"ASAP7", "JPEG", 266510, 1096, 300326, 1148, 7904, 68287, 0.138, 158.42},
    };
    BaselineTable table;
    for (const auto& r : rows) {
        Baseline b;
        b.platform = r.platform;
        b.circuit = r.circuit;
        b.cts_wl_alpha = r.cts_wl;
        b.cts_ecp_alpha = r.cts_ecp;
        b.wl_alpha = r.wl;
        b.ecp_alpha = r.ecp;
        b.area_alpha = r.area;
        b.count_alpha = r.count;
        b.power_alpha = r.power;
        b.pdp_alpha = r.pdp;
        table.add(std::move(b));
    }
    return table;
}

BaselineTable BaselineTable::from_json(const nlohmann::json& j) {
    BaselineTable table;
    for (const auto& e : j.at("baselines")) table.add(Baseline::from_json(e));
    return table;
}

BaselineTable BaselineTable::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open baseline file: " + path.string());
    nlohmann::json j;
    in >> j;
    return from_json(j);
}

const Baseline* BaselineTable::find(std::string_view platform, std::string_view circuit) const {
    for (const auto& b : entries_)
        if (b.platform == platform && b.circuit == circuit) return &b;
    return nullptr;
}

void BaselineTable::add(Baseline b) {
    b.validate();
    entries_.push_back(std::move(b));
}

nlohmann::json BaselineTable::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : entries_) arr.push_back(b.to_json());
    return nlohmann::json{{"baselines", arr}};
}

Objective Objective::single(MetricId metric, Baseline baseline) {
    Objective o;
    o.kind = Kind::Single;
    o.metric = metric;
    o.baseline = std::move(baseline);
    return o;
}

Objective Objective::weighted_sum(std::vector<std::pair<MetricId, double>> weights,
                                  Baseline baseline) {
    Objective o;
    o.kind = Kind::WeightedSum;
    o.weights = std::move(weights);
    o.baseline = std::move(baseline);
    o.validate();
    return o;
}

Objective Objective::co_optimize(Baseline baseline) {
    Objective o;
    o.kind = Kind::CoOptimize;
    o.baseline = std::move(baseline);
    return o;
}

Objective Objective::constrained(Objective target, std::vector<Constraint> constraints) {
    if (target.kind == Kind::Constrained)
        throw ConfigError("constrained target must itself be non-constrained");
    Objective o;
    o.kind = Kind::Constrained;
    o.baseline = target.baseline;
    o.constraints = std::move(constraints);
    o.target = std::make_shared<const Objective>(std::move(target));
    o.validate();
    return o;
}

void Objective::validate() const {
    for (const auto& [m, w] : weights)
        if (w < 0.0) throw ConfigError("objective weights must be nonnegative");
    for (const auto& c : constraints)
        if (c.leeway_percent < 0.0) throw ConfigError("leeway_percent must be >= 0");
    if (kind == Kind::Constrained && (!target || target->kind == Kind::Constrained))
        throw ConfigError("constrained objective requires a non-constrained target");
}

nlohmann::json Objective::to_json() const {
    nlohmann::json j;
    switch (kind) {
    case Kind::Single:
        j["kind"] = "single";
        j["metric"] = metric_name(metric);
        break;
    case Kind::WeightedSum: {
        j["kind"] = "weighted_sum";
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [m, w] : weights)
            arr.push_back({{"metric", metric_name(m)}, {"weight", w}});
        j["weights"] = arr;
        break;
    }
    case Kind::CoOptimize:
        j["kind"] = "co_optimize";
        break;
    case Kind::Constrained: {
        j["kind"] = "constrained";
        j["target"] = target->to_json();
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : constraints)
            arr.push_back({{"metric", metric_name(c.metric)},
                           {"leeway_percent", c.leeway_percent}});
        j["constraints"] = arr;
        break;
    }
    }
    j["baseline"] = baseline.to_json();
    return j;
}

Objective Objective::from_json(const nlohmann::json& j, const BaselineTable* baselines) {
    Baseline b;
    if (j.contains("baseline")) {
        const auto& bj = j.at("baseline");
        if (bj.contains("wl_alpha")) {
            b = Baseline::from_json(bj);
        } else if (baselines) {
            const auto* found = baselines->find(bj.at("platform").get<std::string>(),
                                                bj.at("circuit").get<std::string>());
            if (!found) throw ConfigError("baseline not found for objective");
            b = *found;
        } else {
            throw ConfigError("objective baseline reference needs a baseline table");
        }
    }
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "single")
        return Objective::single(metric_from_name(j.at("metric").get<std::string>()), b);
    if (kind == "co_optimize") return Objective::co_optimize(b);
    if (kind == "weighted_sum") {
        std::vector<std::pair<MetricId, double>> weights;
        for (const auto& e : j.at("weights"))
            weights.emplace_back(metric_from_name(e.at("metric").get<std::string>()),
                                 e.at("weight").get<double>());
        return Objective::weighted_sum(std::move(weights), b);
    }
    if (kind == "constrained") {
        auto target = Objective::from_json(j.at("target"), baselines);
        if (!j.at("target").contains("baseline")) target.baseline = b;
        std::vector<Constraint> cs;
        for (const auto& e : j.at("constraints"))
            cs.push_back({metric_from_name(e.at("metric").get<std::string>()),
                          e.at("leeway_percent").get<double>()});
        return Objective::constrained(std::move(target), std::move(cs));
    }
    throw ConfigError("unknown objective kind: " + kind);
}

namespace {

struct TermValue {
    double normalized = 0.0;
    bool surrogate = false;
    bool available = false;
};

TermValue resolve_term(const MetricRecord& record, const Baseline& baseline, MetricId id) {
    TermValue t;
    const double alpha = baseline.alpha_for(id);
    if (alpha <= 0.0)
        throw ConfigError(std::string("nonpositive baseline for ") + metric_name(id));
    if (const auto v = record.get(id)) {
        t.normalized = *v / alpha;
        t.available = true;
        return t;
    }
    if (const auto s = surrogate_of(id)) {
        const double s_alpha = baseline.alpha_for(*s);
        if (s_alpha <= 0.0)
            throw ConfigError(std::string("nonpositive baseline for ") + metric_name(*s));
        if (const auto v = record.get(*s)) {
            t.normalized = *v / s_alpha;
            t.surrogate = true;
            t.available = true;
            return t;
        }
    }
    return t;
}

} // namespace

ObjectiveValue normalized_loss(const MetricRecord& record, const Objective& objective) {
    ObjectiveValue out;
    switch (objective.kind) {
    case Objective::Kind::Single: {
        const auto t = resolve_term(record, objective.baseline, objective.metric);
        if (!t.available) return out;
        out.value = t.normalized;
        out.surrogate_used = t.surrogate;
        out.missing = false;
        return out;
    }
    case Objective::Kind::CoOptimize: {
        const auto wl = resolve_term(record, objective.baseline, MetricId::Wl);
        const auto ecp = resolve_term(record, objective.baseline, MetricId::Ecp);
        if (!wl.available || !ecp.available) return out;
        out.value = wl.normalized + ecp.normalized;
        out.surrogate_used = wl.surrogate || ecp.surrogate;
        out.missing = false;
        return out;
    }
    case Objective::Kind::WeightedSum: {
        double sum = 0.0;
        bool any_surrogate = false;
        bool any_term = false;
        for (const auto& [m, w] : objective.weights) {
            const auto t = resolve_term(record, objective.baseline, m);
            if (!t.available) return out; // unusable: a weighted term has no signal
            sum += w * t.normalized;
            any_surrogate = any_surrogate || t.surrogate;
            any_term = true;
        }
        if (!any_term) return out;
        out.value = sum;
        out.surrogate_used = any_surrogate;
        out.missing = false;
        return out;
    }
    case Objective::Kind::Constrained: {
        auto inner = normalized_loss(record, *objective.target);
        if (inner.missing) return inner;
        const auto report =
            check_constraints(record, objective.baseline, objective.constraints);
        if (report.any_violation) inner.value += kConstraintPenalty;
        return inner;
    }
    }
    return out;
}

ConstraintReport check_constraints(const MetricRecord& record, const Baseline& baseline,
                                   const std::vector<Constraint>& constraints) {
    ConstraintReport report;
    for (const auto& c : constraints) {
        ConstraintCheck check;
        check.metric = c.metric;
        check.leeway_percent = c.leeway_percent;
        const auto v = record.get(c.metric);
        if (!v) {
            check.state = ConstraintState::Unverifiable;
        } else {
            const double alpha = baseline.alpha_for(c.metric);
            const double pc = 100.0 * (*v / alpha - 1.0);
            check.percent_change = pc;
            check.state = pc > c.leeway_percent ? ConstraintState::Violation
                                                : ConstraintState::Pass;
            if (check.state == ConstraintState::Violation) {
                report.any_violation = true;
                report.violations.push_back(c.metric);
            }
        }
        report.checks.push_back(check);
    }
    return report;
}

nlohmann::json ConstraintReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks) {
        nlohmann::json e{{"metric", metric_name(c.metric)},
                         {"leeway_percent", c.leeway_percent}};
        if (c.percent_change) e["percent_change"] = *c.percent_change;
        e["state"] = c.state == ConstraintState::Pass         ? "pass"
                     : c.state == ConstraintState::Violation ? "violation"
                                                             : "unverifiable";
        arr.push_back(e);
    }
    return nlohmann::json{{"checks", arr}, {"any_violation", any_violation}};
}

double geometric_mean(std::span<const double> values) {
    if (values.empty()) throw DomainError("geometric_mean of empty list");
    double log_sum = 0.0;
    for (double v : values) {
        if (v <= 0.0) throw DomainError("geometric_mean requires positive values");
        log_sum += std::log(v);
    }
    return std::exp(log_sum / static_cast<double>(values.size()));
}

} // namespace flowtune

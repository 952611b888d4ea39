#include "flowtune/param_space.hpp"

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/rng.hpp"

namespace flowtune {

const char* param_kind_name(ParamKind kind) {
    switch (kind) {
    case ParamKind::Integer: return "integer";
    case ParamKind::Continuous: return "continuous";
    case ParamKind::Binary: return "binary";
    }
    return "unknown";
}

ParamKind param_kind_from_name(std::string_view name) {
    if (name == "integer") return ParamKind::Integer;
    if (name == "continuous") return ParamKind::Continuous;
    if (name == "binary") return ParamKind::Binary;
    throw ConfigError("unknown parameter kind: " + std::string(name));
}

const char* preset_label_name(PresetLabel label) {
    switch (label) {
    case PresetLabel::FourParam: return "four_param";
    case PresetLabel::TwelveParam: return "twelve_param";
    case PresetLabel::Custom: return "custom";
    }
    return "unknown";
}

namespace {

// Half-away-from-zero rounding, deterministic across platforms.
std::int64_t round_half_away(double x) {
    return static_cast<std::int64_t>(x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

} // namespace

void ParamSpec::validate() const {
    if (name.empty()) throw ConfigError("parameter spec has empty name");
    if (!(min <= max)) throw ConfigError("parameter '" + name + "': min > max");
    if (grid_scale < 1) throw ConfigError("parameter '" + name + "': grid_scale must be >= 1");
    if (kind == ParamKind::Binary && (min != 0.0 || max != 1.0))
        throw ConfigError("parameter '" + name + "': binary requires min=0, max=1");
    if (kind == ParamKind::Continuous && encoded_max() - encoded_min() < 2)
        throw ConfigError("parameter '" + name +
                          "': grid_scale maps range to fewer than 2 lattice steps");
}

std::int64_t ParamSpec::grid_encode(double value) const {
    if (value < min || value > max)
        throw DomainError("parameter '" + name + "': value " + std::to_string(value) +
                          " outside [" + std::to_string(min) + ", " + std::to_string(max) + "]");
    if (kind == ParamKind::Continuous) return round_half_away(value * grid_scale);
    return round_half_away(value);
}

double ParamSpec::grid_decode(std::int64_t grid_value) const {
    if (grid_value < encoded_min() || grid_value > encoded_max())
        throw DomainError("parameter '" + name + "': encoded value " +
                          std::to_string(grid_value) + " outside encoded range [" +
                          std::to_string(encoded_min()) + ", " + std::to_string(encoded_max()) + "]");
    double v = kind == ParamKind::Continuous
                   ? static_cast<double>(grid_value) / grid_scale
                   : static_cast<double>(grid_value);
    if (v < min) v = min;
    if (v > max) v = max;
    return v;
}

std::int64_t ParamSpec::encoded_min() const {
    return kind == ParamKind::Continuous ? round_half_away(min * grid_scale)
                                         : round_half_away(min);
}

std::int64_t ParamSpec::encoded_max() const {
    return kind == ParamKind::Continuous ? round_half_away(max * grid_scale)
                                         : round_half_away(max);
}

double ParamSpec::to_unit(double value) const {
    const auto lo = encoded_min();
    const auto hi = encoded_max();
    if (hi == lo) return 0.0;
    return static_cast<double>(grid_encode(value) - lo) / static_cast<double>(hi - lo);
}

double ParamSpec::from_unit(double u) const {
    if (u < 0.0) u = 0.0;
    if (u > 1.0) u = 1.0;
    const auto lo = encoded_min();
    const auto hi = encoded_max();
    const auto grid = lo + round_half_away(u * static_cast<double>(hi - lo));
    return grid_decode(grid);
}

ParamSpace::ParamSpace(std::vector<ParamSpec> specs, PresetLabel label)
    : specs_(std::move(specs)), label_(label) {
    std::set<std::string> names;
    for (const auto& s : specs_) {
        s.validate();
        if (!names.insert(s.name).second)
            throw ConfigError("duplicate parameter name: " + s.name);
    }
}

const ParamSpec* ParamSpace::find(std::string_view name) const {
    for (const auto& s : specs_)
        if (s.name == name) return &s;
    return nullptr;
}

int ParamSpace::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i)
        if (specs_[i].name == name) return static_cast<int>(i);
    return -1;
}

nlohmann::json ParamSpace::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : specs_) {
        arr.push_back({{"name", s.name},
                       {"kind", param_kind_name(s.kind)},
                       {"min", s.min},
                       {"max", s.max},
                       {"grid_scale", s.grid_scale},
                       {"description", s.description}});
    }
    return nlohmann::json{{"preset_label", preset_label_name(label_)}, {"specs", arr}};
}

ParamSpace ParamSpace::from_json(const nlohmann::json& j) {
    std::vector<ParamSpec> specs;
    const auto& arr = j.contains("specs") ? j.at("specs") : j;
    for (const auto& e : arr) {
        ParamSpec s;
        s.name = e.at("name").get<std::string>();
        s.kind = param_kind_from_name(e.at("kind").get<std::string>());
        s.min = e.at("min").get<double>();
        s.max = e.at("max").get<double>();
        s.grid_scale = e.value("grid_scale", 1);
        s.description = e.value("description", std::string());
        specs.push_back(std::move(s));
    }
    PresetLabel label = PresetLabel::Custom;
    if (j.is_object() && j.contains("preset_label")) {
        const auto name = j.at("preset_label").get<std::string>();
        if (name == "four_param") label = PresetLabel::FourParam;
        else if (name == "twelve_param") label = PresetLabel::TwelveParam;
    }
    return ParamSpace(std::move(specs), label);
}

double ParamVector::at(std::string_view name) const {
    auto it = assignments.find(std::string(name));
    if (it == assignments.end())
        throw DomainError("parameter vector missing assignment: " + std::string(name));
    return it->second;
}

void ParamVector::validate(const ParamSpace& space) const {
    if (assignments.size() != space.size())
        throw DomainError("parameter vector has " + std::to_string(assignments.size()) +
                          " assignments, space has " + std::to_string(space.size()));
    for (const auto& spec : space.specs()) {
        const double v = at(spec.name);
        if (v < spec.min || v > spec.max)
            throw DomainError("parameter '" + spec.name + "': value " + std::to_string(v) +
                              " out of range");
        if (spec.kind != ParamKind::Continuous && v != std::floor(v))
            throw DomainError("parameter '" + spec.name + "': expected integral value, got " +
                              std::to_string(v));
    }
}

nlohmann::json ParamVector::to_json() const {
    nlohmann::json obj = nlohmann::json::object();
    for (const auto& [name, value] : assignments) obj[name] = value;
    return obj;
}

ParamVector ParamVector::from_json(const nlohmann::json& j) {
    ParamVector v;
    for (auto it = j.begin(); it != j.end(); ++it)
        v.assignments[it.key()] = it.value().get<double>();
    return v;
}

namespace {

std::vector<ParamSpec> twelve_param_specs() {
    // Clock period is anchored at 1.0 here; rebind per circuit with
    // with_clock_period_anchor before sampling.
    return {
        {kClockPeriodName, ParamKind::Continuous, 0.5, 2.0, 100, "Target clock period (ns/ps)"},
        {"Core Utilization", ParamKind::Integer, 20, 99, 1, "% core utilization"},
        {"TNS End Percent", ParamKind::Integer, 0, 100, 1, "% violating endpoints to fix"},
        {"Density Margin Add-On", ParamKind::Continuous, 0.00, 0.99, 100,
         "Global density margin increase"},
        {"Global Padding", ParamKind::Integer, 0, 3, 1, "Global placement padding level"},
        {"Detail Padding", ParamKind::Integer, 0, 3, 1, "Detailed placement padding level"},
        {"Enable DPO", ParamKind::Binary, 0, 1, 1, "Detailed placement optimization"},
        {"Pin Layer Adjust", ParamKind::Continuous, 0.2, 0.7, 10, "Routing adjust for metal2/3"},
        {"Above Layer Adjust", ParamKind::Continuous, 0.2, 0.7, 10,
         "Routing adjust for metal4 and above"},
        {"Flatten Hierarchy", ParamKind::Binary, 0, 1, 1, "Flatten design hierarchy"},
        {"CTS Cluster Size", ParamKind::Integer, 10, 40, 1, "Number of sinks per CTS cluster"},
        {"CTS Cluster Diameter", ParamKind::Integer, 80, 120, 1,
         "Physical span of each CTS cluster"},
    };
}

} // namespace

ParamSpace build_preset_space(PresetLabel label) {
    auto specs = twelve_param_specs();
    switch (label) {
    case PresetLabel::FourParam:
        specs.resize(4);
        return ParamSpace(std::move(specs), PresetLabel::FourParam);
    case PresetLabel::TwelveParam:
        return ParamSpace(std::move(specs), PresetLabel::TwelveParam);
    case PresetLabel::Custom:
        throw ConfigError("custom spaces must be built explicitly, not from a preset");
    }
    throw ConfigError("unknown preset label");
}

ParamSpace with_clock_period_anchor(const ParamSpace& space, double baseline_ecp) {
    if (baseline_ecp <= 0.0)
        throw ConfigError("clock period anchor must be positive");
    auto specs = space.specs();
    bool found = false;
    for (auto& s : specs) {
        if (s.name != kClockPeriodName) continue;
        s.min = 0.5 * baseline_ecp;
        s.max = 2.0 * baseline_ecp;
        // smallest power of ten giving at least ~100 lattice steps
        int scale = 1;
        while ((s.max - s.min) * scale < 100.0 && scale < 1000000) scale *= 10;
        s.grid_scale = scale;
        found = true;
    }
    if (!found) throw ConfigError("space has no 'Clock Period' parameter to anchor");
    return ParamSpace(std::move(specs), space.preset_label());
}

std::vector<ParamVector> sample_uniform(const ParamSpace& space, int n, std::uint64_t seed) {
    if (n < 1) throw DomainError("sample_uniform requires n >= 1");
    Rng rng(hash_combine(seed, fnv1a64("sample_uniform")));
    std::vector<ParamVector> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ParamVector v;
        for (const auto& spec : space.specs()) {
            double value;
            if (spec.kind == ParamKind::Continuous) {
                value = rng.uniform(spec.min, spec.max);
            } else {
                value = static_cast<double>(
                    rng.uniform_int(spec.encoded_min(), spec.encoded_max()));
            }
            v.assignments[spec.name] = value;
        }
        v.validate(space);
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<double> to_unit_row(const ParamSpace& space, const ParamVector& point) {
    std::vector<double> row;
    row.reserve(space.size());
    for (const auto& spec : space.specs()) row.push_back(spec.to_unit(point.at(spec.name)));
    return row;
}

ParamVector from_unit_row(const ParamSpace& space, const std::vector<double>& unit) {
    if (unit.size() != space.size())
        throw DomainError("unit row has wrong dimension");
    ParamVector v;
    for (std::size_t i = 0; i < unit.size(); ++i)
        v.assignments[space.spec(i).name] = space.spec(i).from_unit(unit[i]);
    return v;
}

} // namespace flowtune

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace flowtune {

enum class ParamKind { Integer, Continuous, Binary };

const char* param_kind_name(ParamKind kind);
ParamKind param_kind_from_name(std::string_view name);

/// One tunable flow knob: its domain and its continuous-to-integer encoding.
struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::Continuous;
    double min = 0.0;
    double max = 1.0;
    /// Continuous values are optimized on an integer lattice of round(value * grid_scale).
    int grid_scale = 1;
    std::string description;

    /// Throws ConfigError if the spec violates its invariants.
    void validate() const;

    /// Continuous -> round(value * grid_scale), half away from zero;
    /// integer/binary pass through. Throws DomainError when out of range.
    std::int64_t grid_encode(double value) const;

    /// Inverse of grid_encode up to grid resolution; clamped to [min, max].
    /// Throws DomainError when the encoded value is outside the encoded range.
    double grid_decode(std::int64_t grid_value) const;

    std::int64_t encoded_min() const;
    std::int64_t encoded_max() const;

    /// Maps a value to [0, 1] on the encoded lattice (shared scaling for all tools).
    double to_unit(double value) const;
    /// Maps a unit-cube coordinate back to a valid in-domain value (snaps to the lattice).
    double from_unit(double u) const;

    bool operator==(const ParamSpec& other) const = default;
};

enum class PresetLabel { FourParam, TwelveParam, Custom };

const char* preset_label_name(PresetLabel label);

/// Immutable ordered set of ParamSpecs with unique names.
class ParamSpace {
public:
    ParamSpace() = default;
    explicit ParamSpace(std::vector<ParamSpec> specs, PresetLabel label = PresetLabel::Custom);

    const std::vector<ParamSpec>& specs() const { return specs_; }
    PresetLabel preset_label() const { return label_; }
    std::size_t size() const { return specs_.size(); }
    const ParamSpec& spec(std::size_t i) const { return specs_.at(i); }
    const ParamSpec* find(std::string_view name) const;
    /// Index of a spec by name, or -1.
    int index_of(std::string_view name) const;

    bool operator==(const ParamSpace& other) const = default;

    nlohmann::json to_json() const;
    static ParamSpace from_json(const nlohmann::json& j);

private:
    std::vector<ParamSpec> specs_;
    PresetLabel label_ = PresetLabel::Custom;
};

/// Concrete assignment of every parameter in a space.
struct ParamVector {
    std::map<std::string, double> assignments;

    double at(std::string_view name) const;
    /// Throws DomainError unless every space name is assigned exactly once,
    /// in range, and of the declared kind.
    void validate(const ParamSpace& space) const;

    bool operator==(const ParamVector& other) const = default;

    nlohmann::json to_json() const;
    static ParamVector from_json(const nlohmann::json& j);
};

/// Builds the four- or twelve-parameter preset. The clock period spec is
/// anchored at 1.0 (range [0.5, 2.0]) until rebound with a circuit baseline.
/// Throws ConfigError for PresetLabel::Custom.
ParamSpace build_preset_space(PresetLabel label);

/// Rescales the "Clock Period" spec to [0.5, 2.0] x baseline_ecp and picks a
/// grid scale giving at least ~100 lattice steps across the range.
ParamSpace with_clock_period_anchor(const ParamSpace& space, double baseline_ecp);

inline constexpr const char* kClockPeriodName = "Clock Period";

/// n valid vectors, deterministic per seed, each coordinate uniform over its
/// domain (integer kinds uniform over the lattice).
std::vector<ParamVector> sample_uniform(const ParamSpace& space, int n, std::uint64_t seed);

/// Encodes a ParamVector to unit-cube coordinates in spec order.
std::vector<double> to_unit_row(const ParamSpace& space, const ParamVector& point);

/// Decodes unit-cube coordinates (spec order) to a valid ParamVector.
ParamVector from_unit_row(const ParamSpace& space, const std::vector<double>& unit);

} // namespace flowtune

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/param_space.hpp"

using namespace flowtune;

TEST_CASE("four_param preset matches the published knob table") {
    const auto space = build_preset_space(PresetLabel::FourParam);
    REQUIRE(space.size() == 4);
    CHECK(space.spec(0).name == "Clock Period");
    CHECK(space.spec(0).kind == ParamKind::Continuous);
    CHECK(space.spec(0).min > 0.0);
    CHECK(space.spec(1).name == "Core Utilization");
    CHECK(space.spec(1).kind == ParamKind::Integer);
    CHECK(space.spec(1).min == 20);
    CHECK(space.spec(1).max == 99);
    CHECK(space.spec(2).name == "TNS End Percent");
    CHECK(space.spec(2).min == 0);
    CHECK(space.spec(2).max == 100);
    CHECK(space.spec(3).name == "Density Margin Add-On");
    CHECK(space.spec(3).min == 0.0);
    CHECK(space.spec(3).max == doctest::Approx(0.99));
}

TEST_CASE("twelve_param preset carries all twelve knobs") {
    const auto space = build_preset_space(PresetLabel::TwelveParam);
    REQUIRE(space.size() == 12);
    const auto* cts = space.find("CTS Cluster Size");
    REQUIRE(cts != nullptr);
    CHECK(cts->kind == ParamKind::Integer);
    CHECK(cts->min == 10);
    CHECK(cts->max == 40);
    const auto* dpo = space.find("Enable DPO");
    REQUIRE(dpo != nullptr);
    CHECK(dpo->kind == ParamKind::Binary);
}

TEST_CASE("custom preset must be built explicitly") {
    CHECK_THROWS_AS(build_preset_space(PresetLabel::Custom), ConfigError);
}

TEST_CASE("repeated preset builds are structurally equal") {
    CHECK(build_preset_space(PresetLabel::FourParam) ==
          build_preset_space(PresetLabel::FourParam));
    CHECK(build_preset_space(PresetLabel::TwelveParam) ==
          build_preset_space(PresetLabel::TwelveParam));
}

TEST_CASE("grid encoding") {
    ParamSpec margin{"Density Margin Add-On", ParamKind::Continuous, 0.0, 0.99, 100, ""};

    SUBCASE("float range maps onto the integer lattice") {
        CHECK(margin.grid_encode(0.25) == 25);
        CHECK(margin.grid_decode(25) == doctest::Approx(0.25));
    }
    SUBCASE("integers pass through") {
        ParamSpec util{"Core Utilization", ParamKind::Integer, 20, 99, 1, ""};
        CHECK(util.grid_encode(20) == 20);
        CHECK(util.grid_decode(20) == 20);
    }
    SUBCASE("binary identity") {
        ParamSpec flag{"Enable DPO", ParamKind::Binary, 0, 1, 1, ""};
        CHECK(flag.grid_encode(1) == 1);
        CHECK(flag.grid_decode(1) == 1);
    }
    SUBCASE("out-of-range encode is a domain error") {
        CHECK_THROWS_AS(margin.grid_encode(1.5), DomainError);
        CHECK_THROWS_AS(margin.grid_decode(100), DomainError);
    }
    SUBCASE("round-trip bound over a fine sweep") {
        ParamSpec spec{"x", ParamKind::Continuous, 0.2, 0.7, 100, ""};
        CHECK(spec.grid_encode(0.437) == 44);
        CHECK(spec.grid_decode(44) == doctest::Approx(0.44));
        for (int i = 0; i <= 500; ++i) {
            const double v = std::min(0.2 + i * 0.001, 0.7);
            const double back = spec.grid_decode(spec.grid_encode(v));
            CHECK(std::abs(back - v) <= 0.5 / 100 + 1e-12);
        }
    }
}

TEST_CASE("decode(encode(x)) round-trips within half a grid step on every preset knob") {
    const auto space = build_preset_space(PresetLabel::TwelveParam);
    for (const auto& spec : space.specs()) {
        for (int i = 0; i < 1000; ++i) {
            double x = spec.min + (spec.max - spec.min) * (i / 999.0);
            if (spec.kind != ParamKind::Continuous) x = std::round(x);
            const double back = spec.grid_decode(spec.grid_encode(x));
            if (spec.kind == ParamKind::Continuous)
                CHECK(std::abs(back - x) <= 0.5 / spec.grid_scale + 1e-12);
            else
                CHECK(back == x);
        }
    }
}

TEST_CASE("clock period anchoring") {
    const auto base = build_preset_space(PresetLabel::FourParam);
    const auto anchored = with_clock_period_anchor(base, 1361.0);
    const auto* clk = anchored.find("Clock Period");
    REQUIRE(clk != nullptr);
    CHECK(clk->min == doctest::Approx(0.5 * 1361.0));
    CHECK(clk->max == doctest::Approx(2.0 * 1361.0));
    CHECK(clk->encoded_max() - clk->encoded_min() >= 100);

    // ns-scale platforms get a finer grid
    const auto ns = with_clock_period_anchor(base, 11.54);
    CHECK(ns.find("Clock Period")->grid_scale == 10);
}

TEST_CASE("sample_uniform is valid, deterministic, and centered") {
    const auto space = with_clock_period_anchor(build_preset_space(PresetLabel::FourParam), 10.0);

    SUBCASE("one sample validates") {
        const auto one = sample_uniform(space, 1, 42);
        REQUIRE(one.size() == 1);
        one[0].validate(space);
    }
    SUBCASE("same seed, same output") {
        CHECK(sample_uniform(space, 20, 7) == sample_uniform(space, 20, 7));
        CHECK(sample_uniform(space, 20, 7) != sample_uniform(space, 20, 8));
    }
    SUBCASE("per-dimension mean near the domain midpoint") {
        const int n = 10000;
        const auto samples = sample_uniform(space, n, 123);
        for (const auto& spec : space.specs()) {
            double mean = 0.0;
            for (const auto& s : samples) mean += s.at(spec.name);
            mean /= n;
            const double mid = 0.5 * (spec.min + spec.max);
            const double stderr3 =
                3.0 * (spec.max - spec.min) / std::sqrt(12.0) / std::sqrt(double(n));
            CHECK(std::abs(mean - mid) <= stderr3);
        }
    }
}

TEST_CASE("param vector validation catches bad assignments") {
    const auto space = build_preset_space(PresetLabel::FourParam);
    ParamVector v;
    for (const auto& spec : space.specs()) v.assignments[spec.name] = spec.min;
    v.validate(space);

    SUBCASE("missing name") {
        v.assignments.erase("Core Utilization");
        CHECK_THROWS_AS(v.validate(space), DomainError);
    }
    SUBCASE("out of range") {
        v.assignments["Core Utilization"] = 150;
        CHECK_THROWS_AS(v.validate(space), DomainError);
    }
    SUBCASE("non-integral integer") {
        v.assignments["Core Utilization"] = 20.5;
        CHECK_THROWS_AS(v.validate(space), DomainError);
    }
}

TEST_CASE("space JSON round-trip") {
    const auto space = with_clock_period_anchor(build_preset_space(PresetLabel::TwelveParam), 460.0);
    const auto restored = ParamSpace::from_json(space.to_json());
    CHECK(space == restored);
}

TEST_CASE("unit-cube encoding round-trips onto the lattice") {
    const auto space = with_clock_period_anchor(build_preset_space(PresetLabel::FourParam), 1361.0);
    const auto samples = sample_uniform(space, 50, 9);
    for (const auto& s : samples) {
        const auto unit = to_unit_row(space, s);
        for (double u : unit) {
            CHECK(u >= 0.0);
            CHECK(u <= 1.0);
        }
        const auto back = from_unit_row(space, unit);
        back.validate(space);
        for (const auto& spec : space.specs()) {
            const double tol =
                spec.kind == ParamKind::Continuous ? 0.5 / spec.grid_scale + 1e-9 : 0.5;
            CHECK(std::abs(back.at(spec.name) - s.at(spec.name)) <= tol);
        }
    }
}

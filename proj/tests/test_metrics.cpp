#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/metrics.hpp"

using namespace flowtune;

namespace {

Baseline asap7_ibex() {
    const auto table = BaselineTable::builtin_defaults();
    const auto* b = table.find("ASAP7", "IBEX");
    REQUIRE(b != nullptr);
    return *b;
}

MetricRecord complete_record(double wl, double ecp) {
    MetricRecord r;
    r.wl = wl;
    r.ecp = ecp;
    r.status = RunStatus::Complete;
    return r;
}

} // namespace

TEST_CASE("builtin baseline table mirrors the default-flow anchors") {
    const auto b = asap7_ibex();
    CHECK(b.wl_alpha == 115285);
    CHECK(b.ecp_alpha == 1361);
    CHECK(b.cts_wl_alpha == 93005);
    CHECK(b.cts_ecp_alpha == 1308);
    CHECK(b.area_alpha == 2729);
    CHECK(b.count_alpha == 21831);
    CHECK(b.power_alpha == doctest::Approx(0.057));
    CHECK(b.pdp_alpha == doctest::Approx(77.58));

    const auto table = BaselineTable::builtin_defaults();
    CHECK(table.all().size() == 6);
    CHECK(table.find("SKY130HD", "JPEG") != nullptr);
    CHECK(table.find("ASAP7", "NONE") == nullptr);
}

TEST_CASE("baseline table JSON round-trip") {
    const auto table = BaselineTable::builtin_defaults();
    const auto restored = BaselineTable::from_json(table.to_json());
    REQUIRE(restored.all().size() == 6);
    CHECK(restored.find("ASAP7", "AES")->ecp_alpha == 460);
}

TEST_CASE("single-objective normalization against the published endpoint") {
    const auto objective = Objective::single(MetricId::Wl, asap7_ibex());
    const auto v = normalized_loss(complete_record(99537, 1181), objective);
    REQUIRE_FALSE(v.missing);
    CHECK_FALSE(v.surrogate_used);
    CHECK(v.value == doctest::Approx(0.8634).epsilon(1e-4));
}

TEST_CASE("co-optimization sums the two normalized terms") {
    const auto objective = Objective::co_optimize(asap7_ibex());

    SUBCASE("baseline record scores exactly 2") {
        const auto v = normalized_loss(complete_record(115285, 1361), objective);
        REQUIRE_FALSE(v.missing);
        CHECK(v.value == doctest::Approx(2.0));
        CHECK(co_optimize_report_average(v.value) == doctest::Approx(1.0));
    }
    SUBCASE("reported endpoint") {
        const auto v = normalized_loss(complete_record(99537, 1181), objective);
        CHECK(v.value == doctest::Approx(99537.0 / 115285 + 1181.0 / 1361).epsilon(1e-9));
    }
}

TEST_CASE("surrogate fallback per term") {
    const auto b = asap7_ibex();

    SUBCASE("surrogate at its own baseline scores 1") {
        MetricRecord r;
        r.cts_wl = 93005;
        r.status = RunStatus::Timeout;
        const auto v = normalized_loss(r, Objective::single(MetricId::Wl, b));
        REQUIRE_FALSE(v.missing);
        CHECK(v.surrogate_used);
        CHECK(v.value == doctest::Approx(1.0));
    }
    SUBCASE("co-optimize falls back per term") {
        MetricRecord r;
        r.wl = 99537;
        r.cts_ecp = 1308;
        r.status = RunStatus::Timeout;
        const auto v = normalized_loss(r, Objective::co_optimize(b));
        REQUIRE_FALSE(v.missing);
        CHECK(v.surrogate_used);
        CHECK(v.value == doctest::Approx(99537.0 / 115285 + 1.0));
    }
    SUBCASE("all terms absent means missing") {
        MetricRecord r;
        r.area = 2700;
        const auto v = normalized_loss(r, Objective::co_optimize(b));
        CHECK(v.missing);
    }
    SUBCASE("a term with no signal makes the whole value missing") {
        MetricRecord r;
        r.wl = 99537; // ECP and ECP' both absent
        const auto v = normalized_loss(r, Objective::co_optimize(b));
        CHECK(v.missing);
    }
}

TEST_CASE("weighted sum arithmetic from the baseline table") {
    const auto objective = Objective::weighted_sum(
        {{MetricId::Wl, 0.5}, {MetricId::Ecp, 0.5}}, asap7_ibex());
    const auto v = normalized_loss(complete_record(99537, 1181), objective);
    REQUIRE_FALSE(v.missing);
    CHECK(v.value == doctest::Approx(0.8655).epsilon(1e-3));
    CHECK(v.value ==
          doctest::Approx(0.5 * (99537.0 / 115285) + 0.5 * (1181.0 / 1361)).epsilon(1e-12));
}

TEST_CASE("normalization is scale-consistent") {
    auto b = asap7_ibex();
    const auto v1 =
        normalized_loss(complete_record(99537, 1181), Objective::single(MetricId::Wl, b));
    b.wl_alpha *= 37.5;
    const auto v2 = normalized_loss(complete_record(99537 * 37.5, 1181),
                                    Objective::single(MetricId::Wl, b));
    CHECK(std::abs(v1.value - v2.value) <= 1e-12);
}

TEST_CASE("nonpositive baseline is a configuration error") {
    auto b = asap7_ibex();
    b.wl_alpha = 0.0;
    MetricRecord r = complete_record(1000, 100);
    CHECK_THROWS_AS(normalized_loss(r, Objective::single(MetricId::Wl, b)), ConfigError);
}

TEST_CASE("constraint checks") {
    const auto b = asap7_ibex();

    SUBCASE("published violation case: +2.51% at 2% leeway") {
        MetricRecord r = complete_record(100000, b.ecp_alpha * 1.0251);
        const auto report = check_constraints(r, b, {{MetricId::Ecp, 2.0}});
        CHECK(report.any_violation);
        REQUIRE(report.checks.size() == 1);
        CHECK(report.checks[0].state == ConstraintState::Violation);
        CHECK(*report.checks[0].percent_change == doctest::Approx(2.51));
    }
    SUBCASE("all metrics at baseline never violate") {
        MetricRecord r = complete_record(b.wl_alpha, b.ecp_alpha);
        r.area = b.area_alpha;
        r.power = b.power_alpha;
        const auto report = check_constraints(
            r, b, {{MetricId::Ecp, 0.0}, {MetricId::Area, 2.0}, {MetricId::Power, 4.0}});
        CHECK_FALSE(report.any_violation);
    }
    SUBCASE("boundary behavior at the threshold") {
        MetricRecord r = complete_record(100000, 1300);
        r.power = b.power_alpha * 1.039999;
        CHECK_FALSE(check_constraints(r, b, {{MetricId::Power, 4.0}}).any_violation);
        r.power = b.power_alpha * 1.040001;
        CHECK(check_constraints(r, b, {{MetricId::Power, 4.0}}).any_violation);
    }
    SUBCASE("missing metrics are unverifiable, not violations") {
        MetricRecord r = complete_record(100000, 1300);
        const auto report = check_constraints(r, b, {{MetricId::Power, 2.0}});
        CHECK_FALSE(report.any_violation);
        CHECK(report.checks[0].state == ConstraintState::Unverifiable);
    }
    SUBCASE("monotone in leeway") {
        MetricRecord r = complete_record(100000, 1300);
        r.area = b.area_alpha * 1.03;
        for (double leeway = 0.0; leeway < 8.0; leeway += 0.5) {
            const bool tight =
                check_constraints(r, b, {{MetricId::Area, leeway}}).any_violation;
            const bool loose =
                check_constraints(r, b, {{MetricId::Area, leeway + 0.5}}).any_violation;
            if (!tight) CHECK_FALSE(loose);
        }
    }
}

TEST_CASE("constrained objective adds the penalty but keeps the row rankable") {
    const auto b = asap7_ibex();
    auto constrained =
        Objective::constrained(Objective::single(MetricId::Wl, b), {{MetricId::Ecp, 2.0}});

    MetricRecord ok = complete_record(100000, b.ecp_alpha);
    MetricRecord bad = complete_record(90000, b.ecp_alpha * 1.10);
    const auto v_ok = normalized_loss(ok, constrained);
    const auto v_bad = normalized_loss(bad, constrained);
    REQUIRE_FALSE(v_ok.missing);
    REQUIRE_FALSE(v_bad.missing);
    CHECK(v_bad.value > v_ok.value); // penalty outranks the better raw loss
    CHECK(v_bad.value == doctest::Approx(90000.0 / b.wl_alpha + kConstraintPenalty));
}

TEST_CASE("constrained target must not itself be constrained") {
    const auto b = asap7_ibex();
    auto inner = Objective::constrained(Objective::single(MetricId::Wl, b), {});
    CHECK_THROWS_AS(Objective::constrained(std::move(inner), {}), ConfigError);
}

TEST_CASE("geometric mean") {
    SUBCASE("published co-optimization columns") {
        const double sonnet[] = {0.865, 0.823, 0.816, 0.866, 0.937, 0.828};
        CHECK(geometric_mean(sonnet) == doctest::Approx(0.855).epsilon(0.001 / 0.855));
        const double kimi[] = {0.865, 0.822, 0.816, 0.865, 0.936, 0.828};
        CHECK(geometric_mean(kimi) == doctest::Approx(0.854).epsilon(0.001 / 0.854));
    }
    SUBCASE("identities") {
        const double single[] = {0.7};
        CHECK(geometric_mean(single) == doctest::Approx(0.7));
        const double pow2[] = {2.0, 8.0};
        CHECK(geometric_mean(pow2) == doctest::Approx(4.0));
    }
    SUBCASE("bounded by min and max") {
        const double values[] = {0.3, 1.9, 0.8, 1.1};
        const double g = geometric_mean(values);
        CHECK(g >= 0.3);
        CHECK(g <= 1.9);
    }
    SUBCASE("domain errors") {
        CHECK_THROWS_AS(geometric_mean(std::span<const double>{}), DomainError);
        const double bad[] = {1.0, -2.0};
        CHECK_THROWS_AS(geometric_mean(bad), DomainError);
    }
}

TEST_CASE("derive_pdp") {
    SUBCASE("published rows") {
        MetricRecord r;
        r.power = 0.057;
        r.ecp = 1361;
        r = derive_pdp(r);
        REQUIRE(r.pdp.has_value());
        CHECK(*r.pdp == doctest::Approx(77.577));

        MetricRecord aes;
        aes.power = 0.149;
        aes.ecp = 460;
        aes = derive_pdp(aes);
        CHECK(*aes.pdp == doctest::Approx(68.54));
    }
    SUBCASE("absent power leaves pdp absent") {
        MetricRecord r;
        r.ecp = 1361;
        CHECK_FALSE(derive_pdp(r).pdp.has_value());
    }
    SUBCASE("idempotent") {
        MetricRecord r;
        r.power = 0.1;
        r.ecp = 100;
        r = derive_pdp(derive_pdp(r));
        CHECK(*r.pdp == doctest::Approx(10.0));
    }
    SUBCASE("stored mismatch marks the record failed") {
        MetricRecord r;
        r.power = 0.1;
        r.ecp = 100;
        r.pdp = 11.0; // corrupt
        r.status = RunStatus::Complete;
        r = derive_pdp(r);
        CHECK(r.status == RunStatus::Failed);
    }
}

TEST_CASE("ranking places missing after all non-missing") {
    ObjectiveValue present{0.9, false, false};
    ObjectiveValue missing;
    CHECK(present.missing == false);
    CHECK(missing.missing == true);
}

TEST_CASE("metric record JSON round-trip") {
    MetricRecord r = complete_record(115285, 1361);
    r.cts_wl = 93005;
    r.power = 0.057;
    r = derive_pdp(r);
    const auto restored = MetricRecord::from_json(r.to_json());
    CHECK(restored.wl == r.wl);
    CHECK(restored.pdp == r.pdp);
    CHECK(restored.status == RunStatus::Complete);
}

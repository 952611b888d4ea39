#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/evaluator.hpp"
#include "flowtune/inspect.hpp"
#include "flowtune/param_space.hpp"

using namespace flowtune;

namespace {

Baseline asap7_ibex() {
    return *BaselineTable::builtin_defaults().find("ASAP7", "IBEX");
}

ParamSpace ibex_space() {
    return with_clock_period_anchor(build_preset_space(PresetLabel::FourParam),
                                    asap7_ibex().ecp_alpha);
}

std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("flowtune_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("synthetic evaluator determinism and plausibility") {
    const auto space = ibex_space();
    const auto profile = SyntheticProfile::for_circuit(asap7_ibex());
    const auto points = sample_uniform(space, 20, 11);

    SUBCASE("same point and seed give the identical record") {
        for (const auto& p : points) {
            const auto a = synthetic_evaluate(p, space, profile, 99);
            const auto b = synthetic_evaluate(p, space, profile, 99);
            CHECK(a.to_json() == b.to_json());
        }
    }
    SUBCASE("records are internally consistent") {
        for (const auto& p : points) {
            const auto r = synthetic_evaluate(p, space, profile, 5);
            r.validate();
            CHECK(r.cts_wl.has_value());
            CHECK(r.cts_ecp.has_value());
            if (r.status == RunStatus::Timeout) {
                CHECK_FALSE(r.wl.has_value());
                CHECK_FALSE(r.ecp.has_value());
            } else {
                CHECK(r.wl.has_value());
                CHECK(*r.wl >= 0.80 * profile.anchors.wl_alpha);
            }
        }
    }
    SUBCASE("noise-free model bounds at any point") {
        for (const auto& p : points) {
            const auto r = synthetic_expected(p, space, profile);
            CHECK(*r.ecp >= 0.85 * profile.anchors.ecp_alpha - 1e-9);
            CHECK(*r.ecp <= 1.10 * profile.anchors.ecp_alpha + 1e-9);
            CHECK(*r.power > 0.0);
            CHECK(*r.wl >= 0.82 * profile.anchors.wl_alpha - 1e-9);
        }
    }
    SUBCASE("distinct circuits get distinct landscapes") {
        auto other = profile;
        other.landscape_key = "ASAP7:AES";
        ParamVector p = points[0];
        const auto a = synthetic_expected(p, space, profile);
        const auto b = synthetic_expected(p, space, other);
        CHECK(*a.wl != *b.wl);
    }
}

TEST_CASE("timeout model follows the clock-period pressure curve") {
    const auto space = ibex_space();
    const auto profile = SyntheticProfile::for_circuit(asap7_ibex());
    const double ecp_a = profile.anchors.ecp_alpha;

    ParamVector tight;
    tight.assignments = {{"Clock Period", 0.5 * ecp_a},
                         {"Core Utilization", 60},
                         {"TNS End Percent", 50},
                         {"Density Margin Add-On", 0.5}};
    const double p_tight = synthetic_timeout_probability(tight, space, profile);
    CHECK(p_tight == doctest::Approx(0.30));

    ParamVector relaxed = tight;
    relaxed.assignments["Clock Period"] = 2.0 * ecp_a;
    CHECK(synthetic_timeout_probability(relaxed, space, profile) == doctest::Approx(0.0));

    // Monte Carlo vs the analytic probability over seeded repeats
    int timeouts = 0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        const auto r = synthetic_evaluate(tight, space, profile, 1000 + i);
        if (r.status == RunStatus::Timeout) ++timeouts;
    }
    const double observed = static_cast<double>(timeouts) / n;
    CHECK(std::abs(observed - p_tight) <= 0.1);
}

TEST_CASE("synthetic correlation structure over 10k draws") {
    const auto space = ibex_space();
    const auto profile = SyntheticProfile::for_circuit(asap7_ibex());
    const int n = 10000;
    const auto points = sample_uniform(space, n, 77);

    std::vector<double> ecp, power, wl, area;
    for (int i = 0; i < n; ++i) {
        const auto r = synthetic_expected(points[static_cast<std::size_t>(i)], space, profile);
        ecp.push_back(*r.ecp);
        power.push_back(*r.power);
        wl.push_back(*r.wl);
        area.push_back(*r.area);
    }
    auto to_vec = [](std::vector<double>& v) {
        return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    };
    CHECK(pearson(to_vec(ecp), to_vec(power)) < -0.5);
    CHECK(pearson(to_vec(wl), to_vec(area)) > 0.0);
}

TEST_CASE("run_batch contract") {
    const auto space = ibex_space();
    const auto profile = SyntheticProfile::for_circuit(asap7_ibex());

    SUBCASE("cardinality and status domain") {
        EvaluatorConfig config;
        config.parallel_k = 25;
        config.timeout_s = 30.0;
        Evaluator evaluator(config, space, profile);
        const auto points = sample_uniform(space, 25, 3);
        const auto results = evaluator.run_batch(points, 1);
        REQUIRE(results.size() == 25);
        for (std::size_t i = 0; i < results.size(); ++i) {
            CHECK(results[i].params == points[i]); // order preserved
            CHECK(results[i].metrics.status != RunStatus::Failed);
            CHECK(results[i].wall_time_s <= config.timeout_s + kTimeoutGraceSeconds);
        }
    }
    SUBCASE("at most parallel_k jobs in flight") {
        EvaluatorConfig config;
        config.parallel_k = 12;
        Evaluator evaluator(config, space, profile);
        const auto points = sample_uniform(space, 12, 4);
        BatchStats stats;
        const auto results = evaluator.run_batch(points, 1, &stats);
        CHECK(results.size() == 12);
        CHECK(stats.max_in_flight <= 12);
        CHECK(stats.max_in_flight >= 1);
    }
    SUBCASE("batch larger than parallel_k is rejected") {
        EvaluatorConfig config;
        config.parallel_k = 4;
        Evaluator evaluator(config, space, profile);
        CHECK_THROWS_AS(evaluator.run_batch(sample_uniform(space, 5, 1), 1), DomainError);
    }
}

TEST_CASE("flow variable naming") {
    CHECK(default_flow_variable_name("Core Utilization") == "CORE_UTILIZATION");
    CHECK(default_flow_variable_name("Density Margin Add-On") == "DENSITY_MARGIN_ADD_ON");
    CHECK(default_flow_variable_name("TNS End Percent") == "TNS_END_PERCENT");
}

TEST_CASE("canonical metrics parsing") {
    SUBCASE("complete record") {
        const nlohmann::json j{{"route__wirelength", 100000.0}, {"timing__ecp", 1300.0},
                               {"cts__wirelength", 92000.0},   {"cts__ecp", 1270.0},
                               {"design__area", 2700.0},       {"design__instance_count", 21000.0},
                               {"power__total", 0.055}};
        const auto r = parse_canonical_metrics(j, {});
        CHECK(r.status == RunStatus::Complete);
        CHECK(*r.wl == 100000.0);
        CHECK(*r.pdp == doctest::Approx(0.055 * 1300.0));
    }
    SUBCASE("cts-only record is a timeout") {
        const nlohmann::json j{{"cts__wirelength", 92000.0}, {"cts__ecp", 1270.0}};
        const auto r = parse_canonical_metrics(j, {});
        CHECK(r.status == RunStatus::Timeout);
        CHECK_FALSE(r.wl.has_value());
        CHECK(*r.cts_wl == 92000.0);
    }
    SUBCASE("key remapping") {
        const nlohmann::json j{{"detailedroute__route__wirelength", 123.0},
                               {"finish__timing__setup__ws", 5.0}};
        const std::map<std::string, std::string> remap{
            {"route__wirelength", "detailedroute__route__wirelength"}};
        const auto r = parse_canonical_metrics(j, remap);
        CHECK(r.wl.has_value());
        CHECK(*r.wl == 123.0);
    }
}

TEST_CASE("external command adapter") {
    const auto space = ibex_space();
    const auto dir = temp_dir("external");

    EvaluatorConfig config;
    config.kind = EvaluatorKind::ExternalCommand;
    config.workdir = dir;
    config.timeout_s = 20.0;
    config.parallel_k = 2;

    ParamVector point;
    point.assignments = {{"Clock Period", 1361.0},
                         {"Core Utilization", 65},
                         {"TNS End Percent", 50},
                         {"Density Margin Add-On", 0.25}};

    SUBCASE("override and constraint files are written; metrics parsed") {
        config.command_template =
            "echo '{\"route__wirelength\": 111000, \"timing__ecp\": 1290, "
            "\"cts__wirelength\": 99000, \"cts__ecp\": 1255, \"design__area\": 2650, "
            "\"design__instance_count\": 21500, \"power__total\": 0.052}' "
            "> \"$RUN_DIR/metrics.json\"";
        const auto job = external_prepare_and_invoke(point, config, space, 1, 0);
        CHECK(job.metrics.status == RunStatus::Complete);
        CHECK(*job.metrics.wl == 111000);

        std::ifstream overrides(run_directory(dir, 1, 0) / "overrides.mk");
        std::string content((std::istreambuf_iterator<char>(overrides)),
                            std::istreambuf_iterator<char>());
        CHECK(content.find("CORE_UTILIZATION=65\n") != std::string::npos);
        CHECK(content.find("CLOCK_PERIOD") == std::string::npos); // clock goes to the SDC

        std::ifstream sdc(run_directory(dir, 1, 0) / "constraint.sdc");
        std::string sdc_content((std::istreambuf_iterator<char>(sdc)),
                                std::istreambuf_iterator<char>());
        CHECK(sdc_content.find("-period 1361") != std::string::npos);
    }
    SUBCASE("exit 0 without a metrics file is a failure") {
        config.command_template = "true";
        const auto job = external_prepare_and_invoke(point, config, space, 2, 0);
        CHECK(job.metrics.status == RunStatus::Failed);
    }
    SUBCASE("surrogate-only metrics file marks a timeout") {
        config.command_template =
            "echo '{\"cts__wirelength\": 99000, \"cts__ecp\": 1255}' > \"$RUN_DIR/metrics.json\"";
        const auto job = external_prepare_and_invoke(point, config, space, 3, 0);
        CHECK(job.metrics.status == RunStatus::Timeout);
        CHECK(job.metrics.cts_wl.has_value());
        CHECK_FALSE(job.metrics.wl.has_value());
    }
    SUBCASE("separate surrogate file is the timeout fallback") {
        config.command_template =
            "echo '{\"cts__wirelength\": 98000}' > \"$RUN_DIR/metrics_cts.json\"";
        const auto job = external_prepare_and_invoke(point, config, space, 4, 0);
        CHECK(job.metrics.status == RunStatus::Timeout);
        CHECK(*job.metrics.cts_wl == 98000);
    }
    SUBCASE("unparseable metrics fail with a diagnostic") {
        config.command_template = "echo 'not json' > \"$RUN_DIR/metrics.json\"";
        const auto job = external_prepare_and_invoke(point, config, space, 5, 0);
        CHECK(job.metrics.status == RunStatus::Failed);
        std::ifstream log(job.log_path);
        std::string content((std::istreambuf_iterator<char>(log)),
                            std::istreambuf_iterator<char>());
        CHECK(content.find("parse error") != std::string::npos);
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("external command timeout is enforced") {
    const auto space = ibex_space();
    const auto dir = temp_dir("timeout");

    EvaluatorConfig config;
    config.kind = EvaluatorKind::ExternalCommand;
    config.workdir = dir;
    config.timeout_s = 1.0;
    config.command_template = "sleep 30"; // will be terminated

    ParamVector point;
    point.assignments = {{"Clock Period", 1361.0},
                         {"Core Utilization", 65},
                         {"TNS End Percent", 50},
                         {"Density Margin Add-On", 0.25}};

    const auto job = external_prepare_and_invoke(point, config, space, 1, 0);
    CHECK(job.wall_time_s < 10.0); // well under the sleep, killed at ~1s
    CHECK(job.metrics.status == RunStatus::Failed);
    std::filesystem::remove_all(dir);
}

TEST_CASE("archive_iteration moves run directories immutably") {
    const auto space = ibex_space();
    const auto profile = SyntheticProfile::for_circuit(asap7_ibex());
    const auto dir = temp_dir("archive");

    EvaluatorConfig config;
    config.parallel_k = 25;
    config.workdir = dir;
    Evaluator evaluator(config, space, profile);
    evaluator.run_batch(sample_uniform(space, 25, 6), 3);

    const auto archive = archive_iteration(3, dir);
    CHECK(std::filesystem::exists(archive));
    CHECK_FALSE(std::filesystem::exists(dir / "runs" / "iter_0003"));

    int metric_files = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(archive))
        if (entry.path().filename() == "metrics.json") ++metric_files;
    CHECK(metric_files == 25);

    // re-archiving the same iteration is an idempotence error
    CHECK_THROWS_AS(archive_iteration(3, dir), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("no two concurrent jobs share a run directory") {
    const auto space = ibex_space();
    const auto profile = SyntheticProfile::for_circuit(asap7_ibex());
    const auto dir = temp_dir("collision");

    EvaluatorConfig config;
    config.parallel_k = 25;
    config.workdir = dir;
    Evaluator evaluator(config, space, profile);
    BatchStats stats;
    evaluator.run_batch(sample_uniform(space, 25, 8), 1, &stats);

    std::set<std::string> dirs;
    for (const auto& p : stats.run_dirs) dirs.insert(p.string());
    CHECK(dirs.size() == 25);
    std::filesystem::remove_all(dir);
}

TEST_CASE("job result JSON round-trip") {
    const auto space = ibex_space();
    const auto profile = SyntheticProfile::for_circuit(asap7_ibex());
    JobResult job;
    job.run_id = "iter1_run0";
    job.iteration = 1;
    job.params = sample_uniform(space, 1, 2)[0];
    job.metrics = synthetic_evaluate(job.params, space, profile, 3);
    job.wall_time_s = 12.5;
    const auto restored = JobResult::from_json(job.to_json());
    CHECK(restored.run_id == job.run_id);
    CHECK(restored.params == job.params);
    CHECK(restored.metrics.to_json() == job.metrics.to_json());
}

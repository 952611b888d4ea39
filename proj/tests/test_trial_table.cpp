#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/trial_table.hpp"

using namespace flowtune;

namespace {

Baseline asap7_ibex() {
    return *BaselineTable::builtin_defaults().find("ASAP7", "IBEX");
}

ParamSpace ibex_space() {
    return with_clock_period_anchor(build_preset_space(PresetLabel::FourParam),
                                    asap7_ibex().ecp_alpha);
}

JobResult make_job(const ParamSpace& space, int iteration, double wl_or_nan,
                   double cts_wl_or_nan, std::uint64_t seed) {
    JobResult job;
    job.run_id = "test";
    job.iteration = iteration;
    job.params = sample_uniform(space, 1, seed)[0];
    if (wl_or_nan > 0) job.metrics.wl = wl_or_nan;
    if (cts_wl_or_nan > 0) job.metrics.cts_wl = cts_wl_or_nan;
    job.metrics.status = job.metrics.wl ? RunStatus::Complete : RunStatus::Timeout;
    if (job.metrics.wl) job.metrics.ecp = 1300.0; // keep complete-record invariant
    return job;
}

} // namespace

TEST_CASE("collate keeps, surrogates, and skips per signal availability") {
    const auto space = ibex_space();
    const auto objective = Objective::single(MetricId::Wl, asap7_ibex());
    TrialTable table(space, objective);

    std::vector<JobResult> results;
    results.push_back(make_job(space, 1, 100000, 92000, 1)); // routed present
    results.push_back(make_job(space, 1, -1, 91000, 2));     // surrogate only
    results.push_back(make_job(space, 1, -1, -1, 3));        // nothing: skipped

    table = collate(results, table);
    REQUIRE(table.size() == 2);
    CHECK_FALSE(table.rows()[0].surrogate_only);
    CHECK(table.rows()[1].surrogate_only);
    CHECK(table.rows()[1].objective.surrogate_used);
}

TEST_CASE("failed jobs contribute no rows") {
    const auto space = ibex_space();
    TrialTable table(space, Objective::single(MetricId::Wl, asap7_ibex()));
    auto job = make_job(space, 1, 100000, 92000, 4);
    job.metrics.status = RunStatus::Failed;
    table = collate({job}, table);
    CHECK(table.empty());
}

TEST_CASE("collate is append-only and preserves prior rows bitwise") {
    const auto space = ibex_space();
    TrialTable table(space, Objective::single(MetricId::Wl, asap7_ibex()));
    table = collate({make_job(space, 1, 100000, 92000, 5)}, table);
    const auto first_json = table.rows()[0].to_json().dump();

    table = collate({make_job(space, 2, 99000, 91500, 6)}, table);
    REQUIRE(table.size() == 2);
    CHECK(table.rows()[0].to_json().dump() == first_json);
}

TEST_CASE("best_so_far") {
    const auto space = ibex_space();
    const auto objective = Objective::single(MetricId::Wl, asap7_ibex());

    SUBCASE("empty table has no best") {
        TrialTable table(space, objective);
        CHECK(best_so_far(table) == nullptr);
    }
    SUBCASE("minimal value wins") {
        TrialTable table(space, objective);
        table = collate({make_job(space, 1, 115285 * 1.00, 92000, 7),
                         make_job(space, 1, 115285 * 0.86, 92000, 8),
                         make_job(space, 1, 115285 * 0.91, 92000, 9)},
                        table);
        const auto* best = best_so_far(table);
        REQUIRE(best != nullptr);
        CHECK(best->objective.value == doctest::Approx(0.86));
    }
    SUBCASE("ties prefer the routed row") {
        TrialTable table(space, objective);
        // surrogate row scoring exactly 0.86, then a routed row at the same value
        auto surrogate_job = make_job(space, 1, -1, asap7_ibex().cts_wl_alpha * 0.86, 10);
        auto routed_job = make_job(space, 1, asap7_ibex().wl_alpha * 0.86, 92000, 11);
        TrialTable t2 = collate({surrogate_job, routed_job}, table);
        const auto* best = best_so_far(t2);
        REQUIRE(best != nullptr);
        CHECK_FALSE(best->surrogate_only);
    }
    SUBCASE("incumbent is monotone under collation") {
        TrialTable table(space, objective);
        double prev = 1e300;
        for (int i = 0; i < 10; ++i) {
            table = collate({make_job(space, i, 90000 + 1000 * ((i * 7) % 10), 88000, 20 + i)},
                            table);
            const auto* best = best_so_far(table);
            REQUIRE(best != nullptr);
            CHECK(best->objective.value <= prev + 1e-12);
            prev = best->objective.value;
        }
    }
}

TEST_CASE("to_matrix") {
    const auto space = ibex_space();
    const auto objective = Objective::single(MetricId::Wl, asap7_ibex());

    SUBCASE("empty table is a domain error") {
        TrialTable table(space, objective);
        CHECK_THROWS_AS(to_matrix(table), DomainError);
    }
    SUBCASE("one row gives a 1x4 unit-cube matrix") {
        TrialTable table(space, objective);
        table = collate({make_job(space, 1, 100000, 92000, 12)}, table);
        const auto m = to_matrix(table);
        CHECK(m.X.rows() == 1);
        CHECK(m.X.cols() == 4);
        for (Eigen::Index j = 0; j < 4; ++j) {
            CHECK(m.X(0, j) >= 0.0);
            CHECK(m.X(0, j) <= 1.0);
        }
        CHECK(m.y.size() == 1);
        CHECK(m.surrogate_mask.size() == 1);
    }
    SUBCASE("row bookkeeping across batches with skips") {
        TrialTable table(space, objective);
        std::vector<JobResult> batch1, batch2, batch3;
        for (int i = 0; i < 25; ++i) batch1.push_back(make_job(space, 1, 100000 + i, 92000, 100 + i));
        for (int i = 0; i < 25; ++i) batch2.push_back(make_job(space, 2, 100000 + i, 92000, 200 + i));
        for (int i = 0; i < 12; ++i) batch3.push_back(make_job(space, 3, 100000 + i, 92000, 300 + i));
        // two rows with no usable signal get skipped
        batch3[3].metrics = MetricRecord{};
        batch3[3].metrics.status = RunStatus::Timeout;
        batch3[7].metrics = MetricRecord{};
        batch3[7].metrics.status = RunStatus::Timeout;

        table = collate(batch1, table);
        table = collate(batch2, table);
        table = collate(batch3, table);
        CHECK(table.size() == 60);
        CHECK(to_matrix(table).X.rows() == 60);
    }
    SUBCASE("deterministic") {
        TrialTable table(space, objective);
        table = collate({make_job(space, 1, 100000, 92000, 13),
                         make_job(space, 1, 101000, 92500, 14)},
                        table);
        const auto a = to_matrix(table);
        const auto b = to_matrix(table);
        CHECK(a.X == b.X);
        CHECK(a.y == b.y);
    }
}

TEST_CASE("ldjson round-trip reproduces the table") {
    const auto space = ibex_space();
    const auto objective = Objective::single(MetricId::Wl, asap7_ibex());
    TrialTable table(space, objective);
    std::vector<JobResult> jobs;
    for (int i = 0; i < 10; ++i) jobs.push_back(make_job(space, 1, 100000 + 37 * i, 92000, 400 + i));
    jobs[2].metrics.wl.reset();
    jobs[2].metrics.ecp.reset();
    jobs[2].metrics.status = RunStatus::Timeout;
    table = collate(jobs, table);

    const auto path = std::filesystem::temp_directory_path() /
                      ("flowtune_trials_" + std::to_string(::getpid()) + ".ldjson");
    save_trials_ldjson(table, path);
    const auto restored = load_trials_ldjson(path, space, objective);
    REQUIRE(restored.size() == table.size());
    for (std::size_t i = 0; i < table.size(); ++i)
        CHECK(restored.rows()[i].to_json() == table.rows()[i].to_json());
    std::filesystem::remove(path);
}

TEST_CASE("collate rejects a space mismatch") {
    const auto space = ibex_space();
    TrialTable table(space, Objective::single(MetricId::Wl, asap7_ibex()));
    JobResult alien;
    alien.iteration = 1;
    alien.params.assignments = {{"Unknown Knob", 1.0}};
    alien.metrics.wl = 100000;
    alien.metrics.ecp = 1300;
    alien.metrics.status = RunStatus::Complete;
    CHECK_THROWS_AS(collate({alien}, table), DomainError);
}

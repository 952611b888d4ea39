#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/evaluator.hpp"
#include "flowtune/inspect.hpp"
#include "flowtune/rng.hpp"

using namespace flowtune;

TEST_CASE("pearson and kendall basics") {
    Eigen::VectorXd x(5), y(5);
    x << 1, 2, 3, 4, 5;

    SUBCASE("exact monotone linear relation") {
        y = 2.0 * x;
        CHECK(pearson(x, y) == doctest::Approx(1.0));
        CHECK(kendall_tau_b(x, y) == doctest::Approx(1.0));
    }
    SUBCASE("constant target reports zero by the degenerate rule") {
        y.setConstant(3.0);
        CHECK(pearson(x, y) == 0.0);
        CHECK(kendall_tau_b(x, y) == 0.0);
    }
    SUBCASE("published pair-count fixture: one discordant pair") {
        y << 1, 2, 3, 5, 4;
        CHECK(kendall_tau_b(x, y) == doctest::Approx(0.8));
    }
}

TEST_CASE("kendall tau-b matches the brute-force definition with ties") {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 50;
        Eigen::VectorXd a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a(i) = static_cast<double>(rng.uniform_int(0, 9)); // heavy ties
            b(i) = static_cast<double>(rng.uniform_int(0, 9));
        }
        // brute force over all pairs
        long long concordant = 0, discordant = 0, ta = 0, tb = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double da = a(i) - a(j), db = b(i) - b(j);
                if (da == 0 && db == 0) { ++ta; ++tb; }
                else if (da == 0) ++ta;
                else if (db == 0) ++tb;
                else if ((da > 0) == (db > 0)) ++concordant;
                else ++discordant;
            }
        const long long n0 = static_cast<long long>(n) * (n - 1) / 2;
        const double expected = (concordant - discordant) /
                                (std::sqrt(double(n0 - ta)) * std::sqrt(double(n0 - tb)));
        CHECK(kendall_tau_b(a, b) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("inspect_distribution") {
    SUBCASE("fewer than 3 rows yields the insufficient-data note") {
        Eigen::MatrixXd X(2, 2);
        X << 0, 1, 1, 0;
        Eigen::VectorXd Y(2);
        Y << 1, 2;
        const auto s = inspect_distribution(X, Y);
        CHECK(s.notes == "insufficient data");
        CHECK(s.input_target_pearson.empty());
    }
    SUBCASE("exact linear column correlates at 1") {
        const int n = 20;
        Eigen::MatrixXd X(n, 2);
        Eigen::VectorXd Y(n);
        Rng rng(1);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = rng.next_unit();
            X(i, 1) = rng.next_unit();
            Y(i) = 2.0 * X(i, 0);
        }
        const auto s = inspect_distribution(X, Y);
        CHECK(s.input_target_pearson[0] == doctest::Approx(1.0));
        CHECK(s.input_target_kendall[0] == doctest::Approx(1.0));
        CHECK(std::abs(s.input_target_pearson[1]) < 0.7);
    }
    SUBCASE("surrogate pearson on jointly present rows") {
        const int n = 30;
        Eigen::MatrixXd X(n, 1);
        Eigen::VectorXd Y(n), Ys(n);
        Rng rng(2);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = rng.next_unit();
            Y(i) = X(i, 0);
            Ys(i) = i % 3 == 0 ? std::numeric_limits<double>::quiet_NaN()
                               : 0.92 * Y(i) + 0.001 * rng.normal();
        }
        const auto s = inspect_distribution(X, Y, &Ys);
        REQUIRE(s.surrogate_target_pearson.has_value());
        CHECK(*s.surrogate_target_pearson > 0.99);
    }
    SUBCASE("planted outlier lands in outlier_indices") {
        const int n = 40;
        Eigen::MatrixXd X(n, 1);
        Eigen::VectorXd Y(n);
        Rng rng(3);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = rng.next_unit();
            Y(i) = 1.0 + 0.01 * rng.normal();
        }
        Y(17) = 50.0;
        const auto s = inspect_distribution(X, Y);
        REQUIRE_FALSE(s.outlier_indices.empty());
        CHECK(std::find(s.outlier_indices.begin(), s.outlier_indices.end(), 17) !=
              s.outlier_indices.end());
        CHECK(s.outlier_indices.size() <= 32);
    }
    SUBCASE("summary JSON stays bounded") {
        const int n = 500;
        Eigen::MatrixXd X(n, 4);
        Eigen::VectorXd Y(n);
        Rng rng(4);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < 4; ++j) X(i, j) = rng.next_unit();
            Y(i) = rng.normal();
        }
        const auto s = inspect_distribution(X, Y);
        CHECK(s.to_json().dump().size() < 4096); // never echoes the raw data
    }
}

TEST_CASE("inspect_structure") {
    SUBCASE("below 8 rows is an error") {
        Eigen::MatrixXd X(7, 1);
        X.setRandom();
        Eigen::VectorXd Y = X.col(0);
        CHECK_THROWS_AS(inspect_structure(X, Y), InsufficientDataError);
    }
    SUBCASE("exactly linear data recommends rbf with R2 = 1") {
        const int n = 40;
        Eigen::MatrixXd X(n, 3);
        Eigen::VectorXd Y(n);
        Rng rng(5);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < 3; ++j) X(i, j) = rng.next_unit();
            Y(i) = 3.0 * X(i, 0) - 2.0 * X(i, 1) + 0.5;
        }
        const auto rec = inspect_structure(X, Y);
        CHECK(rec.linear_r2 == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(rec.recommended_kernel == "rbf");
    }
    SUBCASE("pure noise: both fits weak, noise floor near var(Y)") {
        const int n = 80;
        Eigen::MatrixXd X(n, 2);
        Eigen::VectorXd Y(n);
        Rng rng(6);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = rng.next_unit();
            X(i, 1) = rng.next_unit();
            Y(i) = rng.normal();
        }
        const auto rec = inspect_structure(X, Y);
        CHECK(rec.linear_r2 <= 0.2);
        CHECK(rec.gp_r2 <= 0.2);
        const double var_y = (Y.array() - Y.mean()).square().sum() / (n - 1);
        CHECK(std::abs(rec.noise_floor - var_y) <= 0.3 * var_y);
    }
    SUBCASE("synthetic landscape sample recommends the smooth nonlinear family") {
        const auto baseline = *BaselineTable::builtin_defaults().find("ASAP7", "IBEX");
        const auto space = with_clock_period_anchor(build_preset_space(PresetLabel::FourParam),
                                                    baseline.ecp_alpha);
        const auto profile = SyntheticProfile::for_circuit(baseline);
        const int n = 100;
        const auto points = sample_uniform(space, n, 7);
        Eigen::MatrixXd X(n, 4);
        Eigen::VectorXd Y(n);
        for (int i = 0; i < n; ++i) {
            const auto unit = to_unit_row(space, points[static_cast<std::size_t>(i)]);
            for (int j = 0; j < 4; ++j) X(i, j) = unit[static_cast<std::size_t>(j)];
            const auto r = synthetic_expected(points[static_cast<std::size_t>(i)], space, profile);
            Y(i) = *r.wl / baseline.wl_alpha + *r.ecp / baseline.ecp_alpha;
        }
        const auto rec = inspect_structure(X, Y);
        CHECK(rec.recommended_kernel == "matern52");
        CHECK(rec.gp_r2 > rec.linear_r2);
    }
}

TEST_CASE("analyze_manifold") {
    SUBCASE("data on a line concentrates the first component") {
        const int n = 50;
        Eigen::MatrixXd X(n, 4);
        Rng rng(8);
        for (int i = 0; i < n; ++i) {
            const double t = rng.next_unit();
            X.row(i) << t, 2 * t, -t, 0.5 * t;
        }
        const auto s = analyze_manifold(X);
        REQUIRE_FALSE(s.degenerate);
        CHECK(s.pca_ratios[0] >= 0.999);
    }
    SUBCASE("isotropic cloud spreads variance evenly") {
        const int n = 200;
        Eigen::MatrixXd X(n, 4);
        Rng rng(9);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 4; ++j) X(i, j) = rng.normal();
        const auto s = analyze_manifold(X);
        for (const double r : s.pca_ratios) {
            CHECK(r >= 0.15);
            CHECK(r <= 0.35);
        }
    }
    SUBCASE("ratios are nonnegative and sum to one") {
        const int n = 60;
        Eigen::MatrixXd X(n, 5);
        Rng rng(10);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 5; ++j) X(i, j) = rng.next_unit() * (j + 1);
        const auto s = analyze_manifold(X);
        double total = 0.0;
        for (const double r : s.pca_ratios) {
            CHECK(r >= 0.0);
            total += r;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("three equidistant points embed equilaterally") {
        Eigen::MatrixXd X(3, 2);
        X << 0, 0, 1, 0, 0.5, std::sqrt(3.0) / 2.0;
        const auto s = analyze_manifold(X);
        const double d01 = (s.mds_coords.row(0) - s.mds_coords.row(1)).norm();
        const double d02 = (s.mds_coords.row(0) - s.mds_coords.row(2)).norm();
        const double d12 = (s.mds_coords.row(1) - s.mds_coords.row(2)).norm();
        CHECK(std::abs(d01 - d02) < 1e-6);
        CHECK(std::abs(d01 - d12) < 1e-6);
    }
    SUBCASE("identical rows are flagged degenerate") {
        Eigen::MatrixXd X = Eigen::MatrixXd::Constant(5, 3, 0.7);
        const auto s = analyze_manifold(X);
        CHECK(s.degenerate);
        CHECK(s.pca_ratios.empty());
    }
}

TEST_CASE("analyze_local") {
    SUBCASE("planted far point is noise with a high LOF score") {
        Eigen::MatrixXd X(41, 2);
        Rng rng(11);
        for (int i = 0; i < 20; ++i)
            X.row(i) << 0.0 + 0.01 * rng.normal(), 0.0 + 0.01 * rng.normal();
        for (int i = 20; i < 40; ++i)
            X.row(i) << 5.0 + 0.01 * rng.normal(), 5.0 + 0.01 * rng.normal();
        X.row(40) << 50.0, -50.0;
        const auto s = analyze_local(X);
        CHECK(s.dbscan_labels[40] == -1);
        CHECK(s.lof_scores[40] > 1.5);
        CHECK(s.cluster_count >= 2);
    }
    SUBCASE("uniform grid has zero noise points") {
        Eigen::MatrixXd X(25, 2);
        int idx = 0;
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) X.row(idx++) << i * 1.0, j * 1.0;
        const auto s = analyze_local(X);
        CHECK(s.noise_count == 0);
    }
    SUBCASE("coincident points follow the unit-score convention") {
        Eigen::MatrixXd X = Eigen::MatrixXd::Constant(5, 2, 1.0);
        const auto s = analyze_local(X);
        for (const double score : s.lof_scores) CHECK(score == doctest::Approx(1.0));
        CHECK(s.cluster_count == 1);
        CHECK(s.noise_count == 0);
    }
}

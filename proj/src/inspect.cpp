#include "flowtune/inspect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include <nlohmann/json.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/optimize.hpp"

namespace flowtune {

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size() || a.size() < 2) return 0.0;
    const double ma = a.mean();
    const double mb = b.mean();
    const Eigen::ArrayXd da = a.array() - ma;
    const Eigen::ArrayXd db = b.array() - mb;
    const double va = da.square().sum();
    const double vb = db.square().sum();
    if (va <= 1e-300 || vb <= 1e-300) return 0.0; // degenerate variance rule
    return (da * db).sum() / std::sqrt(va * vb);
}

double kendall_tau_b(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const auto n = a.size();
    if (n != b.size() || n < 2) return 0.0;
    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double da = a(i) - a(j);
            const double db = b(i) - b(j);
            if (da == 0.0 && db == 0.0) {
                ++ties_a;
                ++ties_b;
            } else if (da == 0.0) {
                ++ties_a;
            } else if (db == 0.0) {
                ++ties_b;
            } else if ((da > 0.0) == (db > 0.0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const long long n0 = static_cast<long long>(n) * (n - 1) / 2;
    const double denom = std::sqrt(static_cast<double>(n0 - ties_a)) *
                         std::sqrt(static_cast<double>(n0 - ties_b));
    if (denom <= 0.0) return 0.0;
    return static_cast<double>(concordant - discordant) / denom;
}

namespace {

// Linear-interpolation quantile on a sorted copy.
double quantile(std::vector<double> sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

} // namespace

InspectSummary inspect_distribution(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                                    const Eigen::VectorXd* Y_surrogate) {
    if (X.rows() != Y.size()) throw DomainError("inspect_distribution: row count mismatch");
    if (Y_surrogate && Y_surrogate->size() != Y.size())
        throw DomainError("inspect_distribution: surrogate length mismatch");

    InspectSummary s;
    const auto n = X.rows();
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        ColumnStats cs;
        cs.name = "x" + std::to_string(c);
        cs.mean = n > 0 ? X.col(c).mean() : 0.0;
        cs.min = n > 0 ? X.col(c).minCoeff() : 0.0;
        cs.max = n > 0 ? X.col(c).maxCoeff() : 0.0;
        cs.stddev = n > 1 ? std::sqrt((X.col(c).array() - cs.mean).square().sum() /
                                      static_cast<double>(n - 1))
                          : 0.0;
        s.per_input_stats.push_back(cs);
    }

    if (n < 3) {
        s.notes = "insufficient data";
        return s;
    }

    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        s.input_target_pearson.push_back(pearson(X.col(c), Y));
        s.input_target_kendall.push_back(kendall_tau_b(X.col(c), Y));
    }

    if (Y_surrogate) {
        std::vector<double> ys, yt;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::isfinite((*Y_surrogate)(i)) && std::isfinite(Y(i))) {
                ys.push_back((*Y_surrogate)(i));
                yt.push_back(Y(i));
            }
        }
        if (ys.size() >= 2) {
            Eigen::VectorXd a = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
            Eigen::VectorXd b = Eigen::Map<Eigen::VectorXd>(yt.data(), static_cast<Eigen::Index>(yt.size()));
            s.surrogate_target_pearson = pearson(a, b);
        }
    }

    // IQR-rule outliers on Y: outside median +/- 1.5 IQR
    std::vector<double> sorted(Y.data(), Y.data() + Y.size());
    std::sort(sorted.begin(), sorted.end());
    const double med = quantile(sorted, 0.5);
    const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    const double lo = med - 1.5 * iqr;
    const double hi = med + 1.5 * iqr;
    for (Eigen::Index i = 0; i < n && static_cast<int>(s.outlier_indices.size()) < kMaxOutlierIndices; ++i)
        if (Y(i) < lo || Y(i) > hi) s.outlier_indices.push_back(static_cast<int>(i));
    return s;
}

nlohmann::json InspectSummary::to_json() const {
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& c : per_input_stats)
        stats.push_back({{"name", c.name},
                         {"mean", c.mean},
                         {"std", c.stddev},
                         {"min", c.min},
                         {"max", c.max}});
    nlohmann::json j{{"per_input_stats", stats},
                     {"input_target_pearson", input_target_pearson},
                     {"input_target_kendall", input_target_kendall},
                     {"outlier_indices", outlier_indices},
                     {"notes", notes}};
    if (surrogate_target_pearson) j["surrogate_target_pearson"] = *surrogate_target_pearson;
    return j;
}

namespace {

struct CvSplit {
    std::vector<Eigen::Index> train, test;
};

std::vector<CvSplit> five_folds(Eigen::Index n) {
    std::vector<CvSplit> folds(5);
    for (int f = 0; f < 5; ++f)
        for (Eigen::Index i = 0; i < n; ++i)
            (i % 5 == f ? folds[static_cast<std::size_t>(f)].test
                        : folds[static_cast<std::size_t>(f)].train)
                .push_back(i);
    return folds;
}

} // namespace

StructureRecommendation inspect_structure(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y) {
    const auto n = X.rows();
    if (n < 8) throw InsufficientDataError("inspect_structure requires at least 8 rows");
    if (n != Y.size()) throw DomainError("inspect_structure: row count mismatch");

    const double y_mean = Y.mean();
    const double ss_tot = (Y.array() - y_mean).square().sum();

    Eigen::VectorXd linear_pred(n), gp_pred(n);
    bool gp_ok = true;
    for (const auto& fold : five_folds(n)) {
        Eigen::MatrixXd Xt(fold.train.size(), X.cols() + 1);
        Eigen::VectorXd yt(fold.train.size());
        for (std::size_t i = 0; i < fold.train.size(); ++i) {
            Xt(static_cast<Eigen::Index>(i), 0) = 1.0;
            Xt.row(static_cast<Eigen::Index>(i)).tail(X.cols()) = X.row(fold.train[i]);
            yt(static_cast<Eigen::Index>(i)) = Y(fold.train[i]);
        }
        const Eigen::VectorXd beta =
            Xt.colPivHouseholderQr().solve(yt); // least squares with intercept
        for (const auto ti : fold.test) {
            Eigen::VectorXd q(X.cols() + 1);
            q(0) = 1.0;
            q.tail(X.cols()) = X.row(ti);
            linear_pred(ti) = q.dot(beta);
        }

        if (gp_ok) {
            try {
                Eigen::MatrixXd Xg(fold.train.size(), X.cols());
                for (std::size_t i = 0; i < fold.train.size(); ++i)
                    Xg.row(static_cast<Eigen::Index>(i)) = X.row(fold.train[i]);
                KernelSpec k = create_kernel("matern52", static_cast<int>(X.cols()));
                GpFitOptions opts;
                opts.refine_length_scale = false;
                const auto model = GpModel::fit(Xg, yt, 1e-6, k, opts);
                Eigen::MatrixXd Xq(fold.test.size(), X.cols());
                for (std::size_t i = 0; i < fold.test.size(); ++i)
                    Xq.row(static_cast<Eigen::Index>(i)) = X.row(fold.test[i]);
                Eigen::VectorXd mu, sd;
                model.predict(Xq, mu, sd);
                for (std::size_t i = 0; i < fold.test.size(); ++i)
                    gp_pred(fold.test[i]) = mu(static_cast<Eigen::Index>(i));
            } catch (const Error&) {
                gp_ok = false;
            }
        }
    }

    StructureRecommendation rec;
    const double ss_lin = (Y - linear_pred).squaredNorm();
    rec.linear_r2 = ss_tot > 1e-300 ? 1.0 - ss_lin / ss_tot : 1.0;
    const double ss_gp = gp_ok ? (Y - gp_pred).squaredNorm()
                               : std::numeric_limits<double>::infinity();
    rec.gp_r2 = gp_ok && ss_tot > 1e-300 ? 1.0 - ss_gp / ss_tot : 0.0;

    const bool linear_better = ss_lin <= ss_gp;
    const Eigen::VectorXd residuals = linear_better ? (Y - linear_pred).eval()
                                                    : (Y - gp_pred).eval();
    rec.noise_floor = residuals.squaredNorm() / static_cast<double>(n);

    // residual roughness: max lag-1 autocorrelation of residuals ordered by
    // each coordinate
    double roughness = 0.0;
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return X(a, c) < X(b, c); });
        Eigen::VectorXd r(n);
        for (Eigen::Index i = 0; i < n; ++i) r(i) = residuals(order[static_cast<std::size_t>(i)]);
        Eigen::VectorXd head = r.head(n - 1);
        Eigen::VectorXd tail = r.tail(n - 1);
        roughness = std::max(roughness, pearson(head, tail));
    }
    rec.residual_roughness = roughness;

    if (rec.linear_r2 >= 0.9) rec.recommended_kernel = "rbf";
    else if (roughness > 0.5) rec.recommended_kernel = "matern32";
    else rec.recommended_kernel = "matern52";
    return rec;
}

nlohmann::json StructureRecommendation::to_json() const {
    return nlohmann::json{{"linear_r2", linear_r2},
                          {"gp_r2", gp_r2},
                          {"recommended_kernel", recommended_kernel},
                          {"noise_floor", noise_floor},
                          {"residual_roughness", residual_roughness}};
}

ManifoldSummary analyze_manifold(const Eigen::MatrixXd& X) {
    const auto n = X.rows();
    if (n < 3) throw InsufficientDataError("analyze_manifold requires at least 3 rows");

    ManifoldSummary s;
    const Eigen::RowVectorXd mean = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - mean;
    if (centered.cwiseAbs().maxCoeff() < 1e-300) {
        s.degenerate = true; // all rows identical: variance ratios undefined
        s.mds_coords = Eigen::MatrixXd::Zero(n, 2);
        return s;
    }

    // PCA via the covariance spectrum
    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pca(cov);
    Eigen::VectorXd evals = pca.eigenvalues().reverse(); // descending
    double total = 0.0;
    for (Eigen::Index i = 0; i < evals.size(); ++i) {
        if (evals(i) < 0.0) evals(i) = 0.0;
        total += evals(i);
    }
    for (Eigen::Index i = 0; i < evals.size(); ++i)
        s.pca_ratios.push_back(total > 0.0 ? evals(i) / total : 0.0);

    // classical MDS from the double-centered squared-distance matrix
    Eigen::MatrixXd d2(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            d2(i, j) = (X.row(i) - X.row(j)).squaredNorm();
    const Eigen::MatrixXd J =
        Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
    const Eigen::MatrixXd B = -0.5 * J * d2 * J;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> mds(B);
    s.mds_coords = Eigen::MatrixXd::Zero(n, 2);
    for (int k = 0; k < 2; ++k) {
        const Eigen::Index idx = n - 1 - k; // eigenvalues ascending in Eigen
        const double lambda = std::max(mds.eigenvalues()(idx), 0.0);
        s.mds_coords.col(k) = mds.eigenvectors().col(idx) * std::sqrt(lambda);
    }
    return s;
}

nlohmann::json ManifoldSummary::to_json() const {
    nlohmann::json j{{"pca_ratios", pca_ratios}, {"degenerate", degenerate}};
    if (mds_coords.rows() > 0) {
        j["mds_extent"] = {
            {"x_min", mds_coords.col(0).minCoeff()},
            {"x_max", mds_coords.col(0).maxCoeff()},
            {"y_min", mds_coords.col(1).minCoeff()},
            {"y_max", mds_coords.col(1).maxCoeff()},
        };
    }
    return j;
}

LocalSummary analyze_local(const Eigen::MatrixXd& X) {
    const auto n = X.rows();
    if (n < 5) throw InsufficientDataError("analyze_local requires at least 5 rows");

    Eigen::MatrixXd dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dist(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = (X.row(i) - X.row(j)).norm();
            dist(i, j) = d;
            dist(j, i) = d;
        }
    }
    double smallest_nonzero = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (dist(i, j) > 0.0 && (smallest_nonzero == 0.0 || dist(i, j) < smallest_nonzero))
                smallest_nonzero = dist(i, j);

    LocalSummary s;

    // ---- LOF with k = min(10, n-1) ----
    const int k = std::min<int>(10, static_cast<int>(n) - 1);
    std::vector<std::vector<Eigen::Index>> neighbors(static_cast<std::size_t>(n));
    Eigen::VectorXd k_dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<Eigen::Index> order;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return dist(i, a) < dist(i, b); });
        k_dist(i) = dist(i, order[static_cast<std::size_t>(k - 1)]);
        // the k-neighborhood includes ties at the k-distance
        for (const auto j : order) {
            if (dist(i, j) <= k_dist(i)) neighbors[static_cast<std::size_t>(i)].push_back(j);
            else break;
        }
    }
    Eigen::VectorXd lrd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double reach_sum = 0.0;
        for (const auto j : neighbors[static_cast<std::size_t>(i)])
            reach_sum += std::max(k_dist(j), dist(i, j));
        double mean_reach = reach_sum / static_cast<double>(neighbors[static_cast<std::size_t>(i)].size());
        if (mean_reach <= 0.0)
            mean_reach = smallest_nonzero > 0.0 ? smallest_nonzero : 1.0; // coincident-point rule
        lrd(i) = 1.0 / mean_reach;
    }
    s.lof_scores.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        if (smallest_nonzero == 0.0) {
            s.lof_scores[static_cast<std::size_t>(i)] = 1.0; // everything coincides
            continue;
        }
        double sum = 0.0;
        for (const auto j : neighbors[static_cast<std::size_t>(i)]) sum += lrd(j);
        s.lof_scores[static_cast<std::size_t>(i)] =
            sum / (static_cast<double>(neighbors[static_cast<std::size_t>(i)].size()) * lrd(i));
    }

    // ---- DBSCAN with eps = median 4-distance, min_pts = 4 ----
    constexpr int kMinPts = 4;
    std::vector<double> four_dists;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> row;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) row.push_back(dist(i, j));
        std::sort(row.begin(), row.end());
        four_dists.push_back(row[std::min<std::size_t>(3, row.size() - 1)]);
    }
    std::sort(four_dists.begin(), four_dists.end());
    const std::size_t m = four_dists.size();
    const double eps = m % 2 == 1 ? four_dists[m / 2]
                                  : 0.5 * (four_dists[m / 2 - 1] + four_dists[m / 2]);
    s.dbscan_eps = eps;

    std::vector<bool> core(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) {
        int count = 0;
        for (Eigen::Index j = 0; j < n; ++j)
            if (dist(i, j) <= eps) ++count; // the point itself counts
        core[static_cast<std::size_t>(i)] = count >= kMinPts;
    }
    s.dbscan_labels.assign(static_cast<std::size_t>(n), -2); // unvisited
    int cluster = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!core[static_cast<std::size_t>(i)] || s.dbscan_labels[static_cast<std::size_t>(i)] >= 0)
            continue;
        // expand a new cluster from this core point
        std::queue<Eigen::Index> frontier;
        frontier.push(i);
        s.dbscan_labels[static_cast<std::size_t>(i)] = cluster;
        while (!frontier.empty()) {
            const auto p = frontier.front();
            frontier.pop();
            if (!core[static_cast<std::size_t>(p)]) continue;
            for (Eigen::Index q = 0; q < n; ++q) {
                if (dist(p, q) > eps) continue;
                if (s.dbscan_labels[static_cast<std::size_t>(q)] < 0) {
                    s.dbscan_labels[static_cast<std::size_t>(q)] = cluster;
                    frontier.push(q);
                }
            }
        }
        ++cluster;
    }
    s.cluster_count = cluster;
    for (auto& label : s.dbscan_labels) {
        if (label == -2) label = -1;
        if (label == -1) ++s.noise_count;
    }
    return s;
}

nlohmann::json LocalSummary::to_json() const {
    // bounded form: aggregate facts plus the top LOF indices only
    std::vector<int> order(lof_scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return lof_scores[static_cast<std::size_t>(a)] > lof_scores[static_cast<std::size_t>(b)]; });
    if (static_cast<int>(order.size()) > kMaxOutlierIndices) order.resize(kMaxOutlierIndices);
    double max_lof = 0.0;
    for (double v : lof_scores) max_lof = std::max(max_lof, v);
    return nlohmann::json{{"noise_count", noise_count},
                          {"cluster_count", cluster_count},
                          {"dbscan_eps", dbscan_eps},
                          {"max_lof", max_lof},
                          {"top_lof_indices", order}};
}

} // namespace flowtune

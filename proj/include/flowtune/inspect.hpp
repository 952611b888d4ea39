#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace flowtune {

/// Hard cap on outlier indices echoed back in a summary.
inline constexpr int kMaxOutlierIndices = 32;

struct ColumnStats {
    std::string name;
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double max = 0.0;
};

/// Compact statistical summary of inputs vs target; never echoes raw data.
struct InspectSummary {
    std::vector<ColumnStats> per_input_stats;
    std::vector<double> input_target_pearson;
    std::vector<double> input_target_kendall;
    std::optional<double> surrogate_target_pearson;
    std::vector<int> outlier_indices;
    std::string notes;

    nlohmann::json to_json() const;
};

/// Per-column stats, Pearson and Kendall tau-b against Y, surrogate/target
/// Pearson on jointly present rows (NaN marks a gap), and IQR-rule outliers
/// on Y. Fewer than 3 rows yields notes="insufficient data".
InspectSummary inspect_distribution(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                                    const Eigen::VectorXd* Y_surrogate = nullptr);

struct StructureRecommendation {
    double linear_r2 = 0.0;
    double gp_r2 = 0.0;
    std::string recommended_kernel; // rbf | matern52 | matern32
    double noise_floor = 0.0;       // residual variance of the better model
    double residual_roughness = 0.0;

    nlohmann::json to_json() const;
};

/// 5-fold CV comparison of a linear model and a default GP; recommends a
/// kernel family and a noise floor. Throws InsufficientDataError below 8 rows.
StructureRecommendation inspect_structure(const Eigen::MatrixXd& X, const Eigen::VectorXd& Y);

struct ManifoldSummary {
    std::vector<double> pca_ratios; // explained-variance ratios, all components
    Eigen::MatrixXd mds_coords;     // n x 2 classical MDS embedding
    bool degenerate = false;

    nlohmann::json to_json() const; // bounded form: ratios + embedding extent only
};

/// PCA explained-variance ratios plus 2-D classical MDS coordinates.
ManifoldSummary analyze_manifold(const Eigen::MatrixXd& X);

struct LocalSummary {
    std::vector<double> lof_scores;
    std::vector<int> dbscan_labels; // -1 marks noise
    int noise_count = 0;
    int cluster_count = 0;
    double dbscan_eps = 0.0;

    nlohmann::json to_json() const; // bounded form
};

/// LOF with k=min(10, n-1) and DBSCAN with eps = median 4-distance, min_pts=4.
LocalSummary analyze_local(const Eigen::MatrixXd& X);

/// Pearson correlation; 0 for degenerate (zero-variance) inputs.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Kendall tau-b (tie-corrected), O(n^2) pair count.
double kendall_tau_b(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

} // namespace flowtune

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flowtune {

/// Standard score with a zero-variance guard (all-equal inputs map to zeros);
/// sample standard deviation.
Eigen::VectorXd z_scores(const Eigen::VectorXd& values);

/// Minimization framing: q = -z(predictions) + beta * z(uncertainties).
Eigen::VectorXd create_quality_scores(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& predictions,
                                      const Eigen::VectorXd* uncertainties = nullptr,
                                      double beta = 0.5);

struct SelectionRequest {
    Eigen::MatrixXd X;       // m x d unit-cube coordinates
    Eigen::MatrixXd quality; // m x q, higher is better; column 0 is the primary score
    int n_points = 1;
    std::string method;      // top_quality | pareto | max_min
    std::uint64_t seed = 0;  // reserved; all methods are deterministic
};

/// Exactly n_points unique indices. top_quality sorts by score; pareto peels
/// nondominated fronts (crowding fills/truncates); max_min runs a
/// farthest-point traversal seeded at the best-quality index.
std::vector<int> select_points(const SelectionRequest& request);

/// Brute-force nondominated indices over a maximize-everything objective
/// matrix; the O(m^2) oracle pareto selection is tested against.
std::vector<int> nondominated_indices(const Eigen::MatrixXd& objectives);

/// Greedy quality/diversity mix over a caller-supplied distance matrix:
/// first pick is argmax quality, later picks maximize
/// 0.5 z(quality) + 0.5 z(min distance to the selected set).
std::vector<int> hybrid_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& quality,
                               const Eigen::MatrixXd& distance_matrix, int n_points);

/// Greedy nearest-neighbor entropy proxy: gain = z(quality) +
/// log(min Euclidean distance to selected + 1e-12).
std::vector<int> entropy_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& quality,
                                int n_points);

/// kNN-graph exclusion select: pick argmax quality among unexcluded nodes,
/// exclude its 1-hop neighbors; relax and fill by quality if the pool
/// exhausts. The graph is a symmetrized kNN graph with k = min(10, m-1).
std::vector<int> graph_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& quality,
                              int n_points);

/// Same exclusion mechanics over an explicit adjacency list.
std::vector<int> graph_select_on(const std::vector<std::vector<int>>& adjacency,
                                 const Eigen::VectorXd& quality, int n_points);

} // namespace flowtune

#include "flowtune/agglom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "flowtune/errors.hpp"

namespace flowtune {

Eigen::VectorXd z_scores(const Eigen::VectorXd& values) {
    const auto n = values.size();
    if (n < 2) return Eigen::VectorXd::Zero(n);
    const double mean = values.mean();
    const double var = (values.array() - mean).square().sum() / static_cast<double>(n - 1);
    if (var <= 1e-300) return Eigen::VectorXd::Zero(n);
    return (values.array() - mean) / std::sqrt(var);
}

Eigen::VectorXd create_quality_scores(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& predictions,
                                      const Eigen::VectorXd* uncertainties, double beta) {
    if (X.rows() != predictions.size() || y.size() != predictions.size())
        throw DomainError("create_quality_scores: length mismatch");
    if (uncertainties && uncertainties->size() != predictions.size())
        throw DomainError("create_quality_scores: uncertainty length mismatch");
    Eigen::VectorXd q = -z_scores(predictions);
    if (uncertainties) q += beta * z_scores(*uncertainties);
    return q;
}

namespace {

void validate_selection(Eigen::Index m, int n_points) {
    if (n_points < 1) throw DomainError("selection requires n_points >= 1");
    if (n_points > m) throw DomainError("selection requires n_points <= pool size");
}

std::vector<int> order_by_quality(const Eigen::VectorXd& quality) {
    std::vector<int> order(static_cast<std::size_t>(quality.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return quality(a) > quality(b); });
    return order;
}

// true iff a dominates b (no worse everywhere, better somewhere; maximize all columns)
bool dominates(const Eigen::MatrixXd& o, int a, int b) {
    bool strictly_better = false;
    for (Eigen::Index c = 0; c < o.cols(); ++c) {
        if (o(a, c) < o(b, c)) return false;
        if (o(a, c) > o(b, c)) strictly_better = true;
    }
    return strictly_better;
}

// NSGA-style crowding distance over an objective matrix, within one front.
std::vector<double> crowding_distance(const Eigen::MatrixXd& o, const std::vector<int>& front) {
    const auto inf = std::numeric_limits<double>::infinity();
    std::vector<double> crowd(front.size(), 0.0);
    for (Eigen::Index c = 0; c < o.cols(); ++c) {
        std::vector<std::size_t> order(front.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return o(front[a], c) < o(front[b], c);
        });
        crowd[order.front()] = inf;
        crowd[order.back()] = inf;
        const double span = o(front[order.back()], c) - o(front[order.front()], c);
        if (span <= 0.0) continue;
        for (std::size_t i = 1; i + 1 < order.size(); ++i)
            crowd[order[i]] +=
                (o(front[order[i + 1]], c) - o(front[order[i - 1]], c)) / span;
    }
    return crowd;
}

} // namespace

std::vector<int> nondominated_indices(const Eigen::MatrixXd& objectives) {
    std::vector<int> front;
    for (int i = 0; i < objectives.rows(); ++i) {
        bool dominated = false;
        for (int j = 0; j < objectives.rows() && !dominated; ++j)
            if (j != i && dominates(objectives, j, i)) dominated = true;
        if (!dominated) front.push_back(i);
    }
    return front;
}

std::vector<int> select_points(const SelectionRequest& request) {
    const auto m = request.X.rows();
    if (request.quality.rows() != m)
        throw DomainError("select_points: quality rows must match X rows");
    if (!request.quality.allFinite()) throw DomainError("select_points: scores must be finite");
    validate_selection(m, request.n_points);
    const Eigen::VectorXd primary = request.quality.col(0);

    if (request.method == "top_quality") {
        auto order = order_by_quality(primary);
        order.resize(static_cast<std::size_t>(request.n_points));
        return order;
    }

    if (request.method == "max_min") {
        std::vector<int> selected;
        std::vector<bool> taken(static_cast<std::size_t>(m), false);
        const int first = order_by_quality(primary).front();
        selected.push_back(first);
        taken[static_cast<std::size_t>(first)] = true;
        while (static_cast<int>(selected.size()) < request.n_points) {
            int best = -1;
            double best_dist = -1.0;
            for (int i = 0; i < m; ++i) {
                if (taken[static_cast<std::size_t>(i)]) continue;
                double min_d = std::numeric_limits<double>::infinity();
                for (const int s : selected)
                    min_d = std::min(min_d, (request.X.row(i) - request.X.row(s)).norm());
                if (min_d > best_dist + 1e-15) {
                    best_dist = min_d;
                    best = i;
                }
            }
            selected.push_back(best);
            taken[static_cast<std::size_t>(best)] = true;
        }
        return selected;
    }

    if (request.method == "pareto") {
        // objective matrix: the quality columns, plus a nearest-neighbor
        // spacing column when only one quality column exists
        Eigen::MatrixXd objectives = request.quality;
        if (objectives.cols() == 1) {
            Eigen::VectorXd spacing(m);
            for (int i = 0; i < m; ++i) {
                double min_d = std::numeric_limits<double>::infinity();
                for (int j = 0; j < m; ++j)
                    if (j != i)
                        min_d = std::min(min_d, (request.X.row(i) - request.X.row(j)).norm());
                spacing(i) = m > 1 ? min_d : 0.0;
            }
            objectives.conservativeResize(Eigen::NoChange, 2);
            objectives.col(1) = spacing;
        }
        // peel fronts, fill in order, truncate the last front by crowding
        std::vector<int> remaining(static_cast<std::size_t>(m));
        std::iota(remaining.begin(), remaining.end(), 0);
        std::vector<int> selected;
        while (static_cast<int>(selected.size()) < request.n_points) {
            Eigen::MatrixXd sub(remaining.size(), objectives.cols());
            for (std::size_t i = 0; i < remaining.size(); ++i)
                sub.row(static_cast<Eigen::Index>(i)) = objectives.row(remaining[i]);
            const auto local_front = nondominated_indices(sub);
            std::vector<int> front;
            for (const int li : local_front) front.push_back(remaining[static_cast<std::size_t>(li)]);

            const int space_left = request.n_points - static_cast<int>(selected.size());
            if (static_cast<int>(front.size()) <= space_left) {
                selected.insert(selected.end(), front.begin(), front.end());
            } else {
                const auto crowd = crowding_distance(objectives, front);
                std::vector<std::size_t> order(front.size());
                std::iota(order.begin(), order.end(), 0);
                std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    return crowd[a] > crowd[b];
                });
                for (int k = 0; k < space_left; ++k)
                    selected.push_back(front[order[static_cast<std::size_t>(k)]]);
            }
            std::vector<int> next;
            for (const int r : remaining)
                if (std::find(front.begin(), front.end(), r) == front.end()) next.push_back(r);
            remaining = std::move(next);
            if (remaining.empty()) break;
        }
        selected.resize(static_cast<std::size_t>(request.n_points));
        return selected;
    }

    throw ConfigError("unknown selection method '" + request.method +
                      "'; supported: top_quality, pareto, max_min");
}

std::vector<int> hybrid_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& quality,
                               const Eigen::MatrixXd& distance_matrix, int n_points) {
    const auto m = X.rows();
    validate_selection(m, n_points);
    if (distance_matrix.rows() != m || distance_matrix.cols() != m)
        throw DomainError("hybrid_select: distance matrix shape mismatch");
    for (Eigen::Index i = 0; i < m; ++i) {
        if (distance_matrix(i, i) != 0.0)
            throw DomainError("hybrid_select: distance matrix diagonal must be zero");
        for (Eigen::Index j = i + 1; j < m; ++j)
            if (std::abs(distance_matrix(i, j) - distance_matrix(j, i)) > 1e-12)
                throw DomainError("hybrid_select: distance matrix must be symmetric");
    }

    const Eigen::VectorXd zq = z_scores(quality);
    std::vector<int> selected;
    std::vector<bool> taken(static_cast<std::size_t>(m), false);
    const int first = order_by_quality(quality).front();
    selected.push_back(first);
    taken[static_cast<std::size_t>(first)] = true;

    while (static_cast<int>(selected.size()) < n_points) {
        Eigen::VectorXd min_dist(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (const int s : selected) d = std::min(d, distance_matrix(i, s));
            min_dist(i) = d;
        }
        const Eigen::VectorXd zd = z_scores(min_dist);
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < m; ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            const double score = 0.5 * zq(i) + 0.5 * zd(i);
            if (score > best_score + 1e-15) {
                best_score = score;
                best = i;
            }
        }
        selected.push_back(best);
        taken[static_cast<std::size_t>(best)] = true;
    }
    return selected;
}

std::vector<int> entropy_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& quality,
                                int n_points) {
    const auto m = X.rows();
    validate_selection(m, n_points);

    const Eigen::VectorXd zq = z_scores(quality);
    std::vector<int> selected;
    std::vector<bool> taken(static_cast<std::size_t>(m), false);
    const int first = order_by_quality(quality).front();
    selected.push_back(first);
    taken[static_cast<std::size_t>(first)] = true;

    while (static_cast<int>(selected.size()) < n_points) {
        int best = -1;
        double best_gain = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < m; ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            double min_d = std::numeric_limits<double>::infinity();
            for (const int s : selected) min_d = std::min(min_d, (X.row(i) - X.row(s)).norm());
            const double gain = zq(i) + std::log(min_d + 1e-12);
            if (gain > best_gain + 1e-15) {
                best_gain = gain;
                best = i;
            }
        }
        selected.push_back(best);
        taken[static_cast<std::size_t>(best)] = true;
    }
    return selected;
}

std::vector<int> graph_select_on(const std::vector<std::vector<int>>& adjacency,
                                 const Eigen::VectorXd& quality, int n_points) {
    const auto m = static_cast<Eigen::Index>(adjacency.size());
    validate_selection(m, n_points);
    if (quality.size() != m) throw DomainError("graph_select: quality length mismatch");

    std::vector<int> selected;
    std::vector<bool> taken(adjacency.size(), false);
    std::vector<bool> excluded(adjacency.size(), false);

    const auto order = order_by_quality(quality);
    while (static_cast<int>(selected.size()) < n_points) {
        int pick = -1;
        for (const int i : order) {
            if (taken[static_cast<std::size_t>(i)] || excluded[static_cast<std::size_t>(i)])
                continue;
            pick = i;
            break;
        }
        if (pick < 0) break; // pool exhausted; relax exclusion below
        taken[static_cast<std::size_t>(pick)] = true;
        selected.push_back(pick);
        for (const int nb : adjacency[static_cast<std::size_t>(pick)])
            excluded[static_cast<std::size_t>(nb)] = true;
    }
    // relaxed fill by quality
    for (const int i : order) {
        if (static_cast<int>(selected.size()) >= n_points) break;
        if (!taken[static_cast<std::size_t>(i)]) {
            taken[static_cast<std::size_t>(i)] = true;
            selected.push_back(i);
        }
    }
    return selected;
}

std::vector<int> graph_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& quality,
                              int n_points) {
    const auto m = X.rows();
    validate_selection(m, n_points);
    const int k = std::min<int>(10, static_cast<int>(m) - 1);

    // symmetrized kNN graph (edge when either endpoint lists the other)
    std::vector<std::vector<int>> adjacency(static_cast<std::size_t>(m));
    if (k > 0) {
        for (Eigen::Index i = 0; i < m; ++i) {
            std::vector<int> order;
            for (int j = 0; j < m; ++j)
                if (j != i) order.push_back(j);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return (X.row(i) - X.row(a)).norm() < (X.row(i) - X.row(b)).norm();
            });
            for (int t = 0; t < k; ++t) {
                const int j = order[static_cast<std::size_t>(t)];
                auto& ai = adjacency[static_cast<std::size_t>(i)];
                auto& aj = adjacency[static_cast<std::size_t>(j)];
                if (std::find(ai.begin(), ai.end(), j) == ai.end()) ai.push_back(j);
                if (std::find(aj.begin(), aj.end(), static_cast<int>(i)) == aj.end())
                    aj.push_back(static_cast<int>(i));
            }
        }
    }
    return graph_select_on(adjacency, quality, n_points);
}

} // namespace flowtune

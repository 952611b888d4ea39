#include "flowtune/optimize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "flowtune/errors.hpp"
#include "flowtune/rng.hpp"

namespace flowtune {

const char* kernel_family_name(KernelFamily family) {
    switch (family) {
    case KernelFamily::Rbf: return "rbf";
    case KernelFamily::Matern32: return "matern32";
    case KernelFamily::Matern52: return "matern52";
    }
    return "unknown";
}

namespace {

std::string strip_spaces(std::string s) {
    s.erase(std::remove_if(s.begin(), s.end(),
                           [](unsigned char c) { return std::isspace(c); }),
            s.end());
    return s;
}

} // namespace

KernelSpec create_kernel(const std::string& spec_text, int input_dim) {
    if (input_dim < 1) throw ConfigError("kernel input_dim must be >= 1");
    const std::string text = strip_spaces(spec_text);

    std::string family = text;
    std::string args;
    if (const auto open = text.find('('); open != std::string::npos) {
        if (text.back() != ')') throw ConfigError("malformed kernel spec: " + spec_text);
        family = text.substr(0, open);
        args = text.substr(open + 1, text.size() - open - 2);
    }

    KernelSpec spec;
    spec.input_dim = input_dim;
    if (family == "rbf") spec.family = KernelFamily::Rbf;
    else if (family == "matern32") spec.family = KernelFamily::Matern32;
    else if (family == "matern52") spec.family = KernelFamily::Matern52;
    else
        throw ConfigError("unknown kernel family '" + family +
                          "'; supported: rbf, matern32, matern52");

    // optional key=value args: ls (shared length scale), var (signal variance)
    std::size_t pos = 0;
    while (pos < args.size()) {
        auto comma = args.find(',', pos);
        if (comma == std::string::npos) comma = args.size();
        const std::string kv = args.substr(pos, comma - pos);
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed kernel argument: " + kv);
        const std::string key = kv.substr(0, eq);
        const double value = std::stod(kv.substr(eq + 1));
        if (key == "ls") {
            if (value <= 0.0) throw ConfigError("length scale must be positive");
            spec.length_scales.assign(static_cast<std::size_t>(input_dim), value);
        } else if (key == "var") {
            if (value <= 0.0) throw ConfigError("signal variance must be positive");
            spec.signal_variance = value;
        } else {
            throw ConfigError("unknown kernel argument: " + key);
        }
        pos = comma + 1;
    }
    return spec;
}

namespace {

double scaled_distance(const KernelSpec& k, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double r2 = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double d = (a(i) - b(i)) / k.length_scales[static_cast<std::size_t>(i)];
        r2 += d * d;
    }
    return std::sqrt(r2);
}

double kernel_value(const KernelSpec& k, double r) {
    switch (k.family) {
    case KernelFamily::Rbf:
        return k.signal_variance * std::exp(-0.5 * r * r);
    case KernelFamily::Matern32: {
        const double s = std::sqrt(3.0) * r;
        return k.signal_variance * (1.0 + s) * std::exp(-s);
    }
    case KernelFamily::Matern52: {
        const double s = std::sqrt(5.0) * r;
        return k.signal_variance * (1.0 + s + s * s / 3.0) * std::exp(-s);
    }
    }
    return 0.0;
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& k, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B) {
    Eigen::MatrixXd K(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < B.rows(); ++j)
            K(i, j) = kernel_value(k, scaled_distance(k, A.row(i), B.row(j)));
    return K;
}

double median_pairwise_distance(const Eigen::MatrixXd& X) {
    std::vector<double> dists;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = i + 1; j < X.rows(); ++j) {
            const double d = (X.row(i) - X.row(j)).norm();
            if (d > 0.0) dists.push_back(d);
        }
    if (dists.empty()) return 1.0;
    std::sort(dists.begin(), dists.end());
    const std::size_t n = dists.size();
    return n % 2 == 1 ? dists[n / 2] : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
}

struct CholFit {
    Eigen::MatrixXd lower;
    double jitter = 0.0;
    bool ok = false;
};

CholFit cholesky_with_jitter(const Eigen::MatrixXd& K, double jitter_start, double jitter_max) {
    CholFit fit;
    // try without jitter first, then escalate x10
    double jitter = 0.0;
    for (;;) {
        Eigen::MatrixXd Kj = K;
        if (jitter > 0.0)
            Kj.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(Kj);
        if (llt.info() == Eigen::Success) {
            fit.lower = llt.matrixL();
            fit.jitter = jitter;
            fit.ok = true;
            return fit;
        }
        if (jitter == 0.0) jitter = jitter_start;
        else if (jitter >= jitter_max) return fit;
        else jitter = std::min(jitter * 10.0, jitter_max);
    }
}

} // namespace

GpModel GpModel::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double noise_variance,
                     KernelSpec kernel, GpFitOptions options) {
    Eigen::VectorXd noise = Eigen::VectorXd::Constant(y.size(), noise_variance);
    return fit(X, y, noise, std::move(kernel), options);
}

GpModel GpModel::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& noise_variance, KernelSpec kernel,
                     GpFitOptions options) {
    if (X.rows() < 2) throw InsufficientDataError("GP fit requires at least 2 rows");
    if (X.rows() != y.size() || X.rows() != noise_variance.size())
        throw DomainError("GP fit: inconsistent row counts");
    if (!y.allFinite() || !X.allFinite()) throw DomainError("GP fit: non-finite inputs");
    if (kernel.input_dim == 0) kernel.input_dim = static_cast<int>(X.cols());
    if (kernel.input_dim != X.cols()) throw DomainError("GP fit: kernel dimension mismatch");

    GpModel m;
    m.y_mean_ = y.mean();
    const double var = (y.array() - m.y_mean_).square().sum() /
                       std::max<double>(1.0, static_cast<double>(y.size()) - 1.0);
    m.y_std_ = std::max(std::sqrt(var), 1e-12);
    const Eigen::VectorXd y_std = (y.array() - m.y_mean_) / m.y_std_;
    const Eigen::VectorXd noise_std_units = noise_variance / (m.y_std_ * m.y_std_);

    const bool unresolved = kernel.length_scales.empty();
    if (unresolved) {
        const double median = median_pairwise_distance(X);
        double best_scale = median;
        if (options.refine_length_scale && X.rows() >= 10) {
            // 5-fold CV over {0.5, 1, 2} x median, round-robin folds
            double best_mse = std::numeric_limits<double>::infinity();
            for (const double mult : {0.5, 1.0, 2.0}) {
                KernelSpec trial = kernel;
                trial.length_scales.assign(static_cast<std::size_t>(kernel.input_dim),
                                           mult * median);
                double sse = 0.0;
                int count = 0;
                bool usable = true;
                for (int fold = 0; fold < 5 && usable; ++fold) {
                    std::vector<Eigen::Index> train_idx, test_idx;
                    for (Eigen::Index i = 0; i < X.rows(); ++i)
                        (i % 5 == fold ? test_idx : train_idx).push_back(i);
                    if (train_idx.size() < 2 || test_idx.empty()) continue;
                    Eigen::MatrixXd Xt(train_idx.size(), X.cols());
                    Eigen::VectorXd yt(train_idx.size()), nt(train_idx.size());
                    for (std::size_t i = 0; i < train_idx.size(); ++i) {
                        Xt.row(static_cast<Eigen::Index>(i)) = X.row(train_idx[i]);
                        yt(static_cast<Eigen::Index>(i)) = y_std(train_idx[i]);
                        nt(static_cast<Eigen::Index>(i)) = noise_std_units(train_idx[i]);
                    }
                    Eigen::MatrixXd K = kernel_matrix(trial, Xt, Xt);
                    K.diagonal() += nt;
                    const auto chol =
                        cholesky_with_jitter(K, options.jitter_start, options.jitter_max);
                    if (!chol.ok) {
                        usable = false;
                        break;
                    }
                    const Eigen::VectorXd alpha =
                        chol.lower.transpose().triangularView<Eigen::Upper>().solve(
                            chol.lower.triangularView<Eigen::Lower>().solve(yt));
                    for (const auto ti : test_idx) {
                        Eigen::MatrixXd q(1, X.cols());
                        q.row(0) = X.row(ti);
                        const Eigen::MatrixXd ks = kernel_matrix(trial, q, Xt);
                        const double pred = (ks * alpha)(0);
                        const double err = pred - y_std(ti);
                        sse += err * err;
                        ++count;
                    }
                }
                if (usable && count > 0) {
                    const double mse = sse / count;
                    if (mse < best_mse - 1e-12) {
                        best_mse = mse;
                        best_scale = mult * median;
                    }
                }
            }
        }
        kernel.length_scales.assign(static_cast<std::size_t>(kernel.input_dim), best_scale);
    }
    for (double ls : kernel.length_scales)
        if (ls <= 0.0) throw ConfigError("length scales must be positive");

    Eigen::MatrixXd K = kernel_matrix(kernel, X, X);
    K.diagonal() += noise_std_units;
    const auto chol = cholesky_with_jitter(K, options.jitter_start, options.jitter_max);
    if (!chol.ok)
        throw ConditioningError("kernel matrix not positive definite at maximum jitter");

    m.X_ = X;
    m.kernel_ = std::move(kernel);
    m.chol_lower_ = chol.lower;
    m.jitter_used_ = chol.jitter;
    m.alpha_ = m.chol_lower_.transpose().triangularView<Eigen::Upper>().solve(
        m.chol_lower_.triangularView<Eigen::Lower>().solve(y_std));
    return m;
}

void GpModel::predict(const Eigen::MatrixXd& X_star, Eigen::VectorXd& mu,
                      Eigen::VectorXd& std) const {
    if (X_star.cols() != X_.cols()) throw DomainError("predict: dimension mismatch");
    const Eigen::MatrixXd Ks = kernel_matrix(kernel_, X_star, X_); // m x n
    mu = Ks * alpha_;
    // v = L^-1 Ks^T; var = k(x,x) - sum v^2
    const Eigen::MatrixXd v =
        chol_lower_.triangularView<Eigen::Lower>().solve(Ks.transpose());
    std.resize(X_star.rows());
    for (Eigen::Index i = 0; i < X_star.rows(); ++i) {
        double var = kernel_.signal_variance - v.col(i).squaredNorm();
        if (var < 0.0) var = 0.0;
        std(i) = std::sqrt(var) * y_std_;
    }
    mu = (mu.array() * y_std_ + y_mean_).matrix();
}

Eigen::VectorXd GpModel::predict_mean_gradient(const Eigen::VectorXd& x_star) const {
    if (x_star.size() != X_.cols()) throw DomainError("gradient: dimension mismatch");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(x_star.size());
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
        const Eigen::VectorXd xi = X_.row(i);
        const double r = scaled_distance(kernel_, x_star, xi);
        double factor = 0.0; // dk/dx = factor * (x - xi) ./ ls^2
        switch (kernel_.family) {
        case KernelFamily::Rbf:
            factor = -kernel_value(kernel_, r);
            break;
        case KernelFamily::Matern32:
            factor = -3.0 * kernel_.signal_variance * std::exp(-std::sqrt(3.0) * r);
            break;
        case KernelFamily::Matern52: {
            const double s = std::sqrt(5.0) * r;
            factor = -(5.0 / 3.0) * kernel_.signal_variance * (1.0 + s) * std::exp(-s);
            break;
        }
        }
        for (Eigen::Index d = 0; d < x_star.size(); ++d) {
            const double ls = kernel_.length_scales[static_cast<std::size_t>(d)];
            grad(d) += alpha_(i) * factor * (x_star(d) - xi(d)) / (ls * ls);
        }
    }
    return grad * y_std_;
}

double normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
}

double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

Eigen::VectorXd expected_improvement(const Eigen::VectorXd& mu, const Eigen::VectorXd& std,
                                     double y_best) {
    if (mu.size() != std.size()) throw DomainError("EI: size mismatch");
    Eigen::VectorXd ei(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const double s = std(i);
        if (s < 0.0) throw DomainError("EI: negative stddev");
        if (s < 1e-12) {
            ei(i) = 0.0;
            continue;
        }
        const double improvement = y_best - mu(i);
        const double z = improvement / s;
        double value = improvement * normal_cdf(z) + s * normal_pdf(z);
        if (value < 0.0) value = 0.0;
        ei(i) = value;
    }
    return ei;
}

SurrogateFusion handle_surrogate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y_true,
                                 const Eigen::VectorXd& surrogate_values, double base_noise) {
    const auto n = y_true.size();
    if (X.rows() != n || surrogate_values.size() != n)
        throw DomainError("handle_surrogate: inconsistent row counts");

    std::vector<Eigen::Index> paired, true_only, surrogate_only;
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool has_true = std::isfinite(y_true(i));
        const bool has_surr = std::isfinite(surrogate_values(i));
        if (!has_true && !has_surr)
            throw DomainError("handle_surrogate: row " + std::to_string(i) +
                              " has neither a true nor a surrogate value");
        if (has_true && has_surr) paired.push_back(i);
        else if (has_true) true_only.push_back(i);
        else surrogate_only.push_back(i);
    }
    if (paired.empty() && true_only.empty())
        throw DomainError("handle_surrogate: no true values anywhere");

    SurrogateFusion out;
    out.X = X;
    out.y_combined.resize(n);
    out.uncertainty.resize(n);
    out.paired_rows = static_cast<int>(paired.size());

    double a = 1.0, b = 0.0;
    double fill_uncertainty;
    if (paired.size() >= 3) {
        // least-squares affine map y = a*s + b on the paired rows
        double s_mean = 0.0, y_mean = 0.0;
        for (const auto i : paired) {
            s_mean += surrogate_values(i);
            y_mean += y_true(i);
        }
        s_mean /= static_cast<double>(paired.size());
        y_mean /= static_cast<double>(paired.size());
        double sxx = 0.0, sxy = 0.0;
        for (const auto i : paired) {
            const double ds = surrogate_values(i) - s_mean;
            sxx += ds * ds;
            sxy += ds * (y_true(i) - y_mean);
        }
        if (sxx > 1e-300) {
            a = sxy / sxx;
            b = y_mean - a * s_mean;
        } else {
            a = 0.0;
            b = y_mean;
        }
        double sse = 0.0;
        for (const auto i : paired) {
            const double r = y_true(i) - (a * surrogate_values(i) + b);
            sse += r * r;
        }
        fill_uncertainty =
            std::max(std::sqrt(sse / static_cast<double>(paired.size())),
                     kSurrogateUncertaintyFloor);
    } else {
        // too few pairs: identity map, uncertainty inflated to 2 std of
        // everything observed on the true side
        out.identity_fallback = true;
        double mean = 0.0;
        int count = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (std::isfinite(y_true(i))) {
                mean += y_true(i);
                ++count;
            }
        mean /= std::max(count, 1);
        double var = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (std::isfinite(y_true(i))) var += (y_true(i) - mean) * (y_true(i) - mean);
        var /= std::max(count - 1, 1);
        fill_uncertainty = std::max(2.0 * std::sqrt(var), kSurrogateUncertaintyFloor);
    }

    out.slope = a;
    out.intercept = b;
    const double base = std::max(base_noise, kSurrogateUncertaintyFloor);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::isfinite(y_true(i))) {
            out.y_combined(i) = y_true(i);
            out.uncertainty(i) = base;
        } else {
            out.y_combined(i) = a * surrogate_values(i) + b;
            out.uncertainty(i) = fill_uncertainty;
        }
    }
    return out;
}

Eigen::MatrixXd latin_hypercube(int n_points, int n_dims, std::uint64_t seed) {
    if (n_points < 1 || n_dims < 1)
        throw DomainError("latin_hypercube requires n_points >= 1 and n_dims >= 1");
    Eigen::MatrixXd samples(n_points, n_dims);
    for (int d = 0; d < n_dims; ++d) {
        Rng rng(hash_combine(seed, hash_combine(fnv1a64("lhs_dim"), static_cast<std::uint64_t>(d))));
        std::vector<int> strata(static_cast<std::size_t>(n_points));
        std::iota(strata.begin(), strata.end(), 0);
        rng.shuffle(strata);
        for (int i = 0; i < n_points; ++i) {
            const double offset = rng.next_open_unit(); // keep strictly inside the stratum
            samples(i, d) = (strata[static_cast<std::size_t>(i)] + offset) / n_points;
        }
    }
    return samples;
}

std::vector<Candidate> propose_candidates(const GpModel& model, const ParamSpace& space,
                                          int n_candidates, double y_best, std::uint64_t seed) {
    if (n_candidates < 1) throw DomainError("propose_candidates requires n_candidates >= 1");
    if (!std::isfinite(y_best))
        throw DomainError("propose_candidates: y_best must be finite");
    if (model.train_size() == 0) throw DomainError("propose_candidates: unfitted model");

    const int pool_size = std::max(20 * n_candidates, 2000);
    const Eigen::MatrixXd pool =
        latin_hypercube(pool_size, static_cast<int>(space.size()), seed);
    Eigen::VectorXd mu, std_dev;
    model.predict(pool, mu, std_dev);
    const Eigen::VectorXd ei = expected_improvement(mu, std_dev, y_best);

    std::vector<int> order(static_cast<std::size_t>(pool_size));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return ei(a) > ei(b); });

    std::vector<Candidate> out;
    out.reserve(static_cast<std::size_t>(n_candidates));
    for (int k = 0; k < n_candidates; ++k) {
        const int idx = order[static_cast<std::size_t>(k)];
        std::vector<double> unit(space.size());
        for (std::size_t j = 0; j < space.size(); ++j)
            unit[j] = pool(idx, static_cast<Eigen::Index>(j));
        out.push_back({from_unit_row(space, unit), ei(idx)});
    }
    return out;
}

} // namespace flowtune

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowtune/param_space.hpp"

namespace flowtune {

enum class KernelFamily { Rbf, Matern32, Matern52 };

const char* kernel_family_name(KernelFamily family);

struct KernelSpec {
    KernelFamily family = KernelFamily::Matern52;
    /// Per-dimension length scales; empty means "median heuristic at fit time".
    std::vector<double> length_scales;
    double signal_variance = 1.0;
    int input_dim = 0;
};

/// Parses "matern52", "rbf(ls=0.5)", "matern32(ls=0.3, var=2)".
/// Unknown families raise a ConfigError listing the supported ones.
KernelSpec create_kernel(const std::string& spec_text, int input_dim);

struct GpFitOptions {
    double jitter_start = 1e-8;
    double jitter_max = 1e-2;
    /// Try {0.5, 1, 2} x median length scale by 5-fold CV when the spec left
    /// scales unresolved.
    bool refine_length_scale = true;
};

/// Gaussian-process regressor on unit-cube inputs with internally
/// standardized targets. Immutable after fit; predict is const and
/// safe to call concurrently.
class GpModel {
public:
    static GpModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double noise_variance, KernelSpec kernel, GpFitOptions options = {});
    /// Heteroscedastic variant: one noise variance per training point.
    static GpModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& noise_variance, KernelSpec kernel,
                       GpFitOptions options = {});

    /// Posterior mean and stddev of the latent function, in target units.
    void predict(const Eigen::MatrixXd& X_star, Eigen::VectorXd& mu,
                 Eigen::VectorXd& std) const;

    /// Analytic gradient of the posterior mean at one query point.
    Eigen::VectorXd predict_mean_gradient(const Eigen::VectorXd& x_star) const;

    const KernelSpec& kernel() const { return kernel_; }
    double y_mean() const { return y_mean_; }
    double y_std() const { return y_std_; }
    double jitter_used() const { return jitter_used_; }
    Eigen::Index train_size() const { return X_.rows(); }

private:
    GpModel() = default;

    Eigen::MatrixXd X_;
    Eigen::VectorXd alpha_;
    Eigen::MatrixXd chol_lower_;
    KernelSpec kernel_;
    double y_mean_ = 0.0;
    double y_std_ = 1.0;
    double jitter_used_ = 0.0;
};

/// Expected Improvement under the minimization convention:
/// z = (y_best - mu)/std, ei = (y_best - mu) Phi(z) + std phi(z);
/// deterministic points (std < 1e-12) score 0.
Eigen::VectorXd expected_improvement(const Eigen::VectorXd& mu, const Eigen::VectorXd& std,
                                     double y_best);

/// Standard normal pdf / cdf used by the acquisition.
double normal_pdf(double z);
double normal_cdf(double z);

struct SurrogateFusion {
    Eigen::MatrixXd X;
    Eigen::VectorXd y_combined;
    Eigen::VectorXd uncertainty; // per-row noise stddev, floored at 1e-6
    double slope = 1.0;
    double intercept = 0.0;
    int paired_rows = 0;
    bool identity_fallback = false;
};

/// Floor on fused per-row uncertainty.
inline constexpr double kSurrogateUncertaintyFloor = 1e-6;

/// Fits y ~ a*s + b on rows holding both values and fills the gaps in
/// y_true (NaN marks a gap) from the surrogate. Fewer than 3 paired rows
/// falls back to the identity map with inflated uncertainty.
SurrogateFusion handle_surrogate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y_true,
                                 const Eigen::VectorXd& surrogate_values,
                                 double base_noise = kSurrogateUncertaintyFloor);

/// Latin hypercube in (0,1)^d: exactly one sample per stratum per dimension.
Eigen::MatrixXd latin_hypercube(int n_points, int n_dims, std::uint64_t seed);

struct Candidate {
    ParamVector params;
    double ei = 0.0;
};

/// Scores a Latin-hypercube pool of max(20*n, 2000) points by EI and returns
/// the top n decoded to valid ParamVectors (ties: lower pool index).
std::vector<Candidate> propose_candidates(const GpModel& model, const ParamSpace& space,
                                          int n_candidates, double y_best, std::uint64_t seed);

} // namespace flowtune

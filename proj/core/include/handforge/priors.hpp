#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "handforge/types.hpp"

namespace handforge {

/// Mahalanobis shape energy. The shape basis is pre-scaled by sqrt-variance,
/// so the Mahalanobis distance reduces to the squared coefficient norm.
inline double shape_prior_energy(const VecX& beta) { return beta.squaredNorm(); }

/// Quadratic prior on the body pose (wrist-inclusive, fingers excluded).
inline double quadratic_pose_prior_energy(const VecX& body_pose) { return body_pose.squaredNorm(); }

/// Single Gaussian pose prior with full covariance.
struct GaussianPosePrior {
  VecX mean;
  MatX covariance;
};

/// Gaussian mixture prior with the sum approximated by a max: the energy is
/// min over components of the negative component log-density. Precomputes
/// Cholesky whiteners and log-normalizers.
struct GmmPrior {
  VecX weights;                   // N, positive, sums to 1
  MatX means;                     // N x d
  std::vector<MatX> covariances;  // N of d x d, SPD

  // Derived by finalize():
  std::vector<MatX> whiteners;        // L_j^{-1} with Sigma_j = L_j L_j^T
  std::vector<double> log_normalizers;  // -log g_j + (d/2) log 2pi + (1/2) log det Sigma_j

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }

  /// Validates shapes and SPD-ness, fills whiteners/log_normalizers.
  void finalize();
};

/// EM fit with k-means++ seeding (fixed seed), at most `max_iters` iterations,
/// stopping when the relative log-likelihood change drops below `tol`.
/// Covariance eigenvalues are floored at 1e-6. Requires samples >= 10 * N.
/// When `loglik_trace` is given it receives the per-iteration log-likelihood
/// (non-decreasing).
GmmPrior fit_gmm(const std::vector<VecX>& samples, int components, std::uint64_t seed,
                 int max_iters = 100, double tol = 1e-8,
                 std::vector<double>* loglik_trace = nullptr);

/// Max-approximated mixture energy: min_j -log(g_j N(x; mu_j, Sigma_j)).
double gmm_energy(const GmmPrior& prior, const VecX& x);

/// Exact mixture energy -log sum_j g_j N(x; mu_j, Sigma_j); satisfies
/// exact <= max-approximated <= exact + log N.
double gmm_energy_exact(const GmmPrior& prior, const VecX& x);

/// Component attaining the min; ties break to the lowest index.
int gmm_active_component(const GmmPrior& prior, const VecX& x);

/// Gradient of gmm_energy with the active component held fixed.
VecX gmm_energy_gradient(const GmmPrior& prior, const VecX& x);

void save_gmm(const std::filesystem::path& path, const GmmPrior& prior);
GmmPrior load_gmm(const std::filesystem::path& path);

}  // namespace handforge

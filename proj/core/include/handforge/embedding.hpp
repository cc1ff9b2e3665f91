#pragma once

#include <vector>

#include "handforge/types.hpp"

namespace handforge {

/// Linear PCA pose manifold: orthonormal basis rows over mean-centered,
/// canonicalized poses, variances sorted non-increasing.
struct PoseEmbedding {
  VecX mean;        // full_dim
  MatX basis;       // k x full_dim, orthonormal rows
  VecX variances;   // k, non-increasing
  int full_dim = 0;

  int components() const { return static_cast<int>(basis.rows()); }

  /// Orthonormality / ordering / sizing checks; throws DataError.
  void validate() const;
};

/// PCA fit over pose vectors (each canonicalized to (-pi, pi] per joint before
/// fitting). Requires at least k+1 samples and k <= dimension. Components are
/// sign-fixed so the entry of largest magnitude is positive.
PoseEmbedding fit_pose_pca(const std::vector<VecX>& poses, int k);

/// Coefficients of a pose: basis * (canonicalize(pose) - mean).
VecX embedding_encode(const PoseEmbedding& embedding, const VecX& pose);

/// Pose from coefficients: mean + basis^T * coefficients. Affine, hence
/// differentiable with constant Jacobian basis^T.
VecX embedding_decode(const PoseEmbedding& embedding, const VecX& coefficients);

/// Cumulative explained-variance fractions, one entry per retained component.
/// Monotone non-decreasing in [0, 1]; the last entry is 1 when every component
/// is retained. Degenerate zero-variance data yields all ones.
VecX compactness_curve(const PoseEmbedding& embedding);

}  // namespace handforge

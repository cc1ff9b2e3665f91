#pragma once

#include <vector>

#include "handforge/types.hpp"

namespace handforge {

/// Joint hierarchy. Joint 0 is the global root (parent -1); parents precede
/// children so a single forward pass orders every chain.
struct KinematicTree {
  Eigen::VectorXi parents;

  int part_count() const { return static_cast<int>(parents.size()); }
  int articulated_count() const { return part_count() - 1; }

  /// Throws DataError unless parents[0] == -1, parents[i] in [0, i) otherwise.
  void validate() const;

  /// True if `ancestor` lies on the chain from `joint` to the root (or equals it).
  bool is_ancestor_or_self(int ancestor, int joint) const;
};

/// Rotation matrix from an axis-angle 3-vector (Rodrigues). Zero maps to identity.
/// Throws DataError on non-finite input.
Mat3 rodrigues(const Vec3& axis_angle);

/// d vec(R) / d axis_angle with row-major vec ordering, exact closed form.
Eigen::Matrix<double, 9, 3> rodrigues_jacobian(const Vec3& axis_angle);

/// Axis-angle of a proper rotation with magnitude in [0, pi], quaternion based
/// so the branch near pi stays stable.
Vec3 rotation_log(const Mat3& rotation);

/// Map each joint's axis-angle magnitude into (-pi, pi]; +pi is kept at the
/// boundary. Idempotent, and the represented rotations are unchanged.
VecX canonicalize_pose(const VecX& pose);

/// Rigid per-part transforms x -> R x + t, world frame, relative to the rest
/// configuration (identity at the rest pose).
struct PartTransforms {
  std::vector<Mat3> rotation;
  std::vector<Vec3> translation;

  int count() const { return static_cast<int>(rotation.size()); }
  Vec3 apply(int part, const Vec3& x) const { return rotation[part] * x + translation[part]; }

  /// Throws DataError if any rotation block fails orthonormality or det +1
  /// within 1e-10.
  void validate() const;
};

/// Pose to part transforms. The root rotates about rest_joints.row(0); each
/// child composes its parent with a local rotation about its own rest joint.
/// pose has 3 coordinates per part (root orientation first).
PartTransforms forward_kinematics(const KinematicTree& tree, const PointMatrix& rest_joints,
                                  const VecX& pose);

/// Part transforms together with their derivatives, used by the analytic
/// model Jacobian.
struct FkDerivatives {
  PartTransforms transforms;
  // d transforms / d pose coordinate q, indexed [q][part].
  std::vector<std::vector<Mat3>> rotation_dpose;
  std::vector<std::vector<Vec3>> translation_dpose;
  // Translation is linear in the rest joints: per part a 3 x 3(K+1) map.
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> translation_djoints;
};

FkDerivatives forward_kinematics_derivs(const KinematicTree& tree,
                                        const PointMatrix& rest_joints, const VecX& pose);

/// Linear blend skinning: each output vertex is the weight-blended rigid
/// transform of its input vertex. weights is V x parts, rows on the simplex
/// (validated: nonnegative, sum 1 within 1e-8).
PointMatrix linear_blend_skin(const PointMatrix& shaped_vertices, const PartTransforms& transforms,
                              const SparseMatRM& weights);

}  // namespace handforge

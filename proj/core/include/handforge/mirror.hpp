#pragma once

#include "handforge/model.hpp"

namespace handforge {

/// Reflection across the sagittal plane x = 0: M = diag(-1, 1, 1).
/// M * M = I and det M = -1. All mirroring operations are involutions.
inline Mat3 mirror_matrix() { return Vec3(-1, 1, 1).asDiagonal(); }

/// Reflect points: x components negated.
PointMatrix mirror_points(const PointMatrix& points);

/// Reverse face winding so outward normals stay outward after reflection.
FaceMatrix mirror_faces(const FaceMatrix& faces);

/// Reflect each shape direction's per-vertex offsets (columns of a 3V x n basis).
MatX mirror_shape_blendshapes(const MatX& shape_basis);

/// Conjugate each joint rotation by M (R' = M R M) and return to axis-angle
/// through the rotation logarithm. The rest pose is a fixed point.
VecX mirror_pose(const VecX& pose);

/// Mirror a pose-corrective basis (3V x 9K): output offsets reflect through M
/// and every 9-entry input block is conjugated, so that evaluating the result
/// at a mirrored pose reproduces the mirrored correction.
MatX mirror_pose_blendshapes(const MatX& pose_basis);

/// Mirror a complete model: template, shape and pose bases mirrored, faces
/// rewound, blend weights / joint regressor / kinematic tree untouched.
/// A stored pose embedding is carried across through the axis-angle mirror map.
SkinnedModel mirror_model(const SkinnedModel& model);

}  // namespace handforge

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "handforge/embedding.hpp"
#include "handforge/kinematics.hpp"
#include "handforge/mesh.hpp"

namespace handforge {

/// Metadata for a hand spliced into a composed body model: which composed
/// joints belong to the hand, which body vertices it owns, and an optional
/// low-dimensional pose embedding over its articulated coordinates.
struct HandSection {
  std::string side;                       // "right" or "left"
  std::vector<int> joint_indices;         // composed-model joint ids, chain order
  std::vector<int> vertex_indices;        // composed-model vertex ids
  std::optional<PoseEmbedding> embedding;
};

/// Skinned statistical shape model: template, sqrt-variance-scaled shape
/// basis, pose-corrective basis driven by rotation-matrix elements, blend
/// weights, sparse joint regressor and kinematic tree.
struct SkinnedModel {
  KinematicTree tree;
  PointMatrix template_vertices;  // V x 3
  FaceMatrix faces;
  MatX shape_basis;      // 3V x |beta|, columns orthogonal after unscaling
  MatX pose_basis;       // 3V x pose_feature_count()
  SparseMatRM blend_weights;    // V x parts, rows on the simplex
  SparseMatRM joint_regressor;  // parts x V, rows nonnegative, sum 1
  VecX rest_pose;        // 3 * parts, zeros by convention
  bool include_root_features = false;
  std::string units = "m";

  std::optional<PoseEmbedding> pose_embedding;  // over articulated coords
  std::vector<HandSection> hands;               // present on composed models

  int vertex_count() const { return static_cast<int>(template_vertices.rows()); }
  int part_count() const { return tree.part_count(); }
  int shape_dim() const { return static_cast<int>(shape_basis.cols()); }
  int pose_dim() const { return 3 * part_count(); }
  int feature_joint_count() const {
    return include_root_features ? part_count() : tree.articulated_count();
  }
  int pose_feature_count() const { return 9 * feature_joint_count(); }

  TriMesh template_mesh() const { return TriMesh{template_vertices, faces, {}}; }
};

/// Full invariant check (dimensions, simplex rows, regressor rows,
/// orthogonality of the unscaled shape basis). Throws DataError.
void validate_model(const SkinnedModel& model);

/// Rotation-feature vector: concatenated vec(R_j(pose)) - vec(R_j(rest)),
/// row-major elements, one 9-block per included joint. Zero at the rest pose.
VecX pose_feature(const SkinnedModel& model, const VecX& pose);

/// d pose_feature / d pose, block diagonal over joints.
MatX pose_feature_jacobian(const SkinnedModel& model, const VecX& pose);

/// Per-vertex offsets sum_n beta_n S_n.
PointMatrix shape_blend(const SkinnedModel& model, const VecX& beta);

/// Per-vertex offsets sum_n feature_n P_n.
PointMatrix pose_blend(const SkinnedModel& model, const VecX& pose);

/// Joint positions regressed from shape-corrected vertices.
PointMatrix joint_locations(const SkinnedModel& model, const PointMatrix& shaped_vertices);

/// Pose and skin the model. Rest inputs reproduce the template exactly.
TriMesh evaluate(const SkinnedModel& model, const VecX& beta, const VecX& pose,
                 const Vec3& translation);

/// evaluate() together with the analytic Jacobian of the flattened vertices,
/// columns ordered [beta | pose | translation].
struct EvalResult {
  PointMatrix vertices;
  MatX jacobian;  // 3V x (shape_dim + pose_dim + 3)
};
EvalResult evaluate_with_jacobian(const SkinnedModel& model, const VecX& beta, const VecX& pose,
                                  const Vec3& translation, bool with_jacobian = true);

/// Invert skinning and subtract both blend-shape corrections, recovering a
/// rest-frame template estimate for vertices aligned at a known (beta, pose,
/// translation). Vertices whose blended transform is near singular are listed
/// in `warnings` (solved by pseudo-inverse).
struct UnposeResult {
  PointMatrix rest_vertices;
  std::vector<int> warnings;
};
UnposeResult unpose(const SkinnedModel& model, const VecX& beta, const VecX& pose,
                    const Vec3& translation, const PointMatrix& aligned_vertices);

/// Vertex correspondence of one hand model into the body topology.
struct HandAttachment {
  int wrist_joint = -1;        // body joint the hand chains splice under
  Eigen::VectorXi vertex_map;  // hand vertex -> body vertex
};

/// Compose a body model with trained hand models: hand joints splice under
/// each wrist; blend weights, pose correctives and regressor rows in the hand
/// region come from the hand models; the body keeps the shape space. Blend
/// weights blend linearly across `wrist_blend_rings` rings at the seam.
SkinnedModel attach_hands(const SkinnedModel& body, const SkinnedModel& right_hand,
                          const SkinnedModel& left_hand, const HandAttachment& right_map,
                          const HandAttachment& left_map, int wrist_blend_rings = 1);

}  // namespace handforge

#include "handforge/mirror.hpp"

namespace handforge {
namespace {

// Entry signs of conjugation by diag(-1,1,1): element (a,b) flips sign when
// exactly one of a, b is the x row/column.
double conj_sign(int a, int b) {
  const double sa = a == 0 ? -1.0 : 1.0;
  const double sb = b == 0 ? -1.0 : 1.0;
  return sa * sb;
}

}  // namespace

PointMatrix mirror_points(const PointMatrix& points) {
  PointMatrix out = points;
  out.col(0) = -out.col(0);
  return out;
}

FaceMatrix mirror_faces(const FaceMatrix& faces) {
  FaceMatrix out = faces;
  out.col(1).swap(out.col(2));
  return out;
}

MatX mirror_shape_blendshapes(const MatX& shape_basis) {
  if (shape_basis.rows() % 3 != 0)
    throw DataError("mirror_shape_blendshapes: rows not divisible by 3");
  MatX out = shape_basis;
  for (int v = 0; v < out.rows() / 3; ++v) out.row(3 * v) = -out.row(3 * v);
  return out;
}

VecX mirror_pose(const VecX& pose) {
  if (pose.size() % 3 != 0) throw DataError("mirror_pose: length not divisible by 3");
  const Mat3 m = mirror_matrix();
  VecX out(pose.size());
  for (int j = 0; j < pose.size() / 3; ++j) {
    const Mat3 conj = m * rodrigues(pose.segment<3>(3 * j)) * m;
    out.segment<3>(3 * j) = rotation_log(conj);
  }
  return out;
}

MatX mirror_pose_blendshapes(const MatX& pose_basis) {
  if (pose_basis.rows() % 3 != 0)
    throw DataError("mirror_pose_blendshapes: rows not divisible by 3");
  if (pose_basis.cols() % 9 != 0)
    throw DataError("mirror_pose_blendshapes: feature count not divisible by 9");

  MatX out = pose_basis;
  // Output reflection: negate x offsets.
  for (int v = 0; v < out.rows() / 3; ++v) out.row(3 * v) = -out.row(3 * v);
  // Input conjugation: sign per rotation-matrix element within each 9-block.
  for (int block = 0; block < out.cols() / 9; ++block)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        const double s = conj_sign(a, b);
        if (s < 0) out.col(9 * block + 3 * a + b) *= -1.0;
      }
  return out;
}

SkinnedModel mirror_model(const SkinnedModel& model) {
  if (!model.hands.empty())
    throw DataError("mirror_model: composed body+hands models cannot be mirrored");

  SkinnedModel out = model;
  out.template_vertices = mirror_points(model.template_vertices);
  out.faces = mirror_faces(model.faces);
  if (model.shape_basis.size() != 0)
    out.shape_basis = mirror_shape_blendshapes(model.shape_basis);
  if (model.pose_basis.size() != 0)
    out.pose_basis = mirror_pose_blendshapes(model.pose_basis);
  // Blend weights, joint regressor, tree and rest pose carry over unchanged;
  // rest joints re-derive through the regressor and the mirrored template.

  if (model.pose_embedding) {
    // Conjugation in axis-angle coordinates is the linear per-joint map
    // (x, y, z) -> (x, -y, -z); apply it to the mean and basis columns.
    PoseEmbedding emb = *model.pose_embedding;
    for (int j = 0; j < emb.full_dim / 3; ++j) {
      emb.mean[3 * j + 1] = -emb.mean[3 * j + 1];
      emb.mean[3 * j + 2] = -emb.mean[3 * j + 2];
      emb.basis.col(3 * j + 1) *= -1.0;
      emb.basis.col(3 * j + 2) *= -1.0;
    }
    out.pose_embedding = std::move(emb);
  }
  return out;
}

}  // namespace handforge

#include "handforge/kinematics.hpp"

#include <cmath>

namespace handforge {

void KinematicTree::validate() const {
  if (parents.size() < 1) throw DataError("KinematicTree: no joints");
  if (parents[0] != -1) throw DataError("KinematicTree: joint 0 must be the root (parent -1)");
  for (int i = 1; i < parents.size(); ++i)
    if (parents[i] < 0 || parents[i] >= i)
      throw DataError("KinematicTree: parents must be topologically ordered (parent[i] < i)");
}

bool KinematicTree::is_ancestor_or_self(int ancestor, int joint) const {
  for (int j = joint; j != -1; j = parents[j])
    if (j == ancestor) return true;
  return false;
}

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

constexpr double kTinyAngle = 1e-12;

}  // namespace

Mat3 rodrigues(const Vec3& axis_angle) {
  if (!axis_angle.allFinite()) throw DataError("rodrigues: non-finite axis-angle");
  const double angle = axis_angle.norm();
  if (angle < kTinyAngle) {
    // Second-order Taylor keeps the zero-pose path exact and the gradient smooth.
    const Mat3 k = skew(axis_angle);
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const Vec3 axis = axis_angle / angle;
  const Mat3 k = skew(axis);
  return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

Eigen::Matrix<double, 9, 3> rodrigues_jacobian(const Vec3& axis_angle) {
  if (!axis_angle.allFinite()) throw DataError("rodrigues_jacobian: non-finite axis-angle");
  Eigen::Matrix<double, 9, 3> jac;
  const double angle2 = axis_angle.squaredNorm();
  const Mat3 rot = rodrigues(axis_angle);
  for (int i = 0; i < 3; ++i) {
    Mat3 dR;
    if (angle2 < kTinyAngle * kTinyAngle) {
      dR = skew(Vec3::Unit(i));
    } else {
      // Gallego & Yezzi: dR/dv_i = (v_i [v]x + [v x (I - R) e_i]x) / |v|^2 * R.
      const Vec3 w = axis_angle.cross((Mat3::Identity() - rot) * Vec3::Unit(i));
      dR = ((axis_angle[i] * skew(axis_angle) + skew(w)) / angle2) * rot;
    }
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) jac(3 * r + c, i) = dR(r, c);
  }
  return jac;
}

Vec3 rotation_log(const Mat3& rotation) {
  // Shepperd-style quaternion extraction: pick the largest of (trace, diag)
  // so the division is always well conditioned, including near angle pi.
  const Mat3& m = rotation;
  double qw, qx, qy, qz;
  const double trace = m.trace();
  if (trace > 0.0) {
    double s = std::sqrt(trace + 1.0) * 2.0;
    qw = 0.25 * s;
    qx = (m(2, 1) - m(1, 2)) / s;
    qy = (m(0, 2) - m(2, 0)) / s;
    qz = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    qw = (m(2, 1) - m(1, 2)) / s;
    qx = 0.25 * s;
    qy = (m(0, 1) + m(1, 0)) / s;
    qz = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    qw = (m(0, 2) - m(2, 0)) / s;
    qx = (m(0, 1) + m(1, 0)) / s;
    qy = 0.25 * s;
    qz = (m(1, 2) + m(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    qw = (m(1, 0) - m(0, 1)) / s;
    qx = (m(0, 2) + m(2, 0)) / s;
    qy = (m(1, 2) + m(2, 1)) / s;
    qz = 0.25 * s;
  }
  if (qw < 0.0) {
    qw = -qw;
    qx = -qx;
    qy = -qy;
    qz = -qz;
  }
  const Vec3 v(qx, qy, qz);
  const double vnorm = v.norm();
  const double angle = 2.0 * std::atan2(vnorm, qw);
  if (vnorm < kTinyAngle) return 2.0 * v;  // small-angle limit: q = (1, aa/2)
  return (angle / vnorm) * v;
}

VecX canonicalize_pose(const VecX& pose) {
  if (pose.size() % 3 != 0) throw DataError("canonicalize_pose: length not divisible by 3");
  VecX out = pose;
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  for (int j = 0; j < pose.size() / 3; ++j) {
    Vec3 aa = pose.segment<3>(3 * j);
    const double angle = aa.norm();
    if (angle <= M_PI || angle < kTinyAngle) continue;
    double wrapped = std::fmod(angle, kTwoPi);
    if (wrapped > M_PI) wrapped -= kTwoPi;  // lands in (-pi, pi]
    out.segment<3>(3 * j) = aa * (wrapped / angle);
  }
  return out;
}

void PartTransforms::validate() const {
  for (int k = 0; k < count(); ++k) {
    const Mat3& r = rotation[k];
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-10)
      throw DataError("PartTransforms: rotation block not orthonormal");
    if (std::abs(r.determinant() - 1.0) > 1e-10)
      throw DataError("PartTransforms: rotation determinant != +1");
  }
}

PartTransforms forward_kinematics(const KinematicTree& tree, const PointMatrix& rest_joints,
                                  const VecX& pose) {
  const int parts = tree.part_count();
  if (rest_joints.rows() != parts)
    throw DataError("forward_kinematics: rest_joints count != joint count");
  if (pose.size() != 3 * parts)
    throw DataError("forward_kinematics: pose length != 3 * joint count");

  std::vector<Mat3> world_rot(parts);
  std::vector<Vec3> world_t(parts);
  for (int k = 0; k < parts; ++k) {
    const Mat3 local = rodrigues(pose.segment<3>(3 * k));
    const Vec3 joint = rest_joints.row(k);
    if (k == 0) {
      world_rot[k] = local;
      world_t[k] = joint;
    } else {
      const int p = tree.parents[k];
      const Vec3 offset = joint - Vec3(rest_joints.row(p));
      world_rot[k] = world_rot[p] * local;
      world_t[k] = world_t[p] + world_rot[p] * offset;
    }
  }

  PartTransforms out;
  out.rotation.resize(parts);
  out.translation.resize(parts);
  for (int k = 0; k < parts; ++k) {
    const Vec3 joint = rest_joints.row(k);
    out.rotation[k] = world_rot[k];
    out.translation[k] = world_t[k] - world_rot[k] * joint;
  }
  return out;
}

FkDerivatives forward_kinematics_derivs(const KinematicTree& tree,
                                        const PointMatrix& rest_joints, const VecX& pose) {
  const int parts = tree.part_count();
  const int ncoords = 3 * parts;
  FkDerivatives out;
  out.transforms = forward_kinematics(tree, rest_joints, pose);

  // Recompute the raw world chain (rotation about origin + world translation).
  std::vector<Mat3> world_rot(parts);
  std::vector<Vec3> world_t(parts);
  std::vector<Mat3> local(parts);
  for (int k = 0; k < parts; ++k) {
    local[k] = rodrigues(pose.segment<3>(3 * k));
    const Vec3 joint = rest_joints.row(k);
    if (k == 0) {
      world_rot[k] = local[k];
      world_t[k] = joint;
    } else {
      const int p = tree.parents[k];
      world_rot[k] = world_rot[p] * local[k];
      world_t[k] = world_t[p] + world_rot[p] * (joint - Vec3(rest_joints.row(p)));
    }
  }

  // Pose derivatives, forward accumulation over the chain.
  out.rotation_dpose.assign(ncoords, std::vector<Mat3>(parts, Mat3::Zero()));
  out.translation_dpose.assign(ncoords, std::vector<Vec3>(parts, Vec3::Zero()));
  std::vector<Eigen::Matrix<double, 9, 3>> dlocal(parts);
  for (int k = 0; k < parts; ++k) dlocal[k] = rodrigues_jacobian(pose.segment<3>(3 * k));

  for (int q = 0; q < ncoords; ++q) {
    const int joint_of_q = q / 3;
    const int comp = q % 3;
    Mat3 dlocal_q;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) dlocal_q(r, c) = dlocal[joint_of_q](3 * r + c, comp);

    auto& dR = out.rotation_dpose[q];
    auto& dt = out.translation_dpose[q];
    std::vector<Mat3> dworld_rot(parts, Mat3::Zero());
    std::vector<Vec3> dworld_t(parts, Vec3::Zero());
    for (int k = joint_of_q; k < parts; ++k) {
      if (!tree.is_ancestor_or_self(joint_of_q, k)) continue;
      const Vec3 joint = rest_joints.row(k);
      if (k == 0) {
        dworld_rot[k] = dlocal_q;
      } else {
        const int p = tree.parents[k];
        dworld_rot[k] = dworld_rot[p] * local[k];
        if (k == joint_of_q) dworld_rot[k] += world_rot[p] * dlocal_q;
        dworld_t[k] = dworld_t[p] + dworld_rot[p] * (joint - Vec3(rest_joints.row(p)));
      }
      dR[k] = dworld_rot[k];
      dt[k] = dworld_t[k] - dworld_rot[k] * joint;
    }
  }

  // Rest-joint derivatives: rotations are unaffected, translations are linear.
  out.translation_djoints.assign(parts, Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, ncoords));
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> dworld_t_dj(
      parts, Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, ncoords));
  for (int k = 0; k < parts; ++k) {
    if (k == 0) {
      dworld_t_dj[k].block<3, 3>(0, 0) = Mat3::Identity();
    } else {
      const int p = tree.parents[k];
      dworld_t_dj[k] = dworld_t_dj[p];
      dworld_t_dj[k].block<3, 3>(0, 3 * k) += world_rot[p];
      dworld_t_dj[k].block<3, 3>(0, 3 * p) -= world_rot[p];
    }
    out.translation_djoints[k] = dworld_t_dj[k];
    out.translation_djoints[k].block<3, 3>(0, 3 * k) -= world_rot[k];
  }
  return out;
}

PointMatrix linear_blend_skin(const PointMatrix& shaped_vertices, const PartTransforms& transforms,
                              const SparseMatRM& weights) {
  if (weights.rows() != shaped_vertices.rows())
    throw DataError("linear_blend_skin: weight rows != vertex count");
  if (weights.cols() != transforms.count())
    throw DataError("linear_blend_skin: weight cols != part count");

  PointMatrix out(shaped_vertices.rows(), 3);
  for (int v = 0; v < shaped_vertices.rows(); ++v) {
    double row_sum = 0.0;
    Vec3 posed = Vec3::Zero();
    const Vec3 x = shaped_vertices.row(v);
    for (SparseMatRM::InnerIterator it(weights, v); it; ++it) {
      if (it.value() < 0.0)
        throw DataError("linear_blend_skin: negative blend weight at vertex " +
                        std::to_string(v));
      row_sum += it.value();
      posed += it.value() * transforms.apply(static_cast<int>(it.col()), x);
    }
    if (std::abs(row_sum - 1.0) > 1e-8)
      throw DataError("linear_blend_skin: weight row " + std::to_string(v) +
                      " sums to " + std::to_string(row_sum) + ", expected 1");
    out.row(v) = posed;
  }
  return out;
}

}  // namespace handforge

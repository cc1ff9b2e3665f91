#include "handforge/model.hpp"

#include <Eigen/Dense>

#include <set>

namespace handforge {

void validate_model(const SkinnedModel& model) {
  model.tree.validate();
  const int nv = model.vertex_count();
  const int parts = model.part_count();
  if (nv == 0) throw DataError("SkinnedModel: empty template");
  if (model.shape_basis.rows() != 3 * nv && model.shape_basis.size() != 0)
    throw DataError("SkinnedModel: shape basis rows != 3V");
  if (model.pose_basis.size() != 0 &&
      (model.pose_basis.rows() != 3 * nv || model.pose_basis.cols() != model.pose_feature_count()))
    throw DataError("SkinnedModel: pose basis must be 3V x 9K");
  if (model.blend_weights.rows() != nv || model.blend_weights.cols() != parts)
    throw DataError("SkinnedModel: blend weights must be V x parts");
  if (model.joint_regressor.rows() != parts || model.joint_regressor.cols() != nv)
    throw DataError("SkinnedModel: joint regressor must be parts x V");
  if (model.rest_pose.size() != 3 * parts)
    throw DataError("SkinnedModel: rest pose length != 3 * parts");

  for (int v = 0; v < nv; ++v) {
    double sum = 0.0;
    for (SparseMatRM::InnerIterator it(model.blend_weights, v); it; ++it) {
      if (it.value() < 0.0) throw DataError("SkinnedModel: negative blend weight");
      sum += it.value();
    }
    if (std::abs(sum - 1.0) > 1e-8)
      throw DataError("SkinnedModel: blend weight row " + std::to_string(v) + " not on simplex");
  }
  for (int j = 0; j < parts; ++j) {
    double sum = 0.0;
    for (SparseMatRM::InnerIterator it(model.joint_regressor, j); it; ++it) {
      if (it.value() < 0.0) throw DataError("SkinnedModel: negative regressor weight");
      sum += it.value();
    }
    if (std::abs(sum - 1.0) > 1e-8)
      throw DataError("SkinnedModel: regressor row " + std::to_string(j) + " does not sum to 1");
  }

  // Shape directions must be mutually orthogonal once the sqrt-variance
  // scaling is removed.
  for (int a = 0; a < model.shape_dim(); ++a) {
    const double na = model.shape_basis.col(a).norm();
    if (na == 0.0) continue;
    for (int b = a + 1; b < model.shape_dim(); ++b) {
      const double nb = model.shape_basis.col(b).norm();
      if (nb == 0.0) continue;
      if (std::abs(model.shape_basis.col(a).dot(model.shape_basis.col(b))) / (na * nb) > 1e-8)
        throw DataError("SkinnedModel: shape basis directions not orthogonal");
    }
  }
}

namespace {

int first_feature_joint(const SkinnedModel& model) { return model.include_root_features ? 0 : 1; }

}  // namespace

VecX pose_feature(const SkinnedModel& model, const VecX& pose) {
  if (pose.size() != model.pose_dim()) throw DataError("pose_feature: pose length mismatch");
  VecX feature(model.pose_feature_count());
  int out = 0;
  for (int j = first_feature_joint(model); j < model.part_count(); ++j) {
    const Mat3 r = rodrigues(pose.segment<3>(3 * j));
    const Mat3 r0 = rodrigues(model.rest_pose.segment<3>(3 * j));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) feature[out++] = r(a, b) - r0(a, b);
  }
  return feature;
}

MatX pose_feature_jacobian(const SkinnedModel& model, const VecX& pose) {
  if (pose.size() != model.pose_dim())
    throw DataError("pose_feature_jacobian: pose length mismatch");
  MatX jac = MatX::Zero(model.pose_feature_count(), model.pose_dim());
  int row = 0;
  for (int j = first_feature_joint(model); j < model.part_count(); ++j) {
    jac.block<9, 3>(row, 3 * j) = rodrigues_jacobian(pose.segment<3>(3 * j));
    row += 9;
  }
  return jac;
}

PointMatrix shape_blend(const SkinnedModel& model, const VecX& beta) {
  if (beta.size() != model.shape_dim()) throw DataError("shape_blend: beta length mismatch");
  if (beta.size() == 0) return PointMatrix::Zero(model.vertex_count(), 3);
  return unflatten_points(model.shape_basis * beta);
}

PointMatrix pose_blend(const SkinnedModel& model, const VecX& pose) {
  if (model.pose_basis.size() == 0) return PointMatrix::Zero(model.vertex_count(), 3);
  return unflatten_points(model.pose_basis * pose_feature(model, pose));
}

PointMatrix joint_locations(const SkinnedModel& model, const PointMatrix& shaped_vertices) {
  if (shaped_vertices.rows() != model.vertex_count())
    throw DataError("joint_locations: vertex count mismatch");
  return model.joint_regressor * shaped_vertices;
}

TriMesh evaluate(const SkinnedModel& model, const VecX& beta, const VecX& pose,
                 const Vec3& translation) {
  EvalResult result = evaluate_with_jacobian(model, beta, pose, translation, false);
  return TriMesh{std::move(result.vertices), model.faces, {}};
}

EvalResult evaluate_with_jacobian(const SkinnedModel& model, const VecX& beta, const VecX& pose,
                                  const Vec3& translation, bool with_jacobian) {
  if (beta.size() != model.shape_dim()) throw DataError("evaluate: beta length mismatch");
  if (pose.size() != model.pose_dim()) throw DataError("evaluate: pose length mismatch");
  if (!beta.allFinite() || !pose.allFinite() || !translation.allFinite())
    throw DataError("evaluate: non-finite parameters");

  const int nv = model.vertex_count();
  const int nb = model.shape_dim();
  const int np = model.pose_dim();

  PointMatrix shaped = model.template_vertices;
  if (nb > 0) shaped += shape_blend(model, beta);
  const PointMatrix joints = joint_locations(model, shaped);

  PointMatrix rigged = shaped;
  VecX feature;
  if (model.pose_basis.size() != 0) {
    feature = pose_feature(model, pose);
    rigged += unflatten_points(model.pose_basis * feature);
  }

  EvalResult out;
  if (!with_jacobian) {
    const PartTransforms transforms = forward_kinematics(model.tree, joints, pose);
    out.vertices = linear_blend_skin(rigged, transforms, model.blend_weights);
    out.vertices.rowwise() += translation.transpose();
    return out;
  }

  const FkDerivatives fk = forward_kinematics_derivs(model.tree, joints, pose);
  out.vertices = linear_blend_skin(rigged, fk.transforms, model.blend_weights);
  out.vertices.rowwise() += translation.transpose();

  // d joints / d beta, flattened per shape coefficient.
  MatX djoints_dbeta(3 * model.part_count(), nb);
  for (int m = 0; m < nb; ++m) {
    const PointMatrix dj = model.joint_regressor * unflatten_points(model.shape_basis.col(m));
    djoints_dbeta.col(m) = flatten_points(dj);
  }
  // Per part, per shape coefficient: translation response through the joints.
  std::vector<MatX> part_t_dbeta(model.part_count());
  for (int k = 0; k < model.part_count(); ++k)
    part_t_dbeta[k] = fk.translation_djoints[k] * djoints_dbeta;  // 3 x nb

  // Pose-corrective chain d T_P / d pose, per joint block.
  MatX drigged_dpose;
  if (model.pose_basis.size() != 0) {
    drigged_dpose = MatX::Zero(3 * nv, np);
    int row = 0;
    for (int j = first_feature_joint(model); j < model.part_count(); ++j) {
      drigged_dpose.middleCols<3>(3 * j) =
          model.pose_basis.middleCols(row, 9) * rodrigues_jacobian(pose.segment<3>(3 * j));
      row += 9;
    }
  }

  const int ndof = nb + np + 3;
  out.jacobian = MatX::Zero(3 * nv, ndof);
  for (int v = 0; v < nv; ++v) {
    const Vec3 x = rigged.row(v);
    Mat3 blended_rot = Mat3::Zero();
    for (SparseMatRM::InnerIterator it(model.blend_weights, v); it; ++it)
      blended_rot += it.value() * fk.transforms.rotation[it.col()];

    // Shape columns (basis layout is [3v + coord], so rows 3v..3v+2 are this vertex).
    for (int m = 0; m < nb; ++m) {
      Vec3 col = blended_rot * Vec3(model.shape_basis.block<3, 1>(3 * v, m));
      for (SparseMatRM::InnerIterator it(model.blend_weights, v); it; ++it)
        col += it.value() * Vec3(part_t_dbeta[it.col()].col(m));
      out.jacobian.block<3, 1>(3 * v, m) = col;
    }

    // Pose columns.
    for (int q = 0; q < np; ++q) {
      Vec3 col = Vec3::Zero();
      for (SparseMatRM::InnerIterator it(model.blend_weights, v); it; ++it) {
        const int k = static_cast<int>(it.col());
        col += it.value() * (fk.rotation_dpose[q][k] * x + fk.translation_dpose[q][k]);
      }
      if (drigged_dpose.size() != 0)
        col += blended_rot * Vec3(drigged_dpose.block<3, 1>(3 * v, q));
      out.jacobian.block<3, 1>(3 * v, nb + q) = col;
    }

    out.jacobian.block<3, 3>(3 * v, nb + np) = Mat3::Identity();
  }
  return out;
}

UnposeResult unpose(const SkinnedModel& model, const VecX& beta, const VecX& pose,
                    const Vec3& translation, const PointMatrix& aligned_vertices) {
  if (aligned_vertices.rows() != model.vertex_count())
    throw DataError("unpose: vertex count mismatch");

  const PointMatrix shaped_offsets = shape_blend(model, beta);
  const PointMatrix shaped = model.template_vertices + shaped_offsets;
  const PointMatrix joints = joint_locations(model, shaped);
  const PartTransforms transforms = forward_kinematics(model.tree, joints, pose);
  const PointMatrix pose_offsets = pose_blend(model, pose);

  UnposeResult out;
  out.rest_vertices.resize(model.vertex_count(), 3);
  for (int v = 0; v < model.vertex_count(); ++v) {
    Mat3 rot = Mat3::Zero();
    Vec3 t = Vec3::Zero();
    for (SparseMatRM::InnerIterator it(model.blend_weights, v); it; ++it) {
      rot += it.value() * transforms.rotation[it.col()];
      t += it.value() * transforms.translation[it.col()];
    }
    const Vec3 rhs = Vec3(aligned_vertices.row(v)) - translation - t;
    Vec3 rest;
    if (std::abs(rot.determinant()) < 1e-8) {
      out.warnings.push_back(v);
      rest = rot.completeOrthogonalDecomposition().solve(rhs);
    } else {
      rest = rot.partialPivLu().solve(rhs);
    }
    out.rest_vertices.row(v) =
        rest.transpose() - pose_offsets.row(v) - shaped_offsets.row(v);
  }
  return out;
}

namespace {

void check_hand_compatible(const SkinnedModel& body, const SkinnedModel& hand,
                           const HandAttachment& map, const char* side) {
  if (map.vertex_map.size() != hand.vertex_count())
    throw DataError(std::string("attach_hands: ") + side + " vertex map length mismatch");
  if (hand.vertex_count() > 0 && (map.wrist_joint < 0 || map.wrist_joint >= body.part_count()))
    throw DataError(std::string("attach_hands: ") + side + " wrist joint out of range");
  for (int h = 0; h < hand.vertex_count(); ++h) {
    const int b = map.vertex_map[h];
    if (b < 0 || b >= body.vertex_count())
      throw DataError(std::string("attach_hands: ") + side + " correspondence out of range");
    if ((hand.template_vertices.row(h) - body.template_vertices.row(b)).norm() > 1e-9)
      throw DataError(std::string("attach_hands: ") + side +
                      " hand template does not match the body template at mapped vertices");
  }
}

}  // namespace

SkinnedModel attach_hands(const SkinnedModel& body, const SkinnedModel& right_hand,
                          const SkinnedModel& left_hand, const HandAttachment& right_map,
                          const HandAttachment& left_map, int wrist_blend_rings) {
  check_hand_compatible(body, right_hand, right_map, "right");
  check_hand_compatible(body, left_hand, left_map, "left");

  const int body_parts = body.part_count();
  const int right_joints = right_hand.tree.articulated_count();
  const int left_joints = left_hand.tree.articulated_count();
  const int parts = body_parts + right_joints + left_joints;
  const int nv = body.vertex_count();

  // No vertex may be claimed by two hands (or twice by one).
  std::set<int> claimed;
  for (const auto* map : {&right_map, &left_map})
    for (int h = 0; h < map->vertex_map.size(); ++h)
      if (!claimed.insert(map->vertex_map[h]).second)
        throw DataError("attach_hands: body vertex mapped twice");

  SkinnedModel out;
  out.template_vertices = body.template_vertices;
  out.faces = body.faces;
  out.shape_basis = body.shape_basis;
  out.include_root_features = body.include_root_features;
  out.units = body.units;
  out.pose_embedding = body.pose_embedding;

  // Spliced kinematic tree: body joints keep their ids, hand chains append.
  out.tree.parents.resize(parts);
  out.tree.parents.head(body_parts) = body.tree.parents;
  auto splice_tree = [&](const SkinnedModel& hand, const HandAttachment& map, int offset) {
    for (int j = 1; j < hand.part_count(); ++j) {
      const int p = hand.tree.parents[j];
      out.tree.parents[offset + j - 1] = p == 0 ? map.wrist_joint : offset + p - 1;
    }
  };
  const int right_offset = body_parts;
  const int left_offset = body_parts + right_joints;
  splice_tree(right_hand, right_map, right_offset);
  splice_tree(left_hand, left_map, left_offset);
  out.tree.validate();
  out.rest_pose = VecX::Zero(3 * parts);

  if (out.include_root_features || right_hand.include_root_features ||
      left_hand.include_root_features)
    throw DataError("attach_hands: root features are not supported in composed models");

  // Hand ownership per body vertex: -1 body, 0 right, 1 left.
  std::vector<int> owner(nv, -1);
  std::vector<int> hand_vertex(nv, -1);
  for (int h = 0; h < right_map.vertex_map.size(); ++h) {
    owner[right_map.vertex_map[h]] = 0;
    hand_vertex[right_map.vertex_map[h]] = h;
  }
  for (int h = 0; h < left_map.vertex_map.size(); ++h) {
    owner[left_map.vertex_map[h]] = 1;
    hand_vertex[left_map.vertex_map[h]] = h;
  }

  // Seam blend factor: hop distance (in the body graph) from the nearest
  // non-hand vertex, saturating after wrist_blend_rings rings.
  const auto adjacency = vertex_adjacency(undirected_edges(body.faces), nv);
  std::vector<double> hand_fraction(nv, 1.0);
  if (wrist_blend_rings > 0) {
    std::vector<int> hops(nv, -1);
    std::vector<int> frontier;
    for (int v = 0; v < nv; ++v)
      if (owner[v] >= 0)
        for (int u : adjacency[v])
          if (owner[u] < 0 && hops[v] < 0) {
            hops[v] = 0;
            frontier.push_back(v);
          }
    for (int ring = 0; ring < wrist_blend_rings; ++ring) {
      std::vector<int> next;
      for (int v : frontier)
        for (int u : adjacency[v])
          if (owner[u] >= 0 && hops[u] < 0) {
            hops[u] = ring + 1;
            next.push_back(u);
          }
      frontier = std::move(next);
    }
    for (int v = 0; v < nv; ++v)
      if (owner[v] >= 0 && hops[v] >= 0)
        hand_fraction[v] = static_cast<double>(hops[v] + 1) / (wrist_blend_rings + 1);
  }

  // Blend weights: body rows stay; hand rows remap hand parts onto spliced
  // ids (hand root -> wrist) and blend with the body row near the seam.
  auto hand_part_to_composed = [&](int owner_id, int hand_part) {
    const HandAttachment& map = owner_id == 0 ? right_map : left_map;
    const int offset = owner_id == 0 ? right_offset : left_offset;
    return hand_part == 0 ? map.wrist_joint : offset + hand_part - 1;
  };

  std::vector<Eigen::Triplet<double>> weight_triplets;
  for (int v = 0; v < nv; ++v) {
    VecX row = VecX::Zero(parts);
    if (owner[v] < 0) {
      for (SparseMatRM::InnerIterator it(body.blend_weights, v); it; ++it)
        row[it.col()] += it.value();
    } else {
      const SkinnedModel& hand = owner[v] == 0 ? right_hand : left_hand;
      const double a = hand_fraction[v];
      for (SparseMatRM::InnerIterator it(hand.blend_weights, hand_vertex[v]); it; ++it)
        row[hand_part_to_composed(owner[v], static_cast<int>(it.col()))] += a * it.value();
      if (a < 1.0)
        for (SparseMatRM::InnerIterator it(body.blend_weights, v); it; ++it)
          row[it.col()] += (1.0 - a) * it.value();
    }
    for (int k = 0; k < parts; ++k)
      if (row[k] != 0.0) weight_triplets.emplace_back(v, k, row[k]);
  }
  out.blend_weights.resize(nv, parts);
  out.blend_weights.setFromTriplets(weight_triplets.begin(), weight_triplets.end());

  // Joint regressor: body rows for body joints, mapped hand rows for spliced
  // joints (the hand-root row is dropped; the wrist comes from the body).
  std::vector<Eigen::Triplet<double>> reg_triplets;
  for (int j = 0; j < body_parts; ++j)
    for (SparseMatRM::InnerIterator it(body.joint_regressor, j); it; ++it)
      reg_triplets.emplace_back(j, static_cast<int>(it.col()), it.value());
  auto splice_regressor = [&](const SkinnedModel& hand, const HandAttachment& map, int offset) {
    for (int j = 1; j < hand.part_count(); ++j)
      for (SparseMatRM::InnerIterator it(hand.joint_regressor, j); it; ++it)
        reg_triplets.emplace_back(offset + j - 1, map.vertex_map[it.col()], it.value());
  };
  splice_regressor(right_hand, right_map, right_offset);
  splice_regressor(left_hand, left_map, left_offset);
  out.joint_regressor.resize(parts, nv);
  out.joint_regressor.setFromTriplets(reg_triplets.begin(), reg_triplets.end());

  // Pose correctives: body features keep their columns; hand-owned vertices
  // take rows from their hand model at the spliced feature columns.
  const int nf = 9 * (parts - 1);
  out.pose_basis = MatX::Zero(3 * nv, nf);
  if (body.pose_basis.size() != 0) {
    for (int v = 0; v < nv; ++v) {
      if (owner[v] >= 0) continue;
      out.pose_basis.block(3 * v, 0, 3, body.pose_basis.cols()) =
          body.pose_basis.block(3 * v, 0, 3, body.pose_basis.cols());
    }
  }
  auto splice_pose_basis = [&](const SkinnedModel& hand, const HandAttachment& map, int offset) {
    if (hand.pose_basis.size() == 0) return;
    for (int h = 0; h < hand.vertex_count(); ++h) {
      const int v = map.vertex_map[h];
      for (int j = 1; j < hand.part_count(); ++j) {
        const int composed_joint = offset + j - 1;
        out.pose_basis.block(3 * v, 9 * (composed_joint - 1), 3, 9) =
            hand.pose_basis.block(3 * h, 9 * (j - 1), 3, 9);
      }
    }
  };
  splice_pose_basis(right_hand, right_map, right_offset);
  splice_pose_basis(left_hand, left_map, left_offset);

  // Hand metadata for downstream fitting.
  auto make_section = [&](const SkinnedModel& hand, const HandAttachment& map, int offset,
                          const char* side) {
    HandSection section;
    section.side = side;
    for (int j = 1; j < hand.part_count(); ++j) section.joint_indices.push_back(offset + j - 1);
    for (int h = 0; h < map.vertex_map.size(); ++h)
      section.vertex_indices.push_back(map.vertex_map[h]);
    section.embedding = hand.pose_embedding;
    return section;
  };
  out.hands.push_back(make_section(right_hand, right_map, right_offset, "right"));
  out.hands.push_back(make_section(left_hand, left_map, left_offset, "left"));

  validate_model(out);
  return out;
}

}  // namespace handforge

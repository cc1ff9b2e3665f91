#include "handforge/synth.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "handforge/geodesics.hpp"
#include "handforge/mirror.hpp"
#include "handforge/rng.hpp"

namespace handforge {
namespace {

constexpr double kVoxel = 0.012;  // meters; hands land at desk scale

using VoxelKey = std::array<int, 3>;

struct VoxelGrid {
  std::set<VoxelKey> solid;
  bool contains(int x, int y, int z) const { return solid.count({x, y, z}) > 0; }
};

// Boundary surface of the voxel solid as a quad mesh, then triangulated.
// Corners are ordered so normals point outward.
TriMesh voxel_surface(const VoxelGrid& grid, double scale) {
  std::map<VoxelKey, int> corner_ids;
  std::vector<VoxelKey> corners;
  auto corner = [&](int x, int y, int z) {
    const VoxelKey key{x, y, z};
    auto [it, fresh] = corner_ids.emplace(key, static_cast<int>(corners.size()));
    if (fresh) corners.push_back(key);
    return it->second;
  };

  std::vector<std::array<int, 4>> quads;
  for (const auto& [x, y, z] : grid.solid) {
    if (!grid.contains(x + 1, y, z))
      quads.push_back({corner(x + 1, y, z), corner(x + 1, y + 1, z), corner(x + 1, y + 1, z + 1),
                       corner(x + 1, y, z + 1)});
    if (!grid.contains(x - 1, y, z))
      quads.push_back({corner(x, y, z), corner(x, y, z + 1), corner(x, y + 1, z + 1),
                       corner(x, y + 1, z)});
    if (!grid.contains(x, y + 1, z))
      quads.push_back({corner(x, y + 1, z), corner(x, y + 1, z + 1), corner(x + 1, y + 1, z + 1),
                       corner(x + 1, y + 1, z)});
    if (!grid.contains(x, y - 1, z))
      quads.push_back({corner(x, y, z), corner(x + 1, y, z), corner(x + 1, y, z + 1),
                       corner(x, y, z + 1)});
    if (!grid.contains(x, y, z + 1))
      quads.push_back({corner(x, y, z + 1), corner(x + 1, y, z + 1), corner(x + 1, y + 1, z + 1),
                       corner(x, y + 1, z + 1)});
    if (!grid.contains(x, y, z - 1))
      quads.push_back({corner(x, y, z), corner(x, y + 1, z), corner(x + 1, y + 1, z),
                       corner(x + 1, y, z)});
  }

  TriMesh mesh;
  mesh.vertices.resize(static_cast<int>(corners.size()), 3);
  for (size_t v = 0; v < corners.size(); ++v)
    mesh.vertices.row(static_cast<int>(v)) =
        scale * Vec3(corners[v][0], corners[v][1], corners[v][2]).transpose();
  mesh.faces.resize(static_cast<int>(quads.size()) * 2, 3);
  for (size_t q = 0; q < quads.size(); ++q) {
    mesh.faces.row(2 * static_cast<int>(q)) << quads[q][0], quads[q][1], quads[q][2];
    mesh.faces.row(2 * static_cast<int>(q) + 1) << quads[q][0], quads[q][2], quads[q][3];
  }
  return mesh;
}

void laplacian_smooth(TriMesh& mesh, int rounds, double factor) {
  const auto adjacency = vertex_adjacency(undirected_edges(mesh.faces), mesh.vertex_count());
  for (int round = 0; round < rounds; ++round) {
    PointMatrix next = mesh.vertices;
    for (int v = 0; v < mesh.vertex_count(); ++v) {
      if (adjacency[v].empty()) continue;
      Vec3 mean = Vec3::Zero();
      for (int u : adjacency[v]) mean += Vec3(mesh.vertices.row(u));
      mean /= static_cast<double>(adjacency[v].size());
      next.row(v) = (1.0 - factor) * mesh.vertices.row(v) + factor * mean.transpose();
    }
    mesh.vertices = next;
  }
}

// Random per-vertex field, neighbor-averaged into a smooth low-frequency one.
MatX smooth_fields(const TriMesh& mesh, int count, int rounds, Rng& rng) {
  const int nv = mesh.vertex_count();
  const auto adjacency = vertex_adjacency(undirected_edges(mesh.faces), nv);
  MatX fields(3 * nv, count);
  for (int c = 0; c < count; ++c)
    for (int i = 0; i < 3 * nv; ++i) fields(i, c) = rng.normal();
  for (int round = 0; round < rounds; ++round) {
    MatX next = fields;
    for (int v = 0; v < nv; ++v) {
      if (adjacency[v].empty()) continue;
      for (int k = 0; k < 3; ++k) {
        Eigen::RowVectorXd acc = fields.row(3 * v + k);
        for (int u : adjacency[v]) acc += fields.row(3 * u + k);
        next.row(3 * v + k) = acc / (1.0 + adjacency[v].size());
      }
    }
    fields = next;
  }
  return fields;
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

SparseMatRM rows_to_sparse(const std::vector<std::vector<std::pair<int, double>>>& rows,
                           int cols) {
  std::vector<Eigen::Triplet<double>> triplets;
  for (size_t r = 0; r < rows.size(); ++r)
    for (const auto& [c, w] : rows[r]) triplets.emplace_back(static_cast<int>(r), c, w);
  SparseMatRM out(static_cast<int>(rows.size()), cols);
  out.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

}  // namespace

SkinnedModel make_toy_hand(int joints, int vertex_budget, std::uint64_t seed, int shape_dims) {
  if (joints < 1) throw DataError("make_toy_hand: need at least one part");
  const int articulated = joints - 1;
  Rng rng = Rng(seed).fork(0x7081);

  // Distribute articulated joints over up to five finger chains.
  const int n_fingers = articulated == 0 ? 0 : std::clamp((articulated + 2) / 3, 1, 5);
  std::vector<int> finger_joints(n_fingers, 0);
  for (int j = 0; j < articulated; ++j) finger_joints[j % std::max(1, n_fingers)] += 1;

  // Voxel solid: palm slab plus one rod per finger, face-adjacent, with gaps.
  const int palm_w = n_fingers > 0 ? 2 * n_fingers + 1 : 3;
  const int palm_l = 6, palm_d = 2;
  VoxelGrid grid;
  for (int x = 0; x < palm_w; ++x)
    for (int y = 0; y < palm_l; ++y)
      for (int z = 0; z < palm_d; ++z) grid.solid.insert({x, y, z});
  std::vector<int> finger_x(n_fingers), finger_len(n_fingers);
  for (int f = 0; f < n_fingers; ++f) {
    finger_x[f] = 1 + 2 * f;
    finger_len[f] = 2 * finger_joints[f] + 1;
    for (int y = palm_l; y < palm_l + finger_len[f]; ++y) grid.solid.insert({finger_x[f], y, 0});
  }

  // Grid refinement toward the requested vertex budget: quads scale ~r^2.
  TriMesh mesh = voxel_surface(grid, kVoxel);
  const int base_count = mesh.vertex_count();
  if (vertex_budget < base_count / 2)
    throw DataError("make_toy_hand: infeasible vertex budget " + std::to_string(vertex_budget) +
                    " (minimum is about " + std::to_string(base_count / 2) + ")");
  const int refine = std::clamp(
      static_cast<int>(std::lround(std::sqrt(static_cast<double>(vertex_budget) / base_count))),
      1, 4);
  if (refine > 1) {
    VoxelGrid fine;
    for (const auto& [x, y, z] : grid.solid)
      for (int dx = 0; dx < refine; ++dx)
        for (int dy = 0; dy < refine; ++dy)
          for (int dz = 0; dz < refine; ++dz)
            fine.solid.insert({refine * x + dx, refine * y + dy, refine * z + dz});
    mesh = voxel_surface(fine, kVoxel / refine);
  }

  laplacian_smooth(mesh, 2, 0.5);
  {
    // Small smooth jitter: no two models are alike and nearest-point ties
    // never happen on exact grid symmetry.
    MatX jitter = smooth_fields(mesh, 1, 3, rng);
    mesh.vertices += 0.05 * kVoxel * unflatten_points(jitter.col(0));
  }

  SkinnedModel model;
  model.template_vertices = mesh.vertices;
  model.faces = mesh.faces;
  model.tree.parents.resize(joints);
  model.tree.parents[0] = -1;
  model.rest_pose = VecX::Zero(3 * joints);
  model.units = "m";

  // Provisional joints at voxel-grid anchors.
  PointMatrix anchors(joints, 3);
  anchors.row(0) = kVoxel * Vec3(palm_w / 2.0, palm_l / 3.0, palm_d / 2.0).transpose();
  {
    int jid = 1;
    for (int f = 0; f < n_fingers; ++f) {
      for (int i = 0; i < finger_joints[f]; ++i) {
        model.tree.parents[jid] = i == 0 ? 0 : jid - 1;
        const double y = palm_l + 0.5 + i * std::max(1.0, (finger_len[f] - 1.0) /
                                                              std::max(1, finger_joints[f]));
        anchors.row(jid) = kVoxel * Vec3(finger_x[f] + 0.5, y, 0.5).transpose();
        ++jid;
      }
    }
  }
  model.tree.validate();

  // Sparse regressor from the nearest template vertices around each anchor,
  // then the actual rest joints are whatever it regresses.
  {
    std::vector<std::vector<std::pair<int, double>>> rows(joints);
    for (int j = 0; j < joints; ++j) {
      std::vector<std::pair<double, int>> by_dist;
      for (int v = 0; v < mesh.vertex_count(); ++v)
        by_dist.emplace_back((Vec3(mesh.vertices.row(v)) - Vec3(anchors.row(j))).norm(), v);
      std::sort(by_dist.begin(), by_dist.end());
      const int support = 6;
      double sum = 0.0;
      for (int i = 0; i < support; ++i) {
        const double w = std::exp(-(by_dist[i].first * by_dist[i].first) / (kVoxel * kVoxel));
        rows[j].emplace_back(by_dist[i].second, w);
        sum += w;
      }
      for (auto& [v, w] : rows[j]) w /= sum;
      std::sort(rows[j].begin(), rows[j].end());
    }
    model.joint_regressor = rows_to_sparse(rows, mesh.vertex_count());
  }
  const PointMatrix joints_rest = model.joint_regressor * model.template_vertices;

  // Blend weights: Gaussian falloff to each part's bone segment, top four
  // parts kept per vertex, rows renormalized.
  {
    std::vector<Vec3> bone_a(joints), bone_b(joints);
    bone_a[0] = Vec3(joints_rest.row(0)) - Vec3(0, 2.0 * kVoxel, 0);
    bone_b[0] = Vec3(joints_rest.row(0)) + Vec3(0, (palm_l / 2.0) * kVoxel, 0);
    std::vector<std::vector<int>> children(joints);
    for (int j = 1; j < joints; ++j) children[model.tree.parents[j]].push_back(j);
    for (int j = 1; j < joints; ++j) {
      bone_a[j] = joints_rest.row(j);
      if (!children[j].empty()) {
        bone_b[j] = joints_rest.row(children[j][0]);
      } else {
        const Vec3 prev = joints_rest.row(model.tree.parents[j]);
        Vec3 dir = Vec3(joints_rest.row(j)) - prev;
        if (dir.norm() < 1e-12) dir = Vec3::UnitY();
        bone_b[j] = Vec3(joints_rest.row(j)) + 2.0 * kVoxel * dir.normalized();
      }
    }

    const double h = 0.7 * kVoxel;
    std::vector<std::vector<std::pair<int, double>>> rows(mesh.vertex_count());
    for (int v = 0; v < mesh.vertex_count(); ++v) {
      const Vec3 p = mesh.vertices.row(v);
      std::vector<std::pair<double, int>> scored;
      for (int j = 0; j < joints; ++j) {
        const double d = point_segment_distance(p, bone_a[j], bone_b[j]);
        scored.emplace_back(-std::exp(-(d * d) / (h * h)), j);
      }
      std::sort(scored.begin(), scored.end());
      double sum = 0.0;
      for (int i = 0; i < std::min<size_t>(4, scored.size()); ++i) {
        const double w = -scored[i].first;
        if (w < 1e-9 && i > 0) break;
        rows[v].emplace_back(scored[i].second, w);
        sum += w;
      }
      if (rows[v].empty() || sum <= 0.0) rows[v] = {{0, 1.0}};
      else
        for (auto& [j, w] : rows[v]) w /= sum;
      std::sort(rows[v].begin(), rows[v].end());
    }
    model.blend_weights = rows_to_sparse(rows, joints);
  }

  // Planted shape space: smooth orthogonalized fields, sqrt-variance scaled.
  {
    const int nb = std::min(shape_dims, 3 * mesh.vertex_count() - 1);
    MatX fields = smooth_fields(mesh, nb, 5, rng);
    model.shape_basis = MatX::Zero(3 * mesh.vertex_count(), nb);
    for (int c = 0; c < nb; ++c) {
      VecX dir = fields.col(c);
      for (int r = 0; r < c; ++r) {
        const VecX prev = model.shape_basis.col(r) / model.shape_basis.col(r).norm();
        dir -= prev.dot(dir) * prev;
      }
      dir.normalize();
      const double sqrt_variance = 0.08 * std::pow(0.8, c);
      model.shape_basis.col(c) = sqrt_variance * dir;
    }
  }

  // Planted pose correctives: smooth fields attenuated by geodesic distance
  // from each joint's region, so corrections stay local to their joint.
  {
    const int nf = model.pose_feature_count();
    model.pose_basis = MatX::Zero(3 * mesh.vertex_count(), nf);
    const EdgeMatrix edges = undirected_edges(mesh.faces);
    MatX fields = smooth_fields(mesh, nf, 3, rng);
    int col = 0;
    for (int j = 1; j < joints; ++j) {
      // Nearest vertex to the joint anchors the geodesic envelope.
      int anchor = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int v = 0; v < mesh.vertex_count(); ++v) {
        const double d = (Vec3(mesh.vertices.row(v)) - Vec3(joints_rest.row(j))).norm();
        if (d < best) {
          best = d;
          anchor = v;
        }
      }
      const VecX geo = geodesic_distances(mesh.vertices, edges, anchor);
      VecX envelope(3 * mesh.vertex_count());
      for (int v = 0; v < mesh.vertex_count(); ++v)
        envelope.segment<3>(3 * v).setConstant(std::exp(-geo[v] / (3.0 * kVoxel)));
      for (int e = 0; e < 9; ++e, ++col)
        model.pose_basis.col(col) =
            0.02 * kVoxel * fields.col(col).cwiseProduct(envelope).eval();
    }
  }

  validate_model(model);
  return model;
}

std::vector<int> hand_region_vertices(const SkinnedModel& model) {
  std::vector<int> region;
  if (!model.hands.empty()) {
    for (const auto& hand : model.hands)
      region.insert(region.end(), hand.vertex_indices.begin(), hand.vertex_indices.end());
    std::sort(region.begin(), region.end());
    return region;
  }
  for (int v = 0; v < model.vertex_count(); ++v) {
    int best_part = 0;
    double best_w = -1.0;
    for (SparseMatRM::InnerIterator it(model.blend_weights, v); it; ++it)
      if (it.value() > best_w) {
        best_w = it.value();
        best_part = static_cast<int>(it.col());
      }
    if (best_part != 0) region.push_back(v);
  }
  return region;
}

SyntheticScan synthesize_scan(const SkinnedModel& model, const VecX& beta, const VecX& pose,
                              const Vec3& translation, const SynthConfig& config) {
  Rng rng = Rng(config.seed).fork(0x5ca9);
  const TriMesh posed = evaluate(model, beta, pose, translation);

  SyntheticScan scan;
  scan.beta = beta;
  scan.pose = pose;
  scan.translation = translation;

  const int nv = posed.vertex_count();
  std::vector<bool> deleted(nv, false);
  int n_deleted = 0;
  const int target = static_cast<int>(std::floor(config.hole_fraction * nv));
  while (n_deleted < target) {
    const int seed_vertex = static_cast<int>(rng.below(nv));
    if (deleted[seed_vertex]) continue;
    const Vec3 center = posed.vertices.row(seed_vertex);
    for (int v = 0; v < nv; ++v) {
      if (deleted[v]) continue;
      if ((Vec3(posed.vertices.row(v)) - center).norm() <= config.hole_radius) {
        deleted[v] = true;
        ++n_deleted;
      }
    }
  }

  std::vector<int> remap(nv, -1);
  for (int v = 0; v < nv; ++v) {
    if (deleted[v]) continue;
    remap[v] = static_cast<int>(scan.source_vertices.size());
    scan.source_vertices.push_back(v);
  }

  scan.cloud.vertices.resize(static_cast<int>(scan.source_vertices.size()), 3);
  for (size_t i = 0; i < scan.source_vertices.size(); ++i) {
    Vec3 p = posed.vertices.row(scan.source_vertices[i]);
    if (config.noise_sigma > 0.0)
      p += config.noise_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
    scan.cloud.vertices.row(static_cast<int>(i)) = p;
  }

  if (config.mesh_output) {
    std::vector<Eigen::Vector3i> faces;
    for (int f = 0; f < posed.face_count(); ++f) {
      const int a = remap[posed.faces(f, 0)], b = remap[posed.faces(f, 1)],
                c = remap[posed.faces(f, 2)];
      if (a >= 0 && b >= 0 && c >= 0) faces.push_back({a, b, c});
    }
    scan.cloud.faces.resize(static_cast<int>(faces.size()), 3);
    for (size_t f = 0; f < faces.size(); ++f)
      scan.cloud.faces.row(static_cast<int>(f)) = faces[f];
  } else {
    scan.cloud.faces.resize(0, 3);
  }
  return scan;
}

VecX script_pose(const SkinnedModel& model, const SynthConfig& config, int frame) {
  VecX pose = VecX::Zero(model.pose_dim());
  for (const auto& wave : config.script) {
    if (wave.joint < 0 || wave.joint >= model.part_count())
      throw DataError("script_pose: joint out of range");
    pose.segment<3>(3 * wave.joint) +=
        wave.axis * (wave.amplitude *
                     std::sin(2.0 * M_PI * wave.frequency * frame + wave.phase));
  }
  return pose;
}

std::vector<SyntheticScan> synthesize_sequence(const SkinnedModel& model, const VecX& beta,
                                               const SynthConfig& config) {
  const std::vector<int> hand_region = hand_region_vertices(model);
  std::vector<SyntheticScan> frames;
  frames.reserve(config.frames);
  for (int t = 0; t < config.frames; ++t) {
    SynthConfig frame_config = config;
    frame_config.seed = Rng(config.seed).fork(1000 + t).next_u64();
    const VecX pose = script_pose(model, config, t);
    SyntheticScan scan = synthesize_scan(model, beta, pose, Vec3::Zero(), frame_config);

    bool drop = false;
    for (const auto& [lo, hi] : config.dropout) drop = drop || (t >= lo && t <= hi);
    if (drop && !hand_region.empty()) {
      std::vector<bool> in_region(model.vertex_count(), false);
      for (int v : hand_region) in_region[v] = true;
      std::vector<int> keep;
      for (size_t i = 0; i < scan.source_vertices.size(); ++i)
        if (!in_region[scan.source_vertices[i]]) keep.push_back(static_cast<int>(i));

      SyntheticScan pruned;
      pruned.beta = scan.beta;
      pruned.pose = scan.pose;
      pruned.translation = scan.translation;
      pruned.cloud.vertices.resize(static_cast<int>(keep.size()), 3);
      std::vector<int> remap(scan.source_vertices.size(), -1);
      for (size_t i = 0; i < keep.size(); ++i) {
        remap[keep[i]] = static_cast<int>(i);
        pruned.cloud.vertices.row(static_cast<int>(i)) = scan.cloud.vertices.row(keep[i]);
        pruned.source_vertices.push_back(scan.source_vertices[keep[i]]);
      }
      std::vector<Eigen::Vector3i> faces;
      for (int f = 0; f < scan.cloud.face_count(); ++f) {
        const int a = remap[scan.cloud.faces(f, 0)], b = remap[scan.cloud.faces(f, 1)],
                  c = remap[scan.cloud.faces(f, 2)];
        if (a >= 0 && b >= 0 && c >= 0) faces.push_back({a, b, c});
      }
      pruned.cloud.faces.resize(static_cast<int>(faces.size()), 3);
      for (size_t f = 0; f < faces.size(); ++f)
        pruned.cloud.faces.row(static_cast<int>(f)) = faces[f];
      scan = std::move(pruned);
    }
    frames.push_back(std::move(scan));
  }
  return frames;
}

BodyWithHands make_toy_body_with_hands(std::uint64_t seed, int hand_joints,
                                       int hand_vertex_budget) {
  BodyWithHands out;
  Rng rng = Rng(seed).fork(0xb0d1);

  SkinnedModel right = make_toy_hand(hand_joints, hand_vertex_budget, seed + 1, 0);
  right.pose_basis.setZero();  // rigid toy hands keep composition checks exact
  // Place the right hand beside the torso, the mirrored left on the other side.
  const Vec3 right_offset(0.22, 0.05, 0.0);
  right.template_vertices.rowwise() += right_offset.transpose();
  SkinnedModel left = mirror_model(right);

  // Torso: a voxel slab, rigidly skinned to the body root.
  VoxelGrid torso;
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 12; ++y)
      for (int z = 0; z < 4; ++z) torso.solid.insert({x, y, z});
  TriMesh torso_mesh = voxel_surface(torso, 0.02);
  torso_mesh.vertices.rowwise() += Eigen::RowVector3d(-0.08, -0.1, -0.04);
  laplacian_smooth(torso_mesh, 1, 0.4);
  {
    MatX jitter = smooth_fields(torso_mesh, 1, 3, rng);
    torso_mesh.vertices += 0.001 * unflatten_points(jitter.col(0));
  }

  const int torso_nv = torso_mesh.vertex_count();
  const int right_nv = right.vertex_count();
  const int left_nv = left.vertex_count();
  const int nv = torso_nv + right_nv + left_nv;

  SkinnedModel body;
  body.units = "m";
  body.tree.parents.resize(3);
  body.tree.parents << -1, 0, 0;  // root, right wrist, left wrist
  body.rest_pose = VecX::Zero(9);

  body.template_vertices.resize(nv, 3);
  body.template_vertices.topRows(torso_nv) = torso_mesh.vertices;
  body.template_vertices.middleRows(torso_nv, right_nv) = right.template_vertices;
  body.template_vertices.bottomRows(left_nv) = left.template_vertices;

  body.faces.resize(torso_mesh.face_count() + right.faces.rows() + left.faces.rows(), 3);
  body.faces.topRows(torso_mesh.face_count()) = torso_mesh.faces;
  body.faces.middleRows(torso_mesh.face_count(), right.faces.rows()) =
      right.faces.array() + torso_nv;
  body.faces.bottomRows(left.faces.rows()) = left.faces.array() + torso_nv + right_nv;

  // Rigid skinning: torso on the root, each hand block on its wrist.
  {
    std::vector<std::vector<std::pair<int, double>>> rows(nv);
    for (int v = 0; v < torso_nv; ++v) rows[v] = {{0, 1.0}};
    for (int v = 0; v < right_nv; ++v) rows[torso_nv + v] = {{1, 1.0}};
    for (int v = 0; v < left_nv; ++v) rows[torso_nv + right_nv + v] = {{2, 1.0}};
    body.blend_weights = rows_to_sparse(rows, 3);
  }

  // Root regressed from the torso; each wrist reuses the hand's root row so
  // the composed skeleton agrees with the standalone hands.
  {
    std::vector<std::vector<std::pair<int, double>>> rows(3);
    std::vector<std::pair<double, int>> by_dist;
    const Vec3 center(0.0, 0.02, 0.0);
    for (int v = 0; v < torso_nv; ++v)
      by_dist.emplace_back((Vec3(torso_mesh.vertices.row(v)) - center).norm(), v);
    std::sort(by_dist.begin(), by_dist.end());
    double sum = 0.0;
    for (int i = 0; i < 6; ++i) {
      rows[0].emplace_back(by_dist[i].second, 1.0);
      sum += 1.0;
    }
    for (auto& [v, w] : rows[0]) w /= sum;
    std::sort(rows[0].begin(), rows[0].end());
    for (SparseMatRM::InnerIterator it(right.joint_regressor, 0); it; ++it)
      rows[1].emplace_back(torso_nv + static_cast<int>(it.col()), it.value());
    for (SparseMatRM::InnerIterator it(left.joint_regressor, 0); it; ++it)
      rows[2].emplace_back(torso_nv + right_nv + static_cast<int>(it.col()), it.value());
    body.joint_regressor = rows_to_sparse(rows, nv);
  }

  // Body shape space: two smooth whole-body directions; no body correctives.
  {
    TriMesh whole{body.template_vertices, body.faces, {}};
    MatX fields = smooth_fields(whole, 2, 5, rng);
    body.shape_basis = MatX::Zero(3 * nv, 2);
    for (int c = 0; c < 2; ++c) {
      VecX dir = fields.col(c);
      for (int r = 0; r < c; ++r) {
        const VecX prev = body.shape_basis.col(r).normalized();
        dir -= prev.dot(dir) * prev;
      }
      dir.normalize();
      body.shape_basis.col(c) = (0.05 * std::pow(0.8, c)) * dir;
    }
  }
  body.pose_basis = MatX::Zero(3 * nv, body.pose_feature_count());

  validate_model(body);
  out.body = std::move(body);

  out.right_map.wrist_joint = 1;
  out.right_map.vertex_map.resize(right_nv);
  for (int v = 0; v < right_nv; ++v) out.right_map.vertex_map[v] = torso_nv + v;
  out.left_map.wrist_joint = 2;
  out.left_map.vertex_map.resize(left_nv);
  for (int v = 0; v < left_nv; ++v) out.left_map.vertex_map[v] = torso_nv + right_nv + v;

  out.right_hand = std::move(right);
  out.left_hand = std::move(left);
  return out;
}

}  // namespace handforge

#include "handforge/bvh.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace handforge {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* barycentric) {
  // Voronoi-region case analysis (Ericson, Real-Time Collision Detection, 5.1.5).
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  auto finish = [&](double u, double v, double w) {
    if (barycentric) *barycentric = Vec3(u, v, w);
    return u * a + v * b + w * c;
  };

  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return finish(1, 0, 0);

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return finish(0, 1, 0);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return finish(1 - v, v, 0);
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return finish(0, 0, 1);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return finish(1 - w, 0, w);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish(0, 1 - w, w);
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return finish(1 - v - w, v, w);
}

namespace {

SurfaceHit hit_for_face(const TriMesh& mesh, int f, const Vec3& query) {
  SurfaceHit hit;
  Vec3 bary;
  const Vec3 point = closest_point_on_triangle(
      query, mesh.vertices.row(mesh.faces(f, 0)), mesh.vertices.row(mesh.faces(f, 1)),
      mesh.vertices.row(mesh.faces(f, 2)), &bary);
  hit.point = point;
  hit.face_index = f;
  hit.barycentric = bary;
  hit.distance = (query - point).norm();
  return hit;
}

double point_box_dist2(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  double d2 = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = std::max({lo[c] - p[c], 0.0, p[c] - hi[c]});
    d2 += d * d;
  }
  return d2;
}

}  // namespace

SurfaceHit nearest_surface_point_brute(const TriMesh& mesh, const Vec3& query) {
  if (mesh.face_count() == 0) throw DataError("nearest_surface_point: mesh has no faces");
  SurfaceHit best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int f = 0; f < mesh.face_count(); ++f) {
    Vec3 bary;
    const Vec3 point = closest_point_on_triangle(
        query, mesh.vertices.row(mesh.faces(f, 0)), mesh.vertices.row(mesh.faces(f, 1)),
        mesh.vertices.row(mesh.faces(f, 2)), &bary);
    const double d2 = (query - point).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.point = point;
      best.face_index = f;
      best.barycentric = bary;
    }
  }
  best.distance = std::sqrt(best_d2);
  return best;
}

SurfaceBvh::SurfaceBvh(const TriMesh& mesh) : vertices_(mesh.vertices), faces_(mesh.faces) {
  if (faces_.rows() == 0) return;
  std::vector<int> tris(faces_.rows());
  std::iota(tris.begin(), tris.end(), 0);
  nodes_.reserve(static_cast<size_t>(faces_.rows()) * 2);
  root_ = build(tris, 0, static_cast<int>(tris.size()));
}

int SurfaceBvh::build(std::vector<int>& tris, int first, int count) {
  Node node;
  node.box_min = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.box_max = -node.box_min;
  for (int i = first; i < first + count; ++i) {
    for (int k = 0; k < 3; ++k) {
      const Vec3 v = vertices_.row(faces_(tris[i], k));
      node.box_min = node.box_min.cwiseMin(v);
      node.box_max = node.box_max.cwiseMax(v);
    }
  }

  constexpr int kLeafSize = 4;
  if (count <= kLeafSize) {
    node.first = static_cast<int>(order_.size());
    node.count = count;
    // Keep leaf triangles in ascending index order so ties resolve like the
    // brute-force scan.
    std::sort(tris.begin() + first, tris.begin() + first + count);
    for (int i = first; i < first + count; ++i) order_.push_back(tris[i]);
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }

  int axis = 0;
  const Vec3 extent = node.box_max - node.box_min;
  if (extent[1] > extent[axis]) axis = 1;
  if (extent[2] > extent[axis]) axis = 2;

  auto centroid = [&](int t) {
    return (vertices_.row(faces_(t, 0)) + vertices_.row(faces_(t, 1)) +
            vertices_.row(faces_(t, 2)))(axis) / 3.0;
  };
  const int mid = first + count / 2;
  std::nth_element(tris.begin() + first, tris.begin() + mid, tris.begin() + first + count,
                   [&](int lhs, int rhs) {
                     const double cl = centroid(lhs), cr = centroid(rhs);
                     return cl < cr || (cl == cr && lhs < rhs);
                   });

  const int left = build(tris, first, mid - first);
  const int right = build(tris, mid, first + count - mid);
  node.left = left;
  node.right = right;
  nodes_.push_back(node);
  return static_cast<int>(nodes_.size()) - 1;
}

SurfaceHit SurfaceBvh::nearest(const Vec3& query) const {
  if (empty()) throw DataError("nearest_surface_point: mesh has no faces");

  SurfaceHit best;
  double best_d2 = std::numeric_limits<double>::infinity();

  // Explicit stack, nearer child first; prune only strictly farther boxes so
  // equal-distance candidates are still visited and ties fall to the lowest
  // face index, exactly as in the brute-force scan.
  std::vector<int> stack{root_};
  while (!stack.empty()) {
    const int ni = stack.back();
    stack.pop_back();
    const Node& node = nodes_[ni];
    if (point_box_dist2(query, node.box_min, node.box_max) > best_d2) continue;
    if (node.left < 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int f = order_[i];
        Vec3 bary;
        const Vec3 point = closest_point_on_triangle(
            query, vertices_.row(faces_(f, 0)), vertices_.row(faces_(f, 1)),
            vertices_.row(faces_(f, 2)), &bary);
        const double d2 = (query - point).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && f < best.face_index)) {
          best_d2 = d2;
          best.point = point;
          best.face_index = f;
          best.barycentric = bary;
        }
      }
    } else {
      const double dl = point_box_dist2(query, nodes_[node.left].box_min, nodes_[node.left].box_max);
      const double dr = point_box_dist2(query, nodes_[node.right].box_min, nodes_[node.right].box_max);
      // Push farther child first; on equal distance visit the left (lower
      // triangle indices) first.
      if (dl <= dr) {
        stack.push_back(node.right);
        stack.push_back(node.left);
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
    }
  }
  best.distance = std::sqrt(best_d2);
  return best;
}

SurfaceHit nearest_surface_point(const TriMesh& mesh, const Vec3& query) {
  return nearest_surface_point_brute(mesh, query);
}

double surface_distance(const TriMesh& mesh, const SurfaceHit& hit, const Vec3& query,
                        SurfaceDistanceMode mode) {
  if (mode == SurfaceDistanceMode::point_to_surface) return hit.distance;
  const Vec3 a = mesh.vertices.row(mesh.faces(hit.face_index, 0));
  const Vec3 b = mesh.vertices.row(mesh.faces(hit.face_index, 1));
  const Vec3 c = mesh.vertices.row(mesh.faces(hit.face_index, 2));
  Vec3 n = (b - a).cross(c - a);
  const double len = n.norm();
  if (len == 0.0) return hit.distance;
  n /= len;
  return std::abs(n.dot(query - hit.point));
}

}  // namespace handforge

#pragma once

#include <vector>

#include "handforge/mesh.hpp"

namespace handforge {

/// Nearest point on a mesh surface.
struct SurfaceHit {
  Vec3 point = Vec3::Zero();   // barycentric combination of the face's vertices
  int face_index = -1;
  Vec3 barycentric = Vec3::Zero();  // sums to 1
  double distance = 0.0;       // |query - point|
};

/// Closest point on triangle (a,b,c) to p; writes barycentric coordinates.
/// The returned point is computed as the barycentric combination, so the
/// reconstruction property holds to rounding.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* barycentric);

/// Globally nearest surface point by exhaustive scan over all triangles.
/// Ties broken by lowest face index. Throws DataError on a mesh with no faces.
SurfaceHit nearest_surface_point_brute(const TriMesh& mesh, const Vec3& query);

/// Axis-aligned BVH over the triangles of a fixed mesh. Queries are safe for
/// concurrent use; rebuild (reconstruct) after vertices change. Results are
/// identical to nearest_surface_point_brute, including tie-breaking.
class SurfaceBvh {
 public:
  SurfaceBvh() = default;
  explicit SurfaceBvh(const TriMesh& mesh);

  bool empty() const { return nodes_.empty(); }
  SurfaceHit nearest(const Vec3& query) const;

 private:
  struct Node {
    Vec3 box_min, box_max;
    int left = -1, right = -1;   // children, or -1 at leaves
    int first = 0, count = 0;    // leaf triangle range in order_
  };

  int build(std::vector<int>& tris, int first, int count);
  PointMatrix vertices_;
  FaceMatrix faces_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
  int root_ = -1;
};

/// Spec-level entry point: nearest point on any triangle of `mesh`.
SurfaceHit nearest_surface_point(const TriMesh& mesh, const Vec3& query);

/// How a point-to-surface residual measures distance. `point_to_surface` is
/// the default; `normal_projected` projects the offset on the hit normal.
enum class SurfaceDistanceMode { point_to_surface, normal_projected };

/// Distance for a hit under the chosen mode. For normal_projected the face
/// normal of hit.face_index is used.
double surface_distance(const TriMesh& mesh, const SurfaceHit& hit, const Vec3& query,
                        SurfaceDistanceMode mode);

}  // namespace handforge

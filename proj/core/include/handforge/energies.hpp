#pragma once

#include <vector>

#include "handforge/bvh.hpp"
#include "handforge/mesh.hpp"

namespace handforge {

/// Geman-McClure: rho(x) = x^2 / (x^2 + sigma^2); zero at zero, monotone in
/// |x|, bounded by 1.
double geman_mcclure(double x, double sigma);

/// Robust error function applied to point distances. `none` is the plain
/// squared distance.
struct RobustKernel {
  enum class Kind { none, geman_mcclure };
  Kind kind = Kind::none;
  double sigma = 0.02;  // length units

  double rho(double d) const;
  /// Iteratively-reweighted least-squares weight w(d) = rho'(d) / (2 d),
  /// so that w * d^2 is the quadratic majorizer matched at d.
  double irls_weight(double d) const;
};

/// Nearest-point correspondence of one query against a scan or surface.
struct Correspondence {
  int face = -1;     // -1 when the target is a bare point cloud
  Vec3 barycentric = Vec3::Zero();
  Vec3 point = Vec3::Zero();  // nearest target point
  double distance = 0.0;
};

/// Closest points of `queries` on `target`. Falls back to nearest-vertex
/// search when the target has no faces. Queries run in parallel on up to
/// `threads` workers; results do not depend on the thread count.
std::vector<Correspondence> closest_points(const TriMesh& target, const PointMatrix& queries,
                                           int threads = 1);

/// Scalar energy plus the square-root-weighted least-squares residuals the
/// solver consumes (3 entries per point, IRLS weights at the current
/// distances).
struct EnergyTerm {
  double energy = 0.0;
  VecX residuals;
};

/// Data term: sum over scan points of the robustified distance to the nearest
/// surface point. Throws DataError on an empty target surface.
EnergyTerm scan_to_mesh_energy(const PointMatrix& scan_points, const TriMesh& surface,
                               const RobustKernel& kernel, int threads = 1);

/// Reverse data term: sum over model vertices of the robustified distance to
/// the scan surface (or scan points when the scan is unmeshed).
EnergyTerm mesh_to_scan_energy(const PointMatrix& model_vertices, const TriMesh& scan,
                               const RobustKernel& kernel, int threads = 1);

/// Coupling term: squared norm of the difference between the edge vectors of
/// the free mesh and of the posed model. Zero exactly when the two differ by
/// one rigid translation per connected component.
EnergyTerm coupling_energy(const PointMatrix& free_vertices, const PointMatrix& model_vertices,
                           const EdgeMatrix& edges);

/// Zero-velocity pose regularizer: squared pose change between frames.
double velocity_energy(const VecX& pose, const VecX& previous_pose);

/// Mean and 95th-percentile scan-to-mesh distance, the reporting metric.
struct ScanToMeshStats {
  double mean = 0.0;
  double p95 = 0.0;
};
ScanToMeshStats scan_to_mesh_stats(const PointMatrix& scan_points, const TriMesh& surface,
                                   int threads = 1);

}  // namespace handforge

#include "handforge/energies.hpp"

#include <algorithm>
#include <functional>
#include <thread>

namespace handforge {

double geman_mcclure(double x, double sigma) {
  const double x2 = x * x;
  return x2 / (x2 + sigma * sigma);
}

double RobustKernel::rho(double d) const {
  switch (kind) {
    case Kind::none: return d * d;
    case Kind::geman_mcclure: return handforge::geman_mcclure(d, sigma);
  }
  return d * d;
}

double RobustKernel::irls_weight(double d) const {
  switch (kind) {
    case Kind::none: return 1.0;
    case Kind::geman_mcclure: {
      const double s2 = sigma * sigma;
      const double denom = d * d + s2;
      return s2 * s2 / (denom * denom) * (1.0 / s2);
    }
  }
  return 1.0;
}

namespace {

void run_parallel(int count, int threads, const std::function<void(int, int)>& chunk_fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    chunk_fn(0, count);
    return;
  }
  std::vector<std::thread> pool;
  const int step = (count + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int begin = t * step;
    const int end = std::min(count, begin + step);
    if (begin >= end) break;
    pool.emplace_back(chunk_fn, begin, end);
  }
  for (auto& worker : pool) worker.join();
}

}  // namespace

std::vector<Correspondence> closest_points(const TriMesh& target, const PointMatrix& queries,
                                           int threads) {
  const int n = static_cast<int>(queries.rows());
  std::vector<Correspondence> out(n);
  if (target.vertex_count() == 0) throw DataError("closest_points: empty target");

  if (target.face_count() > 0) {
    const SurfaceBvh bvh(target);
    run_parallel(n, threads, [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        const SurfaceHit hit = bvh.nearest(queries.row(i));
        out[i] = {hit.face_index, hit.barycentric, hit.point, hit.distance};
      }
    });
  } else {
    run_parallel(n, threads, [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        const Vec3 q = queries.row(i);
        int best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int v = 0; v < target.vertex_count(); ++v) {
          const double d2 = (Vec3(target.vertices.row(v)) - q).squaredNorm();
          if (d2 < best_d2) {
            best_d2 = d2;
            best = v;
          }
        }
        out[i].face = -1;
        out[i].point = target.vertices.row(best);
        out[i].barycentric = Vec3::Zero();
        out[i].distance = std::sqrt(best_d2);
      }
    });
  }
  return out;
}

namespace {

EnergyTerm point_set_energy(const PointMatrix& queries, const TriMesh& target,
                            const RobustKernel& kernel, int threads, const char* what) {
  if (target.vertex_count() == 0) throw DataError(std::string(what) + ": empty target");
  const auto corr = closest_points(target, queries, threads);
  EnergyTerm term;
  term.residuals.resize(3 * queries.rows());
  for (int i = 0; i < queries.rows(); ++i) {
    const double d = corr[i].distance;
    term.energy += kernel.rho(d);
    const double sw = std::sqrt(std::max(0.0, kernel.irls_weight(d)));
    term.residuals.segment<3>(3 * i) =
        sw * (Vec3(queries.row(i)) - corr[i].point);
  }
  return term;
}

}  // namespace

EnergyTerm scan_to_mesh_energy(const PointMatrix& scan_points, const TriMesh& surface,
                               const RobustKernel& kernel, int threads) {
  if (scan_points.rows() == 0) throw DataError("scan_to_mesh_energy: empty scan");
  if (surface.face_count() == 0) throw DataError("scan_to_mesh_energy: empty surface");
  return point_set_energy(scan_points, surface, kernel, threads, "scan_to_mesh_energy");
}

EnergyTerm mesh_to_scan_energy(const PointMatrix& model_vertices, const TriMesh& scan,
                               const RobustKernel& kernel, int threads) {
  return point_set_energy(model_vertices, scan, kernel, threads, "mesh_to_scan_energy");
}

EnergyTerm coupling_energy(const PointMatrix& free_vertices, const PointMatrix& model_vertices,
                           const EdgeMatrix& edges) {
  if (free_vertices.rows() != model_vertices.rows())
    throw DataError("coupling_energy: vertex counts differ");
  const PointMatrix d_free = edge_differences(free_vertices, edges);
  const PointMatrix d_model = edge_differences(model_vertices, edges);
  EnergyTerm term;
  term.residuals = flatten_points(d_free) - flatten_points(d_model);
  term.energy = term.residuals.squaredNorm();
  return term;
}

double velocity_energy(const VecX& pose, const VecX& previous_pose) {
  if (pose.size() != previous_pose.size())
    throw DataError("velocity_energy: pose lengths differ");
  return (pose - previous_pose).squaredNorm();
}

ScanToMeshStats scan_to_mesh_stats(const PointMatrix& scan_points, const TriMesh& surface,
                                   int threads) {
  const auto corr = closest_points(surface, scan_points, threads);
  std::vector<double> dist(corr.size());
  for (size_t i = 0; i < corr.size(); ++i) dist[i] = corr[i].distance;
  std::sort(dist.begin(), dist.end());
  ScanToMeshStats stats;
  if (dist.empty()) return stats;
  double sum = 0.0;
  for (double d : dist) sum += d;
  stats.mean = sum / dist.size();
  const size_t rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(dist.size())));
  stats.p95 = dist[std::min(dist.size() - 1, rank > 0 ? rank - 1 : 0)];
  return stats;
}

}  // namespace handforge

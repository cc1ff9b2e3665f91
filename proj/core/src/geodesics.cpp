#include "handforge/geodesics.hpp"

#include <limits>
#include <queue>
#include <sstream>

namespace handforge {

VecX geodesic_distances(const PointMatrix& vertices, const EdgeMatrix& edges, int source) {
  const int nv = static_cast<int>(vertices.rows());
  if (source < 0 || source >= nv) throw DataError("geodesic_distances: source out of range");

  std::vector<std::vector<std::pair<int, double>>> adj(nv);
  for (int e = 0; e < edges.rows(); ++e) {
    const int a = edges(e, 0), b = edges(e, 1);
    const double len = (vertices.row(a) - vertices.row(b)).norm();
    adj[a].emplace_back(b, len);
    adj[b].emplace_back(a, len);
  }

  VecX dist = VecX::Constant(nv, std::numeric_limits<double>::infinity());
  dist[source] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    const auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    for (const auto& [u, len] : adj[v]) {
      const double cand = d + len;
      if (cand < dist[u]) {
        dist[u] = cand;
        heap.emplace(cand, u);
      }
    }
  }

  std::vector<int> unreachable;
  for (int v = 0; v < nv; ++v)
    if (!std::isfinite(dist[v])) unreachable.push_back(v);
  if (!unreachable.empty()) {
    std::ostringstream msg;
    msg << "geodesic_distances: mesh is disconnected, unreachable vertices [";
    const size_t shown = std::min<size_t>(unreachable.size(), 16);
    for (size_t i = 0; i < shown; ++i) msg << (i ? " " : "") << unreachable[i];
    if (unreachable.size() > shown) msg << " ... (" << unreachable.size() << " total)";
    msg << "]";
    throw DataError(msg.str());
  }
  return dist;
}

VecX geodesic_distances(const TriMesh& mesh, int source) {
  return geodesic_distances(mesh.vertices, undirected_edges(mesh.faces), source);
}

}  // namespace handforge

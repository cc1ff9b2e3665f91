#pragma once

#include "handforge/mesh.hpp"

namespace handforge {

/// Shortest-path distances from `source` to every vertex over the undirected
/// edge graph with Euclidean edge lengths. Throws DataError naming the
/// unreachable vertices if the mesh is not edge-connected.
VecX geodesic_distances(const TriMesh& mesh, int source);

/// Variant reusing a precomputed edge list (the adjacency is rebuilt per call).
VecX geodesic_distances(const PointMatrix& vertices, const EdgeMatrix& edges, int source);

}  // namespace handforge

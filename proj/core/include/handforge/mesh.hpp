#pragma once

#include <vector>

#include "handforge/types.hpp"

namespace handforge {

/// Triangle mesh (or bare point cloud when faces is empty).
/// Coordinates are in model units; 1 unit = 1 meter by convention.
struct TriMesh {
  PointMatrix vertices;  // V x 3
  FaceMatrix faces;      // F x 3, indices into vertices
  PointMatrix normals;   // optional: 0 rows, or V rows of per-vertex normals

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
  int face_count() const { return static_cast<int>(faces.rows()); }
  bool has_normals() const { return normals.rows() == vertices.rows() && vertices.rows() > 0; }
};

/// Throws DataError if any face index is out of range or a face repeats a vertex.
/// The message lists every offending face.
void validate_mesh(const TriMesh& mesh);

/// Undirected edge list: each edge once, endpoints ordered a < b, rows sorted
/// lexicographically. Deterministic for a given face set.
EdgeMatrix undirected_edges(const FaceMatrix& faces);

/// Edge-difference operator D: for edge (a, b) with a < b emits vertices[b] - vertices[a],
/// one row per edge, in edge-list order. Linear in the vertices.
PointMatrix edge_differences(const PointMatrix& vertices, const EdgeMatrix& edges);

/// D as an explicit sparse matrix mapping flattened vertices (3V) to flattened
/// edge vectors (3E). edge_differences(V, E) == unflatten(matrix * flatten(V)).
SparseMat edge_difference_matrix(const EdgeMatrix& edges, int vertex_count);

/// Signed volume of a closed mesh, sum of tetra determinants about the origin.
double signed_volume(const TriMesh& mesh);

/// Area-weighted per-vertex normals (normalized; zero where degenerate).
PointMatrix vertex_normals(const TriMesh& mesh);

/// Vertex adjacency from the undirected edge list.
std::vector<std::vector<int>> vertex_adjacency(const EdgeMatrix& edges, int vertex_count);

}  // namespace handforge

#include "handforge/mesh.hpp"

#include <algorithm>
#include <sstream>

namespace handforge {

void validate_mesh(const TriMesh& mesh) {
  const int nv = mesh.vertex_count();
  std::vector<int> bad_index;
  std::vector<int> degenerate;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const int a = mesh.faces(f, 0), b = mesh.faces(f, 1), c = mesh.faces(f, 2);
    if (a < 0 || b < 0 || c < 0 || a >= nv || b >= nv || c >= nv) bad_index.push_back(f);
    else if (a == b || b == c || a == c) degenerate.push_back(f);
  }
  if (!bad_index.empty() || !degenerate.empty()) {
    std::ostringstream msg;
    msg << "invalid mesh:";
    if (!bad_index.empty()) {
      msg << " out-of-range indices in faces [";
      for (size_t i = 0; i < bad_index.size(); ++i) msg << (i ? " " : "") << bad_index[i];
      msg << "]";
    }
    if (!degenerate.empty()) {
      msg << " degenerate faces [";
      for (size_t i = 0; i < degenerate.size(); ++i) msg << (i ? " " : "") << degenerate[i];
      msg << "]";
    }
    throw DataError(msg.str());
  }
}

EdgeMatrix undirected_edges(const FaceMatrix& faces) {
  std::vector<std::pair<int, int>> edges;
  edges.reserve(static_cast<size_t>(faces.rows()) * 3);
  for (int f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = faces(f, k), b = faces(f, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      edges.emplace_back(a, b);
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  EdgeMatrix out(static_cast<int>(edges.size()), 2);
  for (size_t e = 0; e < edges.size(); ++e) {
    out(static_cast<int>(e), 0) = edges[e].first;
    out(static_cast<int>(e), 1) = edges[e].second;
  }
  return out;
}

PointMatrix edge_differences(const PointMatrix& vertices, const EdgeMatrix& edges) {
  PointMatrix out(edges.rows(), 3);
  for (int e = 0; e < edges.rows(); ++e) {
    const int a = edges(e, 0), b = edges(e, 1);
    if (a < 0 || b < 0 || a >= vertices.rows() || b >= vertices.rows())
      throw DataError("edge_differences: edge index out of range");
    out.row(e) = vertices.row(b) - vertices.row(a);
  }
  return out;
}

SparseMat edge_difference_matrix(const EdgeMatrix& edges, int vertex_count) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<size_t>(edges.rows()) * 6);
  for (int e = 0; e < edges.rows(); ++e) {
    const int a = edges(e, 0), b = edges(e, 1);
    for (int c = 0; c < 3; ++c) {
      triplets.emplace_back(3 * e + c, 3 * b + c, 1.0);
      triplets.emplace_back(3 * e + c, 3 * a + c, -1.0);
    }
  }
  SparseMat mat(3 * edges.rows(), 3 * vertex_count);
  mat.setFromTriplets(triplets.begin(), triplets.end());
  return mat;
}

double signed_volume(const TriMesh& mesh) {
  double vol = 0.0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    vol += a.dot(b.cross(c));
  }
  return vol / 6.0;
}

PointMatrix vertex_normals(const TriMesh& mesh) {
  PointMatrix normals = PointMatrix::Zero(mesh.vertex_count(), 3);
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    const Vec3 n = (b - a).cross(c - a);  // area-weighted
    for (int k = 0; k < 3; ++k) normals.row(mesh.faces(f, k)) += n.transpose();
  }
  for (int v = 0; v < normals.rows(); ++v) {
    const double len = normals.row(v).norm();
    if (len > 0.0) normals.row(v) /= len;
  }
  return normals;
}

std::vector<std::vector<int>> vertex_adjacency(const EdgeMatrix& edges, int vertex_count) {
  std::vector<std::vector<int>> adj(vertex_count);
  for (int e = 0; e < edges.rows(); ++e) {
    adj[edges(e, 0)].push_back(edges(e, 1));
    adj[edges(e, 1)].push_back(edges(e, 0));
  }
  return adj;
}

}  // namespace handforge

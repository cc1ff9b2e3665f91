#include "handforge/mesh_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace handforge {
namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& why) {
  std::ostringstream msg;
  msg << path.string() << ":" << line << ": " << why;
  throw IoError(msg.str());
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

// OBJ face tokens may carry /vt/vn suffixes; only the vertex index is used.
int parse_obj_face_index(const std::string& token, const std::filesystem::path& path, int line) {
  size_t slash = token.find('/');
  const std::string head = slash == std::string::npos ? token : token.substr(0, slash);
  int idx = 0;
  try {
    idx = std::stoi(head);
  } catch (const std::exception&) {
    parse_fail(path, line, "invalid face index '" + token + "'");
  }
  if (idx <= 0) parse_fail(path, line, "OBJ face indices are 1-based, got " + head);
  return idx - 1;
}

TriMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::vector<Vec3> verts;
  std::vector<Eigen::Vector3i> faces;
  std::string line_text;
  int line = 0;
  while (std::getline(in, line_text)) {
    ++line;
    std::istringstream ss(line_text);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) parse_fail(path, line, "expected 'v x y z'");
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string token;
      while (ss >> token) idx.push_back(parse_obj_face_index(token, path, line));
      if (idx.size() < 3) parse_fail(path, line, "face with fewer than 3 vertices");
      // Fan-triangulate polygons.
      for (size_t k = 2; k < idx.size(); ++k)
        faces.push_back({idx[0], static_cast<int>(idx[k - 1]), idx[k]});
    }
    // vn/vt/usemtl etc. are ignored.
  }

  TriMesh mesh;
  mesh.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t v = 0; v < verts.size(); ++v) mesh.vertices.row(static_cast<int>(v)) = verts[v];
  mesh.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f) mesh.faces.row(static_cast<int>(f)) = faces[f];
  return mesh;
}

TriMesh load_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::string line_text;
  int line = 0;
  auto next_line = [&](std::string& out) {
    if (!std::getline(in, out)) parse_fail(path, line, "unexpected end of file");
    ++line;
  };

  next_line(line_text);
  if (line_text.rfind("ply", 0) != 0) parse_fail(path, line, "missing 'ply' magic");

  int n_verts = -1, n_faces = -1;
  bool has_vertex_normals = false;
  std::string current_element;
  while (true) {
    next_line(line_text);
    std::istringstream ss(line_text);
    std::string tag;
    ss >> tag;
    if (tag == "comment") continue;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") parse_fail(path, line, "only ascii PLY is supported");
    } else if (tag == "element") {
      std::string name;
      int count = 0;
      ss >> name >> count;
      current_element = name;
      if (name == "vertex") n_verts = count;
      else if (name == "face") n_faces = count;
      else parse_fail(path, line, "unsupported element '" + name + "'");
    } else if (tag == "property") {
      std::string type, name;
      ss >> type >> name;
      if (current_element == "vertex" && name == "nx") has_vertex_normals = true;
    } else if (tag == "end_header") {
      break;
    } else {
      parse_fail(path, line, "unexpected header line");
    }
  }
  if (n_verts < 0) parse_fail(path, line, "header missing 'element vertex'");
  if (n_faces < 0) n_faces = 0;

  TriMesh mesh;
  mesh.vertices.resize(n_verts, 3);
  if (has_vertex_normals) mesh.normals.resize(n_verts, 3);
  for (int v = 0; v < n_verts; ++v) {
    next_line(line_text);
    std::istringstream ss(line_text);
    if (!(ss >> mesh.vertices(v, 0) >> mesh.vertices(v, 1) >> mesh.vertices(v, 2)))
      parse_fail(path, line, "expected vertex coordinates");
    if (has_vertex_normals &&
        !(ss >> mesh.normals(v, 0) >> mesh.normals(v, 1) >> mesh.normals(v, 2)))
      parse_fail(path, line, "expected vertex normal");
  }

  std::vector<Eigen::Vector3i> faces;
  for (int f = 0; f < n_faces; ++f) {
    next_line(line_text);
    std::istringstream ss(line_text);
    int count = 0;
    if (!(ss >> count) || count < 3) parse_fail(path, line, "bad face vertex count");
    std::vector<int> idx(count);
    for (int k = 0; k < count; ++k)
      if (!(ss >> idx[k])) parse_fail(path, line, "missing face index");
    for (int k = 2; k < count; ++k) faces.push_back({idx[0], idx[k - 1], idx[k]});
  }
  mesh.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f) mesh.faces.row(static_cast<int>(f)) = faces[f];
  return mesh;
}

void write_scalar(std::ostream& out, double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  out << buf;
}

void write_point(std::ostream& out, const PointMatrix& pts, int row) {
  for (int c = 0; c < 3; ++c) {
    if (c) out << ' ';
    write_scalar(out, pts(row, c));
  }
}

}  // namespace

TriMesh load_mesh(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  const std::string ext = lower_extension(path);
  TriMesh mesh;
  if (ext == ".obj") mesh = load_obj(path);
  else if (ext == ".ply") mesh = load_ply(path);
  else throw IoError("unsupported mesh extension '" + ext + "' (want .obj or .ply)");
  validate_mesh(mesh);
  return mesh;
}

void save_mesh(const std::filesystem::path& path, const TriMesh& mesh) {
  const std::string ext = lower_extension(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());

  if (ext == ".obj") {
    for (int v = 0; v < mesh.vertex_count(); ++v) {
      out << "v ";
      write_point(out, mesh.vertices, v);
      out << '\n';
    }
    for (int f = 0; f < mesh.face_count(); ++f)
      out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' '
          << mesh.faces(f, 2) + 1 << '\n';
  } else if (ext == ".ply") {
    const bool normals = mesh.has_normals();
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertex_count() << '\n';
    out << "property double x\nproperty double y\nproperty double z\n";
    if (normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
    out << "element face " << mesh.face_count() << '\n';
    out << "property list uchar int vertex_indices\nend_header\n";
    for (int v = 0; v < mesh.vertex_count(); ++v) {
      write_point(out, mesh.vertices, v);
      if (normals) {
        out << ' ';
        write_point(out, mesh.normals, v);
      }
      out << '\n';
    }
    for (int f = 0; f < mesh.face_count(); ++f)
      out << "3 " << mesh.faces(f, 0) << ' ' << mesh.faces(f, 1) << ' ' << mesh.faces(f, 2)
          << '\n';
  } else {
    throw IoError("unsupported mesh extension '" + ext + "' (want .obj or .ply)");
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace handforge

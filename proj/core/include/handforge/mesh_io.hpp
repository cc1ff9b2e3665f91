#pragma once

#include <filesystem>

#include "handforge/mesh.hpp"

namespace handforge {

/// Load an ascii OBJ (.obj) or ascii PLY (.ply) mesh. Vertex order is
/// preserved from the file. Throws IoError with a line number on parse
/// failures and DataError listing offending faces for degenerate topology.
TriMesh load_mesh(const std::filesystem::path& path);

/// Write ascii OBJ or PLY depending on extension, 9 significant digits.
void save_mesh(const std::filesystem::path& path, const TriMesh& mesh);

}  // namespace handforge

#include "handforge/model_io.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace handforge {
namespace {

using nlohmann::json;

json points_to_json(const PointMatrix& points) {
  json arr = json::array();
  for (int v = 0; v < points.rows(); ++v)
    arr.push_back({points(v, 0), points(v, 1), points(v, 2)});
  return arr;
}

PointMatrix points_from_json(const json& arr, const char* what) {
  PointMatrix out(static_cast<int>(arr.size()), 3);
  for (size_t v = 0; v < arr.size(); ++v) {
    if (!arr[v].is_array() || arr[v].size() != 3)
      throw IoError(std::string("model container: ") + what + " entries must be 3-vectors");
    for (int c = 0; c < 3; ++c) out(static_cast<int>(v), c) = arr[v][c].get<double>();
  }
  return out;
}

json basis_to_json(const MatX& basis) {
  json arr = json::array();
  for (int c = 0; c < basis.cols(); ++c) {
    std::vector<double> col(basis.rows());
    for (int r = 0; r < basis.rows(); ++r) col[r] = basis(r, c);
    arr.push_back(col);
  }
  return arr;
}

MatX basis_from_json(const json& arr, int rows, const char* what) {
  MatX out(rows, static_cast<int>(arr.size()));
  for (size_t c = 0; c < arr.size(); ++c) {
    const auto col = arr[c].get<std::vector<double>>();
    if (static_cast<int>(col.size()) != rows)
      throw IoError(std::string("model container: ") + what + " column size mismatch");
    for (int r = 0; r < rows; ++r) out(r, static_cast<size_t>(c)) = col[r];
  }
  return out;
}

json sparse_to_json(const SparseMatRM& mat) {
  json arr = json::array();
  for (int r = 0; r < mat.rows(); ++r)
    for (SparseMatRM::InnerIterator it(mat, r); it; ++it)
      arr.push_back({r, static_cast<int>(it.col()), it.value()});
  return arr;
}

SparseMatRM sparse_from_json(const json& arr, int rows, int cols, const char* what) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(arr.size());
  for (const auto& entry : arr) {
    if (!entry.is_array() || entry.size() != 3)
      throw IoError(std::string("model container: ") + what + " triplets must be [row col value]");
    const int r = entry[0].get<int>(), c = entry[1].get<int>();
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      throw IoError(std::string("model container: ") + what + " triplet out of range");
    triplets.emplace_back(r, c, entry[2].get<double>());
  }
  SparseMatRM out(rows, cols);
  out.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

json embedding_to_json(const PoseEmbedding& emb) {
  json doc;
  doc["full_dim"] = emb.full_dim;
  doc["mean"] = std::vector<double>(emb.mean.data(), emb.mean.data() + emb.mean.size());
  doc["variances"] =
      std::vector<double>(emb.variances.data(), emb.variances.data() + emb.variances.size());
  json basis = json::array();
  for (int r = 0; r < emb.basis.rows(); ++r) {
    std::vector<double> row(emb.basis.cols());
    for (int c = 0; c < emb.basis.cols(); ++c) row[c] = emb.basis(r, c);
    basis.push_back(row);
  }
  doc["basis"] = basis;
  return doc;
}

void reject_unknown_keys(const json& doc, const std::set<std::string>& known, const char* where) {
  for (const auto& [key, value] : doc.items())
    if (!known.count(key))
      throw IoError(std::string("model container: unknown key '") + key + "' in " + where);
}

PoseEmbedding embedding_from_json(const json& doc) {
  reject_unknown_keys(doc, {"full_dim", "mean", "variances", "basis"}, "pose_embedding");
  PoseEmbedding emb;
  emb.full_dim = doc.at("full_dim").get<int>();
  const auto mean = doc.at("mean").get<std::vector<double>>();
  emb.mean = Eigen::Map<const VecX>(mean.data(), static_cast<int>(mean.size()));
  const auto variances = doc.at("variances").get<std::vector<double>>();
  emb.variances = Eigen::Map<const VecX>(variances.data(), static_cast<int>(variances.size()));
  const auto& basis = doc.at("basis");
  emb.basis.resize(static_cast<int>(basis.size()), emb.full_dim);
  for (size_t r = 0; r < basis.size(); ++r) {
    const auto row = basis[r].get<std::vector<double>>();
    if (static_cast<int>(row.size()) != emb.full_dim)
      throw IoError("model container: pose_embedding basis row size mismatch");
    for (int c = 0; c < emb.full_dim; ++c) emb.basis(static_cast<int>(r), c) = row[c];
  }
  emb.validate();
  return emb;
}

}  // namespace

void save_model(const std::filesystem::path& path, const SkinnedModel& model) {
  json doc;
  doc["version"] = "1";
  doc["units"] = model.units;
  doc["joint_count"] = model.part_count();
  doc["parents"] = std::vector<int>(model.tree.parents.data(),
                                    model.tree.parents.data() + model.tree.parents.size());
  doc["template"] = points_to_json(model.template_vertices);
  json faces = json::array();
  for (int f = 0; f < model.faces.rows(); ++f)
    faces.push_back({model.faces(f, 0), model.faces(f, 1), model.faces(f, 2)});
  doc["faces"] = faces;
  doc["shape_basis"] = basis_to_json(model.shape_basis);
  doc["pose_basis"] = basis_to_json(model.pose_basis);
  doc["include_root_features"] = model.include_root_features;
  doc["blend_weights"] = sparse_to_json(model.blend_weights);
  doc["joint_regressor"] = sparse_to_json(model.joint_regressor);
  doc["rest_pose"] = std::vector<double>(model.rest_pose.data(),
                                         model.rest_pose.data() + model.rest_pose.size());
  if (model.pose_embedding) doc["pose_embedding"] = embedding_to_json(*model.pose_embedding);
  if (!model.hands.empty()) {
    json hands = json::array();
    for (const auto& hand : model.hands) {
      json section;
      section["side"] = hand.side;
      section["joints"] = hand.joint_indices;
      section["vertices"] = hand.vertex_indices;
      if (hand.embedding) section["embedding"] = embedding_to_json(*hand.embedding);
      hands.push_back(section);
    }
    doc["hands"] = hands;
  }

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

SkinnedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError("bad model container " + path.string() + ": " + e.what());
  }

  reject_unknown_keys(doc,
                      {"version", "units", "joint_count", "parents", "template", "faces",
                       "shape_basis", "pose_basis", "include_root_features", "blend_weights",
                       "joint_regressor", "rest_pose", "pose_embedding", "hands"},
                      "top level");
  if (doc.at("version").get<std::string>() != "1")
    throw IoError("model container: unsupported version");

  SkinnedModel model;
  model.units = doc.at("units").get<std::string>();
  const int parts = doc.at("joint_count").get<int>();
  const auto parents = doc.at("parents").get<std::vector<int>>();
  if (static_cast<int>(parents.size()) != parts)
    throw IoError("model container: parents length != joint_count");
  model.tree.parents = Eigen::Map<const Eigen::VectorXi>(parents.data(), parts);

  model.template_vertices = points_from_json(doc.at("template"), "template");
  const int nv = model.vertex_count();

  const auto& faces = doc.at("faces");
  model.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f) {
    if (!faces[f].is_array() || faces[f].size() != 3)
      throw IoError("model container: faces entries must be triples");
    for (int c = 0; c < 3; ++c) model.faces(static_cast<int>(f), c) = faces[f][c].get<int>();
  }

  model.include_root_features = doc.at("include_root_features").get<bool>();
  model.shape_basis = basis_from_json(doc.at("shape_basis"), 3 * nv, "shape_basis");
  model.pose_basis = basis_from_json(doc.at("pose_basis"), 3 * nv, "pose_basis");
  model.blend_weights = sparse_from_json(doc.at("blend_weights"), nv, parts, "blend_weights");
  model.joint_regressor =
      sparse_from_json(doc.at("joint_regressor"), parts, nv, "joint_regressor");
  const auto rest = doc.at("rest_pose").get<std::vector<double>>();
  if (static_cast<int>(rest.size()) != 3 * parts)
    throw IoError("model container: rest_pose length != 3 * joint_count");
  model.rest_pose = Eigen::Map<const VecX>(rest.data(), 3 * parts);

  if (doc.contains("pose_embedding"))
    model.pose_embedding = embedding_from_json(doc.at("pose_embedding"));
  if (doc.contains("hands")) {
    for (const auto& section : doc.at("hands")) {
      reject_unknown_keys(section, {"side", "joints", "vertices", "embedding"}, "hands");
      HandSection hand;
      hand.side = section.at("side").get<std::string>();
      hand.joint_indices = section.at("joints").get<std::vector<int>>();
      hand.vertex_indices = section.at("vertices").get<std::vector<int>>();
      if (section.contains("embedding"))
        hand.embedding = embedding_from_json(section.at("embedding"));
      model.hands.push_back(std::move(hand));
    }
  }

  validate_mesh(model.template_mesh());
  validate_model(model);
  return model;
}

}  // namespace handforge

#include "handforge/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace handforge {

PoseMap full_pose_map(int parts) {
  PoseMap map;
  map.offset = VecX::Zero(3 * parts);
  map.matrix.resize(3 * parts, 3 * parts);
  map.matrix.setIdentity();
  return map;
}

PoseMap embedded_pose_map(const SkinnedModel& model, int k) {
  const int np = model.pose_dim();
  std::vector<char> is_embedded(np, 0);
  struct Block {
    const PoseEmbedding* embedding;
    std::vector<int> coords;
  };
  std::vector<Block> blocks;

  if (!model.hands.empty()) {
    for (const auto& hand : model.hands) {
      if (!hand.embedding)
        throw DataError("embedded_pose_map: hand section '" + hand.side +
                        "' stores no embedding");
      Block block;
      block.embedding = &*hand.embedding;
      for (int j : hand.joint_indices)
        for (int c = 0; c < 3; ++c) block.coords.push_back(3 * j + c);
      blocks.push_back(std::move(block));
    }
  } else {
    if (!model.pose_embedding)
      throw DataError("embedded_pose_map: model stores no pose embedding");
    Block block;
    block.embedding = &*model.pose_embedding;
    for (int c = 3; c < np; ++c) block.coords.push_back(c);
    blocks.push_back(std::move(block));
  }

  PoseMap map;
  map.offset = VecX::Zero(np);
  std::vector<Eigen::Triplet<double>> triplets;
  for (const auto& block : blocks) {
    if (static_cast<int>(block.coords.size()) != block.embedding->full_dim)
      throw DataError("embedded_pose_map: embedding dimension mismatch");
    for (size_t i = 0; i < block.coords.size(); ++i) {
      is_embedded[block.coords[i]] = 1;
      map.offset[block.coords[i]] = block.embedding->mean[static_cast<int>(i)];
    }
  }

  int dof = 0;
  for (int c = 0; c < np; ++c)
    if (!is_embedded[c]) triplets.emplace_back(c, dof++, 1.0);
  for (const auto& block : blocks) {
    const int kk = (k <= 0 || k > block.embedding->components())
                       ? block.embedding->components()
                       : k;
    for (int comp = 0; comp < kk; ++comp, ++dof)
      for (size_t i = 0; i < block.coords.size(); ++i)
        triplets.emplace_back(block.coords[i], dof,
                              block.embedding->basis(comp, static_cast<int>(i)));
  }
  map.matrix.resize(np, dof);
  map.matrix.setFromTriplets(triplets.begin(), triplets.end());
  return map;
}

std::vector<int> body_pose_coords(const SkinnedModel& model) {
  std::vector<char> is_hand(model.pose_dim(), 0);
  for (const auto& hand : model.hands)
    for (int j : hand.joint_indices)
      for (int c = 0; c < 3; ++c) is_hand[3 * j + c] = 1;
  std::vector<int> coords;
  if (model.hands.empty()) {
    coords = {0, 1, 2};  // plain hand model: the wrist-equivalent root
  } else {
    for (int c = 0; c < model.pose_dim(); ++c)
      if (!is_hand[c]) coords.push_back(c);
  }
  return coords;
}

std::vector<std::vector<int>> hand_pose_blocks(const SkinnedModel& model) {
  std::vector<std::vector<int>> blocks;
  if (!model.hands.empty()) {
    for (const auto& hand : model.hands) {
      std::vector<int> coords;
      for (int j : hand.joint_indices)
        for (int c = 0; c < 3; ++c) coords.push_back(3 * j + c);
      blocks.push_back(std::move(coords));
    }
  } else {
    std::vector<int> coords;
    for (int c = 3; c < model.pose_dim(); ++c) coords.push_back(c);
    blocks.push_back(std::move(coords));
  }
  return blocks;
}

void EnergyWeights::validate() const {
  const double values[] = {lambda_g,       lambda_gbar, lambda_c, lambda_theta_b,
                           lambda_theta_h, lambda_beta, lambda_r};
  for (double v : values)
    if (v < 0.0 || !std::isfinite(v)) throw DataError("EnergyWeights: weights must be >= 0");
  if (sigma_gm <= 0.0) throw DataError("EnergyWeights: sigma_gm must be positive");
  if (annealing.empty()) throw DataError("EnergyWeights: empty annealing schedule");
  for (size_t i = 0; i < annealing.size(); ++i) {
    if (annealing[i] <= 0.0) throw DataError("EnergyWeights: annealing weights must be positive");
    if (i > 0 && annealing[i] < annealing[i - 1])
      throw DataError("EnergyWeights: annealing schedule must be non-decreasing");
  }
}

// ---------------------------------------------------------------------------
// FitProblem

FitProblem::FitProblem(const SkinnedModel& model, FitLayout layout)
    : model_(model), layout_(std::move(layout)) {
  if (layout_.beta_dim != 0 && layout_.beta_dim != model.shape_dim())
    throw DataError("FitProblem: beta_dim must be 0 or the model's shape dimension");
  if (layout_.with_vertices && layout_.vertex_count != model.vertex_count())
    throw DataError("FitProblem: free-vertex count must match the model");
  frozen_beta_ = VecX::Zero(model.shape_dim());
}

void FitProblem::set_frozen_beta(const VecX& beta) {
  if (beta.size() != model_.shape_dim())
    throw DataError("FitProblem: frozen beta length mismatch");
  frozen_beta_ = beta;
}

void FitProblem::add_scan_to_free(const PointMatrix& scan_points,
                                  const std::vector<Correspondence>& corr, const VecX& weights,
                                  double lambda, bool normal_projected,
                                  const PointMatrix* face_normals) {
  if (!layout_.with_vertices)
    throw DataError("FitProblem: scan-to-free requires free vertices in the layout");
  if (corr.size() != static_cast<size_t>(scan_points.rows()) ||
      weights.size() != scan_points.rows())
    throw DataError("FitProblem: correspondence count mismatch");
  for (int i = 0; i < scan_points.rows(); ++i) {
    ScanFreeItem item;
    item.target = scan_points.row(i);
    const int f = corr[i].face;
    if (f < 0) throw DataError("FitProblem: scan-to-free needs surface correspondences");
    for (int j = 0; j < 3; ++j) item.verts[j] = model_.faces(f, j);
    item.bary = corr[i].barycentric;
    item.scale = std::sqrt(2.0 * lambda * std::max(0.0, weights[i]));
    item.projected = normal_projected;
    item.normal = normal_projected && face_normals ? Vec3(face_normals->row(f)) : Vec3::UnitZ();
    scan_free_.push_back(item);
    rows_ += normal_projected ? 1 : 3;
  }
}

void FitProblem::add_scan_to_model(const PointMatrix& scan_points,
                                   const std::vector<Correspondence>& corr, const VecX& weights,
                                   double lambda) {
  if (corr.size() != static_cast<size_t>(scan_points.rows()) ||
      weights.size() != scan_points.rows())
    throw DataError("FitProblem: correspondence count mismatch");
  for (int i = 0; i < scan_points.rows(); ++i) {
    ScanModelItem item;
    item.target = scan_points.row(i);
    const int f = corr[i].face;
    if (f < 0) throw DataError("FitProblem: scan-to-model needs surface correspondences");
    for (int j = 0; j < 3; ++j) item.verts[j] = model_.faces(f, j);
    item.bary = corr[i].barycentric;
    item.scale = std::sqrt(2.0 * lambda * std::max(0.0, weights[i]));
    scan_model_.push_back(item);
    rows_ += 3;
  }
}

void FitProblem::add_model_to_scan(const std::vector<int>& vertices, const PointMatrix& targets,
                                   const VecX& weights, double lambda) {
  if (targets.rows() != static_cast<int>(vertices.size()) ||
      weights.size() != targets.rows())
    throw DataError("FitProblem: target count mismatch");
  for (size_t i = 0; i < vertices.size(); ++i) {
    ModelScanItem item;
    item.vertex = vertices[i];
    item.target = targets.row(static_cast<int>(i));
    item.scale = std::sqrt(2.0 * lambda * std::max(0.0, weights[static_cast<int>(i)]));
    model_scan_.push_back(item);
    rows_ += 3;
  }
}

void FitProblem::add_coupling(const EdgeMatrix& edges, double lambda) {
  if (!layout_.with_vertices)
    throw DataError("FitProblem: coupling requires free vertices in the layout");
  if (coupling_edges_.rows() > 0) throw DataError("FitProblem: coupling already added");
  coupling_edges_ = edges;
  coupling_scale_ = std::sqrt(2.0 * lambda);
  rows_ += 3 * static_cast<int>(edges.rows());
}

void FitProblem::add_pose_prior(const std::vector<int>& coords, const VecX& reference,
                                double lambda) {
  if (reference.size() != static_cast<int>(coords.size()))
    throw DataError("FitProblem: pose prior reference length mismatch");
  // r = s * (theta(x)[coords] - ref), affine through the pose map.
  AffineBlock block;
  const double s = std::sqrt(2.0 * lambda);
  std::vector<Eigen::Triplet<double>> triplets;
  block.shift = VecX::Zero(coords.size());
  std::vector<int> coord_row(layout_.pose_map.offset.size(), -1);
  for (size_t i = 0; i < coords.size(); ++i) {
    const int c = coords[i];
    coord_row[c] = static_cast<int>(i);
    block.shift[static_cast<int>(i)] =
        s * (reference[static_cast<int>(i)] - layout_.pose_map.offset[c]);
  }
  // Row c of pose_map.matrix maps dof columns into theta coordinate c.
  for (int col = 0; col < layout_.pose_map.matrix.outerSize(); ++col)
    for (SparseMat::InnerIterator it(layout_.pose_map.matrix, col); it; ++it) {
      const int r = coord_row[it.row()];
      if (r < 0) continue;
      triplets.emplace_back(r, layout_.pose_offset() + col, s * it.value());
    }
  block.matrix.resize(static_cast<int>(coords.size()), layout_.total());
  block.matrix.setFromTriplets(triplets.begin(), triplets.end());
  affine_.push_back(std::move(block));
  rows_ += static_cast<int>(coords.size());
}

void FitProblem::add_gaussian_pose_prior(const GaussianPosePrior& prior,
                                         const std::vector<int>& coords, double lambda) {
  const int d = static_cast<int>(coords.size());
  if (prior.mean.size() != d || prior.covariance.rows() != d || prior.covariance.cols() != d)
    throw DataError("FitProblem: Gaussian prior dimension mismatch");
  Eigen::LLT<MatX> llt(prior.covariance);
  if (llt.info() != Eigen::Success)
    throw DataError("FitProblem: Gaussian prior covariance not positive definite");
  const MatX whitener =
      MatX(llt.matrixL()).triangularView<Eigen::Lower>().solve(MatX::Identity(d, d));

  // r = sqrt(lambda) * U * (theta[coords] - mean); the 1/2 of the Gaussian
  // exponent is carried by the solver's 0.5 |r|^2.
  const double s = std::sqrt(lambda);
  MatX selector = MatX::Zero(d, layout_.pose_map.dof());
  VecX offset_sel(d);
  for (int i = 0; i < d; ++i) {
    offset_sel[i] = layout_.pose_map.offset[coords[i]];
    selector.row(i) = MatX(layout_.pose_map.matrix).row(coords[i]);
  }
  AffineBlock block;
  const MatX a = s * whitener * selector;
  block.shift = s * whitener * (prior.mean - offset_sel);
  std::vector<Eigen::Triplet<double>> triplets;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < a.cols(); ++c)
      if (a(r, c) != 0.0) triplets.emplace_back(r, layout_.pose_offset() + c, a(r, c));
  block.matrix.resize(d, layout_.total());
  block.matrix.setFromTriplets(triplets.begin(), triplets.end());
  affine_.push_back(std::move(block));
  rows_ += d;
}

void FitProblem::add_beta_prior(double lambda) {
  if (layout_.beta_dim == 0) return;  // frozen shape: constant energy
  AffineBlock block;
  const double s = std::sqrt(2.0 * lambda);
  std::vector<Eigen::Triplet<double>> triplets;
  for (int i = 0; i < layout_.beta_dim; ++i) triplets.emplace_back(i, i, s);
  block.matrix.resize(layout_.beta_dim, layout_.total());
  block.matrix.setFromTriplets(triplets.begin(), triplets.end());
  block.shift = VecX::Zero(layout_.beta_dim);
  affine_.push_back(std::move(block));
  rows_ += layout_.beta_dim;
}

void FitProblem::add_gmm_prior(const GmmPrior& prior, const std::vector<int>& coords,
                               double lambda, const VecX& theta_at_freeze) {
  const int d = static_cast<int>(coords.size());
  if (prior.dim() != d) throw DataError("FitProblem: GMM dimension mismatch");
  VecX theta_h(d);
  for (int i = 0; i < d; ++i) theta_h[i] = theta_at_freeze[coords[i]];
  const int active = gmm_active_component(prior, theta_h);

  // r = sqrt(lambda) * U_j (theta_h(x) - mu_j); the component's constant does
  // not move the minimizer.
  const double s = std::sqrt(lambda);
  const MatX& whitener = prior.whiteners[active];
  MatX selector = MatX::Zero(d, layout_.pose_map.dof());
  VecX offset_sel(d);
  for (int i = 0; i < d; ++i) {
    offset_sel[i] = layout_.pose_map.offset[coords[i]];
    selector.row(i) = MatX(layout_.pose_map.matrix).row(coords[i]);
  }
  AffineBlock block;
  const MatX a = s * whitener * selector;
  block.shift = s * whitener * (prior.means.row(active).transpose() - offset_sel);
  std::vector<Eigen::Triplet<double>> triplets;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < a.cols(); ++c)
      if (a(r, c) != 0.0) triplets.emplace_back(r, layout_.pose_offset() + c, a(r, c));
  block.matrix.resize(d, layout_.total());
  block.matrix.setFromTriplets(triplets.begin(), triplets.end());
  affine_.push_back(std::move(block));
  rows_ += d;
}

VecX FitProblem::make_initial(const VecX& beta, const VecX& theta, const Vec3& translation,
                              const PointMatrix* vertices) const {
  VecX x = VecX::Zero(layout_.total());
  if (layout_.beta_dim > 0) x.head(layout_.beta_dim) = beta;
  x.segment(layout_.pose_offset(), layout_.pose_map.dof()) = layout_.pose_map.pull_back(theta);
  x.segment<3>(layout_.translation_offset()) = translation;
  if (layout_.with_vertices) {
    PointMatrix v;
    if (vertices) v = *vertices;
    else v = evaluate(model_, layout_.beta_dim > 0 ? beta : frozen_beta_, theta, translation)
                 .vertices;
    x.tail(3 * layout_.vertex_count) = flatten_points(v);
  }
  return x;
}

FitProblem::Unpacked FitProblem::unpack(const VecX& x) const {
  Unpacked u;
  u.beta = layout_.beta_dim > 0 ? VecX(x.head(layout_.beta_dim)) : frozen_beta_;
  u.theta = layout_.pose_map.theta(x.segment(layout_.pose_offset(), layout_.pose_map.dof()));
  u.translation = x.segment<3>(layout_.translation_offset());
  if (layout_.with_vertices)
    u.vertices = unflatten_points(x.tail(3 * layout_.vertex_count));
  return u;
}

void FitProblem::eval(const VecX& x, VecX* r, SparseMat* jac) const {
  const Unpacked u = unpack(x);
  const bool needs_model =
      !scan_model_.empty() || !model_scan_.empty() || coupling_edges_.rows() > 0;

  PointMatrix model_vertices;
  MatX model_jac;  // 3V x total, chained, only model-dependent columns filled
  if (needs_model) {
    EvalResult er =
        evaluate_with_jacobian(model_, u.beta, u.theta, u.translation, jac != nullptr);
    model_vertices = std::move(er.vertices);
    if (jac) {
      const int nbm = model_.shape_dim();
      const int np = model_.pose_dim();
      model_jac = MatX::Zero(3 * model_.vertex_count(), layout_.total());
      if (layout_.beta_dim > 0)
        model_jac.leftCols(layout_.beta_dim) = er.jacobian.leftCols(nbm);
      model_jac.middleCols(layout_.pose_offset(), layout_.pose_map.dof()) =
          er.jacobian.middleCols(nbm, np) * layout_.pose_map.matrix;
      model_jac.middleCols(layout_.translation_offset(), 3) = er.jacobian.rightCols(3);
    }
  }

  if (r) r->setZero(rows_);
  std::vector<Eigen::Triplet<double>> triplets;
  int row = 0;

  const int voff = layout_.vertices_offset();
  for (const auto& item : scan_free_) {
    Vec3 point = Vec3::Zero();
    for (int j = 0; j < 3; ++j) point += item.bary[j] * Vec3(u.vertices.row(item.verts[j]));
    if (item.projected) {
      if (r) (*r)[row] = item.scale * item.normal.dot(point - item.target);
      if (jac)
        for (int j = 0; j < 3; ++j)
          for (int c = 0; c < 3; ++c)
            triplets.emplace_back(row, voff + 3 * item.verts[j] + c,
                                  item.scale * item.bary[j] * item.normal[c]);
      row += 1;
    } else {
      if (r) r->segment<3>(row) = item.scale * (point - item.target);
      if (jac)
        for (int j = 0; j < 3; ++j)
          for (int c = 0; c < 3; ++c)
            triplets.emplace_back(row + c, voff + 3 * item.verts[j] + c,
                                  item.scale * item.bary[j]);
      row += 3;
    }
  }

  for (const auto& item : scan_model_) {
    Vec3 point = Vec3::Zero();
    for (int j = 0; j < 3; ++j) point += item.bary[j] * Vec3(model_vertices.row(item.verts[j]));
    if (r) r->segment<3>(row) = item.scale * (point - item.target);
    if (jac) {
      for (int c = 0; c < 3; ++c) {
        Eigen::RowVectorXd grad = Eigen::RowVectorXd::Zero(layout_.total());
        for (int j = 0; j < 3; ++j)
          grad += item.bary[j] * model_jac.row(3 * item.verts[j] + c);
        for (int col = 0; col < grad.size(); ++col)
          if (grad[col] != 0.0) triplets.emplace_back(row + c, col, item.scale * grad[col]);
      }
    }
    row += 3;
  }

  for (const auto& item : model_scan_) {
    if (r)
      r->segment<3>(row) =
          item.scale * (Vec3(model_vertices.row(item.vertex)) - item.target);
    if (jac)
      for (int c = 0; c < 3; ++c) {
        const auto grad = model_jac.row(3 * item.vertex + c);
        for (int col = 0; col < grad.size(); ++col)
          if (grad[col] != 0.0) triplets.emplace_back(row + c, col, item.scale * grad[col]);
      }
    row += 3;
  }

  for (int e = 0; e < coupling_edges_.rows(); ++e) {
    const int a = coupling_edges_(e, 0), b = coupling_edges_(e, 1);
    const Vec3 free_edge = Vec3(u.vertices.row(b)) - Vec3(u.vertices.row(a));
    const Vec3 model_edge =
        Vec3(model_vertices.row(b)) - Vec3(model_vertices.row(a));
    if (r) r->segment<3>(row) = coupling_scale_ * (free_edge - model_edge);
    if (jac) {
      for (int c = 0; c < 3; ++c) {
        triplets.emplace_back(row + c, voff + 3 * b + c, coupling_scale_);
        triplets.emplace_back(row + c, voff + 3 * a + c, -coupling_scale_);
        const Eigen::RowVectorXd grad =
            model_jac.row(3 * b + c) - model_jac.row(3 * a + c);
        for (int col = 0; col < grad.size(); ++col)
          if (grad[col] != 0.0)
            triplets.emplace_back(row + c, col, -coupling_scale_ * grad[col]);
      }
    }
    row += 3;
  }

  for (const auto& block : affine_) {
    if (r) r->segment(row, block.matrix.rows()) = block.matrix * x - block.shift;
    if (jac)
      for (int col = 0; col < block.matrix.outerSize(); ++col)
        for (SparseMat::InnerIterator it(block.matrix, col); it; ++it)
          triplets.emplace_back(row + static_cast<int>(it.row()), col, it.value());
    row += static_cast<int>(block.matrix.rows());
  }

  if (jac) {
    jac->resize(rows_, layout_.total());
    jac->setFromTriplets(triplets.begin(), triplets.end());
  }
}

VecX FitProblem::residuals(const VecX& x) const {
  VecX r;
  eval(x, &r, nullptr);
  return r;
}

SparseMat FitProblem::jacobian(const VecX& x) const {
  SparseMat jac;
  eval(x, nullptr, &jac);
  return jac;
}

// ---------------------------------------------------------------------------
// Drivers

namespace {

Vec3 centroid(const PointMatrix& points) {
  if (points.rows() == 0) return Vec3::Zero();
  return points.colwise().mean();
}

RobustKernel data_kernel(const FitOptions& opts) {
  RobustKernel kernel;
  kernel.kind = opts.robust_data ? RobustKernel::Kind::geman_mcclure : RobustKernel::Kind::none;
  kernel.sigma = opts.weights.sigma_gm;
  return kernel;
}

VecX irls_weights(const std::vector<Correspondence>& corr, const RobustKernel& kernel) {
  VecX weights(corr.size());
  for (size_t i = 0; i < corr.size(); ++i)
    weights[static_cast<int>(i)] = kernel.irls_weight(corr[i].distance);
  return weights;
}

PointMatrix correspondence_targets(const std::vector<Correspondence>& corr) {
  PointMatrix targets(static_cast<int>(corr.size()), 3);
  for (size_t i = 0; i < corr.size(); ++i)
    targets.row(static_cast<int>(i)) = corr[i].point;
  return targets;
}

std::vector<int> all_vertex_ids(int count) {
  std::vector<int> ids(count);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

void add_hand_priors(FitProblem& problem, const SkinnedModel& model, const FitOptions& opts,
                     double lambda, const VecX& theta) {
  for (const auto& block : hand_pose_blocks(model)) {
    if (block.empty()) continue;
    if (opts.hand_gmm && opts.hand_gmm->dim() == static_cast<int>(block.size())) {
      problem.add_gmm_prior(*opts.hand_gmm, block, lambda, theta);
    } else {
      problem.add_pose_prior(block, VecX::Zero(block.size()), lambda);
    }
  }
}

PointMatrix face_normals_of(const TriMesh& mesh) {
  PointMatrix normals(mesh.face_count(), 3);
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    Vec3 n = (b - a).cross(c - a);
    const double len = n.norm();
    normals.row(f) = (len > 0 ? Vec3(n / len) : Vec3::UnitZ()).transpose();
  }
  return normals;
}

}  // namespace

FirstFrameFit fit_first_frame(const SkinnedModel& model, const TriMesh& scan,
                              const FitOptions& opts) {
  opts.weights.validate();
  if (scan.vertex_count() == 0) throw DataError("fit_first_frame: empty scan");

  const RobustKernel kernel = data_kernel(opts);
  const PoseMap pose_map = opts.embedding_k > 0 ? embedded_pose_map(model, opts.embedding_k)
                                                : full_pose_map(model.part_count());
  const bool with_beta = model.shape_dim() > 0;
  const auto body_coords = body_pose_coords(model);
  const auto vertex_ids = all_vertex_ids(model.vertex_count());

  VecX beta = VecX::Zero(model.shape_dim());
  VecX theta = VecX::Zero(model.pose_dim());
  Vec3 translation =
      centroid(scan.vertices) - centroid(evaluate(model, beta, theta, Vec3::Zero()).vertices);

  double final_cost = 0.0;
  const int outer_per_stage =
      std::max(2, opts.outer_loops / static_cast<int>(opts.weights.annealing.size()));
  for (double lambda_a : opts.weights.annealing) {
    double prev_cost = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < outer_per_stage; ++outer) {
      const TriMesh posed = evaluate(model, beta, theta, translation);
      const auto corr_data = closest_points(posed, scan.vertices, opts.threads);
      const auto corr_reverse = closest_points(scan, posed.vertices, opts.threads);

      FitLayout layout{with_beta ? model.shape_dim() : 0, pose_map, false, 0};
      FitProblem problem(model, layout);
      if (!with_beta) problem.set_frozen_beta(beta);
      problem.add_scan_to_model(scan.vertices, corr_data, irls_weights(corr_data, kernel),
                                lambda_a * opts.weights.lambda_gbar);
      problem.add_model_to_scan(vertex_ids, correspondence_targets(corr_reverse),
                                irls_weights(corr_reverse, kernel),
                                0.1 * lambda_a * opts.weights.lambda_gbar);
      problem.add_pose_prior(body_coords, VecX::Zero(body_coords.size()),
                             opts.weights.lambda_theta_b / lambda_a);
      add_hand_priors(problem, model, opts, opts.weights.lambda_theta_h / lambda_a, theta);
      if (with_beta) problem.add_beta_prior(opts.weights.lambda_beta);

      const SolveReport report =
          dogleg_minimize(problem, problem.make_initial(beta, theta, translation), opts.solver);
      const auto u = problem.unpack(report.x);
      beta = u.beta;
      theta = u.theta;
      translation = u.translation;
      final_cost = report.cost;
      if (std::abs(prev_cost - report.cost) < 1e-12 * std::max(1.0, prev_cost)) break;
      prev_cost = report.cost;
    }
  }
  return {beta, theta, translation, final_cost};
}

RegistrationResult fit_hand_scan(const SkinnedModel& model, const TriMesh& scan,
                                 const FitOptions& opts, const VecX* init_pose,
                                 const VecX* init_beta) {
  opts.weights.validate();
  if (scan.vertex_count() == 0) throw DataError("fit_hand_scan: empty scan");

  const RobustKernel kernel = data_kernel(opts);
  const PoseMap pose_map = opts.embedding_k > 0 ? embedded_pose_map(model, opts.embedding_k)
                                                : full_pose_map(model.part_count());
  const bool with_beta = model.shape_dim() > 0;
  const auto hand_blocks = hand_pose_blocks(model);

  VecX beta = init_beta ? *init_beta : VecX::Zero(model.shape_dim());
  VecX theta = init_pose ? *init_pose : VecX::Zero(model.pose_dim());
  Vec3 translation =
      centroid(scan.vertices) - centroid(evaluate(model, beta, theta, Vec3::Zero()).vertices);

  auto add_pose_terms = [&](FitProblem& problem, const VecX& theta_now) {
    if (opts.scan_prior) {
      // Per-scan Gaussian prior over the articulated joints.
      for (const auto& block : hand_blocks)
        if (static_cast<int>(block.size()) == opts.scan_prior->mean.size())
          problem.add_gaussian_pose_prior(*opts.scan_prior, block,
                                          opts.weights.lambda_theta_h);
    } else {
      add_hand_priors(problem, model, opts, opts.weights.lambda_theta_h, theta_now);
    }
  };

  // Model-only warmup, then the coupled solve with free vertices.
  const int warmup_loops = std::max(2, opts.outer_loops / 3);
  double prev_cost = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < warmup_loops; ++outer) {
    const TriMesh posed = evaluate(model, beta, theta, translation);
    const auto corr = closest_points(posed, scan.vertices, opts.threads);
    FitLayout layout{with_beta ? model.shape_dim() : 0, pose_map, false, 0};
    FitProblem problem(model, layout);
    if (!with_beta) problem.set_frozen_beta(beta);
    problem.add_scan_to_model(scan.vertices, corr, irls_weights(corr, kernel),
                              opts.weights.lambda_g);
    add_pose_terms(problem, theta);
    if (with_beta) problem.add_beta_prior(opts.weights.lambda_beta);
    const SolveReport report =
        dogleg_minimize(problem, problem.make_initial(beta, theta, translation), opts.solver);
    const auto u = problem.unpack(report.x);
    beta = u.beta;
    theta = u.theta;
    translation = u.translation;
    if (std::abs(prev_cost - report.cost) < 1e-12 * std::max(1.0, prev_cost)) break;
    prev_cost = report.cost;
  }

  PointMatrix free_vertices = evaluate(model, beta, theta, translation).vertices;
  const EdgeMatrix edges = undirected_edges(model.faces);
  const int coupled_loops = std::max(2, opts.outer_loops - warmup_loops);
  double final_cost = 0.0;
  prev_cost = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < coupled_loops; ++outer) {
    const TriMesh free_mesh{free_vertices, model.faces, {}};
    const auto corr = closest_points(free_mesh, scan.vertices, opts.threads);
    const PointMatrix normals = face_normals_of(free_mesh);

    FitLayout layout{with_beta ? model.shape_dim() : 0, pose_map, true, model.vertex_count()};
    FitProblem problem(model, layout);
    if (!with_beta) problem.set_frozen_beta(beta);
    problem.add_scan_to_free(scan.vertices, corr, irls_weights(corr, kernel),
                             opts.weights.lambda_g,
                             opts.distance_mode == SurfaceDistanceMode::normal_projected,
                             &normals);
    problem.add_coupling(edges, opts.weights.lambda_c);
    add_pose_terms(problem, theta);
    if (with_beta) problem.add_beta_prior(opts.weights.lambda_beta);

    const SolveReport report = dogleg_minimize(
        problem, problem.make_initial(beta, theta, translation, &free_vertices), opts.solver);
    const auto u = problem.unpack(report.x);
    beta = u.beta;
    theta = u.theta;
    translation = u.translation;
    free_vertices = u.vertices;
    final_cost = report.cost;
    if (std::abs(prev_cost - report.cost) < 1e-12 * std::max(1.0, prev_cost)) break;
    prev_cost = report.cost;
  }

  RegistrationResult result;
  result.beta = beta;
  FrameResult frame;
  frame.frame = 0;
  frame.pose = theta;
  frame.translation = translation;
  frame.free_vertices = free_vertices;
  frame.final_cost = final_cost;
  frame.s2m =
      scan_to_mesh_stats(scan.vertices, TriMesh{free_vertices, model.faces, {}}, opts.threads);
  result.frames.push_back(std::move(frame));
  return result;
}

FrameResult coupled_align_frame(const SkinnedModel& model, const TriMesh& scan,
                                const VecX& prev_pose, const Vec3& prev_translation,
                                const VecX& beta, bool optimize_beta, const FitOptions& opts) {
  opts.weights.validate();
  if (scan.vertex_count() == 0) throw DataError("coupled_align_frame: empty scan");
  const double lambda_a = opts.weights.annealing.back();

  const RobustKernel kernel = data_kernel(opts);
  const PoseMap pose_map = opts.embedding_k > 0 ? embedded_pose_map(model, opts.embedding_k)
                                                : full_pose_map(model.part_count());
  const bool with_beta = optimize_beta && model.shape_dim() > 0;
  const EdgeMatrix edges = undirected_edges(model.faces);

  VecX beta_now = beta.size() == model.shape_dim() ? beta : VecX::Zero(model.shape_dim());
  VecX theta = prev_pose;
  Vec3 translation = prev_translation;
  PointMatrix free_vertices = evaluate(model, beta_now, theta, translation).vertices;

  std::vector<int> all_coords(model.pose_dim());
  std::iota(all_coords.begin(), all_coords.end(), 0);

  FrameResult frame;
  double prev_cost = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < std::max(2, opts.outer_loops); ++outer) {
    const TriMesh free_mesh{free_vertices, model.faces, {}};
    const auto corr = closest_points(free_mesh, scan.vertices, opts.threads);
    const PointMatrix normals = face_normals_of(free_mesh);

    FitLayout layout{with_beta ? model.shape_dim() : 0, pose_map, true, model.vertex_count()};
    FitProblem problem(model, layout);
    if (!with_beta) problem.set_frozen_beta(beta_now);
    problem.add_scan_to_free(scan.vertices, corr, irls_weights(corr, kernel),
                             lambda_a * opts.weights.lambda_g,
                             opts.distance_mode == SurfaceDistanceMode::normal_projected,
                             &normals);
    problem.add_coupling(edges, opts.weights.lambda_c / lambda_a);
    add_hand_priors(problem, model, opts, opts.weights.lambda_theta_h / lambda_a, theta);
    problem.add_pose_prior(all_coords, prev_pose, opts.weights.lambda_r);
    if (with_beta) problem.add_beta_prior(opts.weights.lambda_beta);

    const SolveReport report = dogleg_minimize(
        problem, problem.make_initial(beta_now, theta, translation, &free_vertices),
        opts.solver);
    const auto u = problem.unpack(report.x);
    beta_now = u.beta;
    theta = u.theta;
    translation = u.translation;
    free_vertices = u.vertices;
    frame.final_cost = report.cost;
    if (std::abs(prev_cost - report.cost) < 1e-12 * std::max(1.0, prev_cost)) break;
    prev_cost = report.cost;
  }

  frame.pose = theta;
  frame.translation = translation;
  if (with_beta) frame.beta = beta_now;
  frame.free_vertices = free_vertices;
  frame.s2m =
      scan_to_mesh_stats(scan.vertices, TriMesh{free_vertices, model.faces, {}}, opts.threads);
  return frame;
}

SubjectTemplate build_subject_template(const SkinnedModel& model, const VecX& beta,
                                       const std::vector<FrameResult>& frames,
                                       double mad_factor) {
  std::vector<const FrameResult*> usable;
  for (const auto& frame : frames)
    if (frame.free_vertices.rows() == model.vertex_count()) usable.push_back(&frame);
  if (usable.empty()) throw DataError("build_subject_template: no aligned frames");

  const int nv = model.vertex_count();
  std::vector<PointMatrix> unposed;
  unposed.reserve(usable.size());
  for (const auto* frame : usable)
    unposed.push_back(
        unpose(model, beta, frame->pose, frame->translation, frame->free_vertices)
            .rest_vertices);

  // Vertex-wise median mesh.
  PointMatrix median_mesh(nv, 3);
  std::vector<double> scratch(unposed.size());
  for (int v = 0; v < nv; ++v)
    for (int c = 0; c < 3; ++c) {
      for (size_t f = 0; f < unposed.size(); ++f) scratch[f] = unposed[f](v, c);
      std::nth_element(scratch.begin(), scratch.begin() + scratch.size() / 2, scratch.end());
      median_mesh(v, c) = scratch[scratch.size() / 2];
    }

  VecX deviation(unposed.size());
  for (size_t f = 0; f < unposed.size(); ++f) {
    double sum = 0.0;
    for (int v = 0; v < nv; ++v)
      sum += (Vec3(unposed[f].row(v)) - Vec3(median_mesh.row(v))).norm();
    deviation[static_cast<int>(f)] = sum / nv;
  }
  auto median_of = [](VecX values) {
    std::sort(values.data(), values.data() + values.size());
    return values[values.size() / 2];
  };
  const double med = median_of(deviation);
  const double mad = median_of((deviation.array() - med).abs().matrix());
  const double threshold = med + mad_factor * mad + 1e-12;

  SubjectTemplate out;
  PointMatrix sum = PointMatrix::Zero(nv, 3);
  for (size_t f = 0; f < unposed.size(); ++f) {
    if (deviation[static_cast<int>(f)] <= threshold) {
      out.kept.push_back(usable[f]->frame);
      sum += unposed[f];
    } else {
      out.rejected.push_back(usable[f]->frame);
    }
  }
  if (out.kept.empty()) throw DataError("build_subject_template: all frames rejected");
  out.vertices = sum / static_cast<double>(out.kept.size());
  return out;
}

SkinnedModel personalized_model(const SkinnedModel& model, const PointMatrix& subject_template) {
  if (subject_template.rows() != model.vertex_count())
    throw DataError("personalized_model: template vertex count mismatch");
  SkinnedModel subject = model;
  subject.template_vertices = subject_template;
  subject.shape_basis = MatX::Zero(3 * model.vertex_count(), 0);
  return subject;
}

RegistrationResult track_sequence(const SkinnedModel& model, const std::vector<TriMesh>& scans,
                                  const FitOptions& opts) {
  if (scans.empty()) throw DataError("track_sequence: no frames");
  opts.weights.validate();

  RegistrationResult result;
  const FirstFrameFit first = fit_first_frame(model, scans[0], opts);
  result.beta = first.beta;

  // Stage one: subject template from the leading frames.
  PointMatrix subject_template;
  const int template_frames =
      std::min<int>(opts.template_frames, static_cast<int>(scans.size()));
  if (model.shape_dim() > 0 && template_frames > 0) {
    std::vector<FrameResult> stage_one;
    VecX prev_pose = first.pose;
    Vec3 prev_translation = first.translation;
    VecX beta = first.beta;
    for (int f = 0; f < template_frames; ++f) {
      FrameResult frame = coupled_align_frame(model, scans[f], prev_pose, prev_translation,
                                              beta, /*optimize_beta=*/true, opts);
      frame.frame = f;
      prev_pose = frame.pose;
      prev_translation = frame.translation;
      if (frame.beta.size() == beta.size()) beta = frame.beta;
      stage_one.push_back(std::move(frame));
    }
    result.beta = beta;
    subject_template =
        build_subject_template(model, result.beta, stage_one, opts.curation_mad_factor)
            .vertices;
  } else {
    subject_template = model.template_vertices + shape_blend(model, first.beta);
  }
  result.subject_template = subject_template;

  // Stage two: track every frame against the personalized model.
  const SkinnedModel subject = personalized_model(model, subject_template);
  const FirstFrameFit subject_first = fit_first_frame(subject, scans[0], opts);
  VecX prev_pose = subject_first.pose;
  Vec3 prev_translation = subject_first.translation;
  for (size_t f = 0; f < scans.size(); ++f) {
    FrameResult frame;
    try {
      frame = coupled_align_frame(subject, scans[f], prev_pose, prev_translation, VecX(),
                                  /*optimize_beta=*/false, opts);
      frame.converged = true;
    } catch (const Error&) {
      frame.pose = prev_pose;
      frame.translation = prev_translation;
      frame.free_vertices = evaluate(subject, VecX::Zero(0), prev_pose, prev_translation)
                                .vertices;
      frame.converged = false;
      if (scans[f].vertex_count() > 0)
        frame.s2m = scan_to_mesh_stats(scans[f].vertices,
                                       TriMesh{frame.free_vertices, subject.faces, {}},
                                       opts.threads);
    }
    frame.frame = static_cast<int>(f);
    result.frames.push_back(frame);
    if (frame.converged) {
      prev_pose = result.frames.back().pose;
      prev_translation = result.frames.back().translation;
    }
  }
  return result;
}

}  // namespace handforge

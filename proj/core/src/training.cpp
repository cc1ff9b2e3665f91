#include "handforge/training.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "handforge/embedding.hpp"
#include "handforge/geodesics.hpp"
#include "handforge/registration.hpp"

namespace handforge {

std::vector<int> TrainingSet::subjects() const {
  std::set<int> ids;
  for (const auto& sample : samples) ids.insert(sample.subject);
  return {ids.begin(), ids.end()};
}

void TrainingSet::validate(const SkinnedModel& init_model) const {
  if (samples.empty()) throw DataError("TrainingSet: no samples");
  std::map<int, bool> has_flat;
  for (const auto& sample : samples) {
    if (sample.vertices.rows() != init_model.vertex_count())
      throw DataError("TrainingSet: registration topology does not match the model");
    bool flat = sample.pose_label == "flat" || sample.pose_label == "neutral";
    if (!flat && sample.pose_init.size() > 0) flat = sample.pose_init.norm() < 0.3;
    has_flat[sample.subject] = has_flat[sample.subject] || flat;
  }
  for (const auto& [subject, flat] : has_flat)
    if (!flat)
      throw DataError("TrainingSet: subject " + std::to_string(subject) +
                      " has no near-flat pose");
}

RegularizerWeights locality_weights(const TriMesh& template_mesh,
                                    const SparseMatRM& joint_regressor) {
  const int nv = template_mesh.vertex_count();
  const int parts = static_cast<int>(joint_regressor.rows());
  if (joint_regressor.cols() != nv)
    throw DataError("locality_weights: regressor columns != vertex count");

  const EdgeMatrix edges = undirected_edges(template_mesh.faces);
  RegularizerWeights out;
  out.values = MatX::Zero(nv, parts);
  // One Dijkstra per support vertex; by symmetry D(t_i, v) = D(v, t_i).
  std::map<int, VecX> from_source;
  for (int j = 0; j < parts; ++j) {
    for (SparseMatRM::InnerIterator it(joint_regressor, j); it; ++it) {
      const int v = static_cast<int>(it.col());
      auto found = from_source.find(v);
      if (found == from_source.end())
        found = from_source.emplace(v, geodesic_distances(template_mesh.vertices, edges, v))
                    .first;
      out.values.col(j) += it.value() * found->second;
    }
  }
  return out;
}

double template_weight(const SkinnedModel& model, const VecX& pose) {
  const double sum = pose_feature(model, pose).squaredNorm();
  constexpr double kCap = 1e12;
  if (sum <= 0.0) return kCap;
  const double w = 1.0 / (sum * sum);
  return std::min(w, kCap);
}

VecX simplex_nnls(const MatX& a, const VecX& b, int max_iterations) {
  const int n = static_cast<int>(a.cols());
  if (n == 0) throw DataError("simplex_nnls: no columns");
  if (n == 1) return VecX::Ones(1);

  std::vector<char> active(n, 1);  // in the free set
  auto solve_free = [&](const std::vector<char>& free_set) {
    // Equality-constrained least squares via KKT: [2A_F^T A_F, 1; 1^T, 0].
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      if (free_set[i]) idx.push_back(i);
    const int m = static_cast<int>(idx.size());
    MatX af(a.rows(), m);
    for (int i = 0; i < m; ++i) af.col(i) = a.col(idx[i]);
    MatX kkt = MatX::Zero(m + 1, m + 1);
    kkt.topLeftCorner(m, m) = 2.0 * af.transpose() * af;
    kkt.topLeftCorner(m, m).diagonal().array() += 1e-12;
    kkt.topRightCorner(m, 1).setOnes();
    kkt.bottomLeftCorner(1, m).setOnes();
    VecX rhs = VecX::Zero(m + 1);
    rhs.head(m) = 2.0 * af.transpose() * b;
    rhs[m] = 1.0;
    const VecX sol = kkt.fullPivLu().solve(rhs);
    VecX w = VecX::Zero(n);
    for (int i = 0; i < m; ++i) w[idx[i]] = sol[i];
    return std::make_pair(w, sol[m]);  // weights and the sum-constraint multiplier
  };

  VecX w = VecX::Zero(n);
  for (int i = 0; i < n; ++i) w[i] = 1.0 / n;

  for (int iter = 0; iter < max_iterations; ++iter) {
    auto [candidate, mu] = solve_free(active);
    if (candidate.minCoeff() >= -1e-12) {
      w = candidate.cwiseMax(0.0);
      // KKT check on the zero set: negative reduced gradient means the
      // variable wants back in.
      const VecX grad = 2.0 * a.transpose() * (a * w - b);
      int worst = -1;
      double worst_value = -1e-10;
      for (int i = 0; i < n; ++i) {
        if (active[i]) continue;
        const double reduced = grad[i] + mu;
        if (reduced < worst_value) {
          worst_value = reduced;
          worst = i;
        }
      }
      if (worst < 0) break;
      active[worst] = 1;
      continue;
    }
    // Step from w toward the candidate until the first variable hits zero.
    double alpha = 1.0;
    int blocker = -1;
    for (int i = 0; i < n; ++i) {
      if (!active[i] || candidate[i] >= 0.0) continue;
      const double denom = w[i] - candidate[i];
      if (denom <= 1e-15) continue;
      const double step = w[i] / denom;
      if (step < alpha) {
        alpha = step;
        blocker = i;
      }
    }
    w = w + alpha * (candidate - w);
    if (blocker >= 0) {
      w[blocker] = 0.0;
      active[blocker] = 0;
    } else {
      w = candidate.cwiseMax(0.0);
      break;
    }
    const double total = w.sum();
    if (total > 0) w /= total;
  }
  // Final cleanup keeps the row exactly on the simplex.
  w = w.cwiseMax(0.0);
  w /= w.sum();
  return w;
}

namespace {

struct PosedBlend {
  Mat3 rot;
  Vec3 t;
};

// Blended per-vertex affine transforms for a fixed pose on a subject model.
std::vector<PosedBlend> blended_transforms(const SkinnedModel& model,
                                           const PointMatrix& subject_template,
                                           const VecX& pose) {
  const PointMatrix joints = model.joint_regressor * subject_template;
  const PartTransforms transforms = forward_kinematics(model.tree, joints, pose);
  std::vector<PosedBlend> out(model.vertex_count());
  for (int v = 0; v < model.vertex_count(); ++v) {
    Mat3 rot = Mat3::Zero();
    Vec3 t = Vec3::Zero();
    for (SparseMatRM::InnerIterator it(model.blend_weights, v); it; ++it) {
      rot += it.value() * transforms.rotation[it.col()];
      t += it.value() * transforms.translation[it.col()];
    }
    out[v] = {rot, t};
  }
  return out;
}

double mean_vertex_error(const PointMatrix& a, const PointMatrix& b) {
  double sum = 0.0;
  for (int v = 0; v < a.rows(); ++v) sum += (Vec3(a.row(v)) - Vec3(b.row(v))).norm();
  return sum / std::max<int>(1, static_cast<int>(a.rows()));
}

// Pose (and translation) refinement of one registration against a subject
// model, vertex-to-vertex.
struct PoseFit {
  VecX pose;
  Vec3 translation;
  double error;
};
PoseFit refine_pose(const SkinnedModel& subject_model, const PointMatrix& registration,
                    const VecX& init_pose, const Vec3& init_translation,
                    const SolveOptions& solver, const PoseMap& pose_map) {
  FitLayout layout{0, pose_map, false, 0};
  FitProblem problem(subject_model, layout);
  std::vector<int> ids(subject_model.vertex_count());
  std::iota(ids.begin(), ids.end(), 0);
  problem.add_model_to_scan(ids, registration, VecX::Ones(ids.size()), 0.5);
  const SolveReport report = dogleg_minimize(
      problem, problem.make_initial(VecX(), init_pose, init_translation), solver);
  const auto u = problem.unpack(report.x);
  const PointMatrix posed =
      evaluate(subject_model, VecX::Zero(0), u.theta, u.translation).vertices;
  return {u.theta, u.translation, mean_vertex_error(posed, registration)};
}

}  // namespace

TrainResult train_model(const SkinnedModel& init_model, const TrainingSet& data,
                        const TrainConfig& config) {
  data.validate(init_model);
  const auto subjects = data.subjects();
  if (subjects.size() < 2) throw DataError("train_model: need at least two subjects");
  std::map<int, int> samples_per_subject;
  for (const auto& sample : data.samples) samples_per_subject[sample.subject] += 1;
  for (const auto& [subject, count] : samples_per_subject)
    if (count < 5)
      throw DataError("train_model: subject " + std::to_string(subject) +
                      " has fewer than 5 poses");

  const int nv = init_model.vertex_count();
  const int n = static_cast<int>(data.samples.size());
  const int nf = init_model.pose_feature_count();

  TrainResult result;
  SkinnedModel model = init_model;
  model.pose_basis = MatX::Zero(3 * nv, nf);
  model.shape_basis = MatX::Zero(3 * nv, 0);

  // Locality costs on the initial template; refreshed once per round.
  RegularizerWeights locality = locality_weights(init_model.template_mesh(),
                                                 model.joint_regressor);

  std::vector<VecX> poses(n);
  std::vector<Vec3> translations(n, Vec3::Zero());
  for (int i = 0; i < n; ++i)
    poses[i] = data.samples[i].pose_init.size() == model.pose_dim()
                   ? data.samples[i].pose_init
                   : VecX::Zero(model.pose_dim());

  std::map<int, PointMatrix> templates;
  for (int s : subjects) templates[s] = model.template_vertices;

  std::vector<char> excluded(n, 0);
  TrainingReport report;
  report.joint_source = data.subject_joints.empty() ? "regressor-fixed" : "annotated";

  const PoseMap pose_map = full_pose_map(model.part_count());
  double prev_round_error = std::numeric_limits<double>::infinity();
  bool first_template_pass = true;

  for (int round = 0; round < config.max_rounds; ++round) {
    // (a) Pose refinement per registration against its subject template.
    std::vector<double> errors(n, 0.0);
    for (int i = 0; i < n; ++i) {
      SkinnedModel subject_model = personalized_model(model, templates[data.samples[i].subject]);
      const PoseFit fit = refine_pose(subject_model, data.samples[i].vertices, poses[i],
                                      translations[i], config.solver, pose_map);
      poses[i] = fit.pose;
      translations[i] = fit.translation;
      errors[i] = fit.error;
    }
    {
      // Exclude non-converging registrations: error far above the median.
      std::vector<double> sorted;
      for (int i = 0; i < n; ++i)
        if (!excluded[i]) sorted.push_back(errors[i]);
      std::sort(sorted.begin(), sorted.end());
      const double median = sorted[sorted.size() / 2];
      for (int i = 0; i < n; ++i)
        if (!excluded[i] && errors[i] > config.exclusion_factor * std::max(median, 1e-9)) {
          excluded[i] = 1;
          report.excluded_samples.push_back(i);
        }
    }

    for (int inner = 0; inner < config.inner_iterations; ++inner) {
      // (b) Personalized templates by weighted least squares; the rest-pose
      // emphasis weights apply only on the very first pass, while the pose
      // correctives are still zero.
      for (int s : subjects) {
        std::vector<Mat3> lhs(nv, Mat3::Zero());
        std::vector<Vec3> rhs(nv, Vec3::Zero());
        for (int i = 0; i < n; ++i) {
          if (excluded[i] || data.samples[i].subject != s) continue;
          const double w = first_template_pass ? template_weight(model, poses[i]) : 1.0;
          const auto blend = blended_transforms(model, templates[s], poses[i]);
          const VecX feature = pose_feature(model, poses[i]);
          const PointMatrix pose_offsets =
              model.pose_basis.size() > 0 && config.learn_pose_blendshapes
                  ? unflatten_points(model.pose_basis * feature)
                  : PointMatrix::Zero(nv, 3);
          for (int v = 0; v < nv; ++v) {
            const Vec3 target = Vec3(data.samples[i].vertices.row(v)) - translations[i] -
                                blend[v].t - blend[v].rot * Vec3(pose_offsets.row(v));
            lhs[v] += w * blend[v].rot.transpose() * blend[v].rot;
            rhs[v] += w * blend[v].rot.transpose() * target;
          }
        }
        PointMatrix t_hat = templates[s];
        for (int v = 0; v < nv; ++v) {
          lhs[v].diagonal().array() += 1e-12;
          t_hat.row(v) = lhs[v].ldlt().solve(rhs[v]).transpose();
        }
        templates[s] = t_hat;
      }
      first_template_pass = false;

      // (c) Pose correctives by per-vertex ridge regression of the unposed
      // residuals on the rotation features, penalty per entry from the
      // locality costs (or their mean for the constant-cost baseline).
      if (config.learn_pose_blendshapes) {
        MatX features(n, nf);
        std::vector<PointMatrix> residuals(n);
        for (int i = 0; i < n; ++i) {
          if (excluded[i]) {
            features.row(i).setZero();
            residuals[i] = PointMatrix::Zero(nv, 3);
            continue;
          }
          features.row(i) = pose_feature(model, poses[i]).transpose();
          const auto blend =
              blended_transforms(model, templates[data.samples[i].subject], poses[i]);
          residuals[i].resize(nv, 3);
          for (int v = 0; v < nv; ++v) {
            const Vec3 unposed = blend[v].rot.partialPivLu().solve(
                Vec3(data.samples[i].vertices.row(v)) - translations[i] - blend[v].t);
            residuals[i].row(v) =
                (unposed - Vec3(templates[data.samples[i].subject].row(v))).transpose();
          }
        }
        const MatX ftf = features.transpose() * features;
        const double mean_cost = locality.values.rightCols(model.part_count() - 1).mean();
        for (int v = 0; v < nv; ++v) {
          MatX system = ftf;
          for (int col = 0; col < nf; ++col) {
            const int joint = col / 9;  // articulated joint index - 1
            const double cost = config.use_locality ? locality.entry(v, joint) : mean_cost;
            system(col, col) += config.ridge_strength * cost + 1e-12;
          }
          const Eigen::LDLT<MatX> solver(system);
          for (int c = 0; c < 3; ++c) {
            VecX target(n);
            for (int i = 0; i < n; ++i) target[i] = residuals[i](v, c);
            model.pose_basis.row(3 * v + c) =
                solver.solve(features.transpose() * target).transpose();
          }
        }
      }
    }

    // (d) Blend weights: simplex-constrained least squares per vertex over
    // parts within the geodesic support radius.
    {
      const EdgeMatrix edges = undirected_edges(model.faces);
      double mean_edge = 0.0;
      for (int e = 0; e < edges.rows(); ++e)
        mean_edge += (model.template_vertices.row(edges(e, 0)) -
                      model.template_vertices.row(edges(e, 1)))
                         .norm();
      mean_edge /= std::max<int>(1, static_cast<int>(edges.rows()));
      const double radius = 2.5 * mean_edge * config.weight_support_factor;

      // Joint anchor positions on the first subject template.
      const PointMatrix anchor_joints =
          model.joint_regressor * templates.begin()->second;

      std::vector<Eigen::Triplet<double>> triplets;
      for (int v = 0; v < nv; ++v) {
        std::vector<int> support;
        for (int j = 0; j < model.part_count(); ++j)
          if ((Vec3(anchor_joints.row(j)) -
               Vec3(templates.begin()->second.row(v)))
                  .norm() <= radius)
            support.push_back(j);
        if (support.empty()) support.push_back(0);

        std::vector<std::pair<int, const PointMatrix*>> used;
        MatX a(3 * n, static_cast<int>(support.size()));
        VecX b(3 * n);
        a.setZero();
        b.setZero();
        int row = 0;
        for (int i = 0; i < n; ++i) {
          if (excluded[i]) continue;
          const int s = data.samples[i].subject;
          const PointMatrix& t_hat = templates[s];
          const VecX feature = pose_feature(model, poses[i]);
          const Vec3 rigged = Vec3(t_hat.row(v)) +
                              (config.learn_pose_blendshapes
                                   ? Vec3(model.pose_basis.middleRows(3 * v, 3) * feature)
                                   : Vec3::Zero());
          const PointMatrix joints = model.joint_regressor * t_hat;
          const PartTransforms transforms = forward_kinematics(model.tree, joints, poses[i]);
          for (size_t k = 0; k < support.size(); ++k)
            a.block<3, 1>(row, static_cast<int>(k)) =
                transforms.apply(support[k], rigged) + translations[i];
          b.segment<3>(row) = Vec3(data.samples[i].vertices.row(v));
          row += 3;
        }
        (void)used;
        const VecX w = simplex_nnls(a.topRows(row), b.head(row));
        for (size_t k = 0; k < support.size(); ++k)
          if (w[static_cast<int>(k)] > 1e-10)
            triplets.emplace_back(v, support[k], w[static_cast<int>(k)]);
      }
      SparseMatRM weights(nv, model.part_count());
      weights.setFromTriplets(triplets.begin(), triplets.end());
      // Exact renormalization per row.
      for (int v = 0; v < nv; ++v) {
        double sum = 0.0;
        for (SparseMatRM::InnerIterator it(weights, v); it; ++it) sum += it.value();
        if (sum <= 0.0) continue;
        for (SparseMatRM::InnerIterator it(weights, v); it; ++it) it.valueRef() /= sum;
      }
      model.blend_weights = weights;
    }

    // (e) Joint regressor from annotated joints, support seeded from the
    // blend weights. Without annotations the regressor stays fixed.
    if (!data.subject_joints.empty()) {
      std::vector<Eigen::Triplet<double>> triplets;
      for (int j = 0; j < model.part_count(); ++j) {
        std::vector<int> support;
        for (SparseMatRM::InnerIterator it(model.joint_regressor, j); it; ++it)
          support.push_back(static_cast<int>(it.col()));
        for (int v = 0; v < nv; ++v)
          if (model.blend_weights.coeff(v, j) > 0.2) support.push_back(v);
        std::sort(support.begin(), support.end());
        support.erase(std::unique(support.begin(), support.end()), support.end());

        const int ns = static_cast<int>(data.subject_joints.size());
        MatX a(3 * ns + static_cast<int>(support.size()),
               static_cast<int>(support.size()));
        VecX b(a.rows());
        a.setZero();
        b.setZero();
        int row = 0;
        for (const auto& [s, joints] : data.subject_joints) {
          const PointMatrix& t_hat = templates.at(s);
          for (size_t k = 0; k < support.size(); ++k)
            a.block<3, 1>(row, static_cast<int>(k)) = t_hat.row(support[k]).transpose();
          b.segment<3>(row) = Vec3(joints.row(j));
          row += 3;
        }
        // Mild pull toward the current row keeps the underdetermined system
        // stable across rounds.
        const double mu = 1e-3;
        for (size_t k = 0; k < support.size(); ++k) {
          a(row + static_cast<int>(k), static_cast<int>(k)) = mu;
          b[row + static_cast<int>(k)] = mu * model.joint_regressor.coeff(j, support[k]);
        }
        const VecX g = simplex_nnls(a, b);
        for (size_t k = 0; k < support.size(); ++k)
          if (g[static_cast<int>(k)] > 1e-10)
            triplets.emplace_back(j, support[k], g[static_cast<int>(k)]);
      }
      SparseMatRM regressor(model.part_count(), nv);
      regressor.setFromTriplets(triplets.begin(), triplets.end());
      for (int j = 0; j < model.part_count(); ++j) {
        double sum = 0.0;
        for (SparseMatRM::InnerIterator it(regressor, j); it; ++it) sum += it.value();
        if (sum <= 0.0) continue;
        for (SparseMatRM::InnerIterator it(regressor, j); it; ++it) it.valueRef() /= sum;
      }
      model.joint_regressor = regressor;
    }

    // (f) Shape space: PCA over the subject templates.
    {
      const int ns = static_cast<int>(subjects.size());
      MatX stacked(ns, 3 * nv);
      for (int s = 0; s < ns; ++s)
        stacked.row(s) = flatten_points(templates[subjects[s]]).transpose();
      const VecX mean = stacked.colwise().mean();
      stacked.rowwise() -= mean.transpose();
      Eigen::JacobiSVD<MatX> svd(stacked, Eigen::ComputeThinV);
      const int nb = std::min(config.shape_components, ns - 1);
      model.template_vertices = unflatten_points(mean);
      model.shape_basis = MatX::Zero(3 * nv, nb);
      for (int c = 0; c < nb; ++c) {
        VecX dir = svd.matrixV().col(c);
        int arg = 0;
        dir.cwiseAbs().maxCoeff(&arg);
        if (dir[arg] < 0.0) dir = -dir;
        const double sigma = svd.singularValues()[c] / std::sqrt(std::max(1, ns - 1));
        model.shape_basis.col(c) = sigma * dir;
      }
      for (int s = 0; s < ns; ++s) {
        VecX coeff = VecX::Zero(nb);
        for (int c = 0; c < nb; ++c) {
          const double sigma = model.shape_basis.col(c).norm();
          if (sigma > 0)
            coeff[c] = model.shape_basis.col(c).dot(flatten_points(templates[subjects[s]]) -
                                                    mean) /
                       (sigma * sigma);
        }
        result.subject_betas[subjects[s]] = coeff;
      }
    }

    // Round bookkeeping: mean error of the current model against the data.
    double round_error = 0.0;
    int counted = 0;
    for (int i = 0; i < n; ++i) {
      if (excluded[i]) continue;
      const SkinnedModel subject_model =
          personalized_model(model, templates[data.samples[i].subject]);
      const PointMatrix posed =
          evaluate(subject_model, VecX::Zero(0), poses[i], translations[i]).vertices;
      round_error += mean_vertex_error(posed, data.samples[i].vertices);
      ++counted;
    }
    round_error /= std::max(1, counted);
    report.round_errors.push_back(round_error);
    report.total_loss_trace.push_back(round_error);

    locality = locality_weights(TriMesh{model.template_vertices, model.faces, {}},
                                model.joint_regressor);
    if (prev_round_error - round_error < config.convergence_tol && round > 0) break;
    prev_round_error = round_error;
  }

  // Pose embedding over the refined poses (articulated coordinates).
  {
    std::vector<VecX> articulated;
    for (int i = 0; i < n; ++i) {
      if (excluded[i]) continue;
      articulated.push_back(poses[i].tail(model.pose_dim() - 3));
    }
    const int full_dim = model.pose_dim() - 3;
    int k = config.embedding_components > 0
                ? std::min(config.embedding_components, full_dim)
                : std::min<int>(static_cast<int>(articulated.size()) - 1, full_dim);
    if (k > 0 && static_cast<int>(articulated.size()) > k)
      model.pose_embedding = fit_pose_pca(articulated, k);
  }

  report.final_error = report.round_errors.empty() ? 0.0 : report.round_errors.back();
  result.report = std::move(report);
  result.refined_poses = std::move(poses);
  result.subject_templates = std::move(templates);
  validate_model(model);
  result.model = std::move(model);
  return result;
}

std::vector<GeneralizationRow> evaluate_generalization(const SkinnedModel& model,
                                                       const TrainingSet& held_out,
                                                       const std::vector<int>& k_list,
                                                       const SolveOptions& solver) {
  if (held_out.samples.empty()) throw DataError("evaluate_generalization: no samples");

  // Fixed personalized template per subject from its flattest registration.
  std::map<int, PointMatrix> templates;
  const PoseMap full_map = full_pose_map(model.part_count());
  for (const auto& sample : held_out.samples) {
    if (templates.count(sample.subject)) continue;
    // Flattest sample of this subject.
    const TrainingSample* flattest = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& other : held_out.samples) {
      if (other.subject != sample.subject) continue;
      const double norm = other.pose_init.size() > 0 ? other.pose_init.norm() : 0.0;
      if (norm < best) {
        best = norm;
        flattest = &other;
      }
    }
    SkinnedModel base = personalized_model(model, model.template_vertices);
    const PoseFit fit = refine_pose(base, flattest->vertices,
                                    flattest->pose_init.size() == model.pose_dim()
                                        ? flattest->pose_init
                                        : VecX::Zero(model.pose_dim()),
                                    Vec3::Zero(), solver, full_map);
    templates[sample.subject] =
        unpose(base, VecX::Zero(0), fit.pose, fit.translation, flattest->vertices)
            .rest_vertices;
  }

  std::vector<GeneralizationRow> rows;
  for (int k : k_list) {
    std::vector<double> s2m;
    for (const auto& sample : held_out.samples) {
      const SkinnedModel subject_model = personalized_model(model, templates[sample.subject]);
      const PoseMap map = k > 0 ? embedded_pose_map(subject_model, k)
                                : full_pose_map(model.part_count());
      const PoseFit fit = refine_pose(subject_model, sample.vertices,
                                      sample.pose_init.size() == model.pose_dim()
                                          ? sample.pose_init
                                          : VecX::Zero(model.pose_dim()),
                                      Vec3::Zero(), solver, map);
      const TriMesh fitted =
          evaluate(subject_model, VecX::Zero(0), fit.pose, fit.translation);
      s2m.push_back(scan_to_mesh_stats(sample.vertices, fitted).mean);
    }
    GeneralizationRow row;
    row.k = k;
    const double mean = std::accumulate(s2m.begin(), s2m.end(), 0.0) / s2m.size();
    double var = 0.0;
    for (double v : s2m) var += (v - mean) * (v - mean);
    row.mean = mean;
    row.stddev = std::sqrt(var / std::max<size_t>(1, s2m.size() - 1));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace handforge

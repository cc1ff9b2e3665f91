#pragma once

#include <map>
#include <string>
#include <vector>

#include "handforge/model.hpp"
#include "handforge/optimizer.hpp"

namespace handforge {

/// One registration in model topology.
struct TrainingSample {
  PointMatrix vertices;
  int subject = 0;
  std::string pose_label;
  VecX pose_init;  // may be empty
};

/// Curated registrations plus optional per-subject joint annotations (used to
/// fit the joint regressor; without them the regressor stays fixed).
struct TrainingSet {
  std::vector<TrainingSample> samples;
  std::map<int, PointMatrix> subject_joints;

  std::vector<int> subjects() const;
  /// Shared-topology and near-flat-pose checks against the initial model.
  void validate(const SkinnedModel& init_model) const;
};

/// Per (output vertex, input joint) regularization cost: the regressor-
/// weighted average of geodesic distances from the vertex to the joint's
/// support. Articulated joints are the columns that expand onto the
/// pose-corrective basis.
struct RegularizerWeights {
  MatX values;  // V x parts

  /// Penalty for pose-basis entry (row 3v+c, column 9(j-1)+e): the scalar
  /// cost of (vertex v, joint j), identical across the 3x9 block.
  double entry(int vertex, int feature_joint) const { return values(vertex, feature_joint + 1); }
};

RegularizerWeights locality_weights(const TriMesh& template_mesh,
                                    const SparseMatRM& joint_regressor);

/// Registration weight for template estimation: the inverse square of the
/// summed squared rotation-feature magnitudes; capped at 1e12 at the rest
/// pose. Invariant under pose mirroring.
double template_weight(const SkinnedModel& model, const VecX& pose);

struct TrainConfig {
  int max_rounds = 2;
  int inner_iterations = 10;
  double ridge_strength = 1.0;     // multiplies the locality costs
  bool use_locality = true;        // false: constant cost at the mean locality level
  bool learn_pose_blendshapes = true;
  int shape_components = 8;
  double weight_support_factor = 10.0;  // support radius = 2.5 x mean edge x this
  double exclusion_factor = 8.0;        // exclude fits worse than this x median error
  double convergence_tol = 1e-5;        // mean vertex error improvement, units
  int threads = 1;
  SolveOptions solver;
  int embedding_components = 0;  // 0: keep every component
};

struct TrainingReport {
  std::vector<double> round_errors;  // mean vertex error after each round
  std::vector<int> excluded_samples;
  std::string joint_source;  // "annotated" or "regressor-fixed"
  double final_error = 0.0;
  std::vector<double> total_loss_trace;  // data + regularizer, non-increasing
};

struct TrainResult {
  SkinnedModel model;
  TrainingReport report;
  std::vector<VecX> refined_poses;          // per sample
  std::map<int, PointMatrix> subject_templates;
  std::map<int, VecX> subject_betas;
};

/// Alternating model training: pose refinement, weighted personalized
/// templates (rest-pose weighting on the first pass only), locality-
/// regularized pose correctives, simplex-constrained blend weights, joint
/// regressor refit from annotations, and a PCA shape space over the subject
/// templates. A pose embedding over the refined poses is stored on the model.
TrainResult train_model(const SkinnedModel& init_model, const TrainingSet& data,
                        const TrainConfig& config);

/// Generalization curve: for each embedding size k (0 = full pose space), fit
/// every held-out registration with a fixed personalized template per subject
/// and report the s2m error.
struct GeneralizationRow {
  int k = 0;
  double mean = 0.0;
  double stddev = 0.0;
};
std::vector<GeneralizationRow> evaluate_generalization(const SkinnedModel& model,
                                                       const TrainingSet& held_out,
                                                       const std::vector<int>& k_list,
                                                       const SolveOptions& solver = {});

/// min |A w - b|^2 subject to w >= 0 and sum w = 1, active-set method,
/// deterministic. Used by the blend-weight and regressor updates.
VecX simplex_nnls(const MatX& a, const VecX& b, int max_iterations = 200);

}  // namespace handforge

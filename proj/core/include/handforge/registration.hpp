#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "handforge/energies.hpp"
#include "handforge/model.hpp"
#include "handforge/optimizer.hpp"
#include "handforge/priors.hpp"

namespace handforge {

/// Affine map from optimizer pose coordinates to the model's full pose,
/// theta = offset + matrix * p. The raw map is the identity; hand blocks may
/// run through a truncated PCA embedding instead, which keeps the chain rule
/// a constant matrix. Columns are orthonormal, so the preimage is the
/// transpose.
struct PoseMap {
  VecX offset;
  SparseMat matrix;  // 3*parts x dof

  int dof() const { return static_cast<int>(matrix.cols()); }
  VecX theta(const VecX& p) const { return offset + matrix * p; }
  VecX pull_back(const VecX& theta) const { return matrix.transpose() * (theta - offset); }
};

/// Identity parameterization over all pose coordinates.
PoseMap full_pose_map(int parts);

/// Hand pose through stored embeddings truncated to k components (k <= 0 or
/// k >= stored keeps every stored component); remaining coordinates stay raw.
/// Composed models embed each hand section; a plain hand model embeds its
/// articulated joints and keeps the root raw. Throws DataError when no
/// embedding is stored.
PoseMap embedded_pose_map(const SkinnedModel& model, int k);

/// Pose coordinates covered by the body prior: the root and every joint not
/// claimed by a hand section. On a plain hand model this is just the root
/// (the wrist-equivalent).
std::vector<int> body_pose_coords(const SkinnedModel& model);

/// Per-hand articulated pose coordinate blocks. A plain hand model exposes
/// one block with all articulated joints.
std::vector<std::vector<int>> hand_pose_blocks(const SkinnedModel& model);

/// Energy-term weights and the annealing schedule.
struct EnergyWeights {
  double lambda_g = 1.0;
  double lambda_gbar = 1.0;
  double lambda_c = 1.0;
  double lambda_theta_b = 1e-2;
  double lambda_theta_h = 1e-2;
  double lambda_beta = 1e-3;
  double lambda_r = 1e-1;
  double sigma_gm = 0.02;  // Geman-McClure scale, model units
  std::vector<double> annealing = {100.0, 500.0};

  void validate() const;  // nonnegative, schedule non-decreasing
};

/// One fitted frame.
struct FrameResult {
  int frame = 0;
  VecX pose;
  Vec3 translation = Vec3::Zero();
  VecX beta;                  // filled only when the frame optimized shape
  PointMatrix free_vertices;  // empty for model-only fits
  ScanToMeshStats s2m;
  bool converged = true;
  double final_cost = 0.0;
};

struct RegistrationResult {
  VecX beta;
  std::vector<FrameResult> frames;
  PointMatrix subject_template;  // filled by the two-stage tracker
};

/// Optimizer-vector layout: [beta? | pose dof | translation | free vertices?].
struct FitLayout {
  int beta_dim = 0;  // 0 freezes beta at a supplied value
  PoseMap pose_map;
  bool with_vertices = false;
  int vertex_count = 0;

  int pose_offset() const { return beta_dim; }
  int translation_offset() const { return beta_dim + pose_map.dof(); }
  int vertices_offset() const { return translation_offset() + 3; }
  int total() const { return vertices_offset() + (with_vertices ? 3 * vertex_count : 0); }
};

/// Least-squares problem with correspondences, robust weights and the GMM
/// active component frozen at build time. Residuals are scaled so that
/// 0.5 |r|^2 reproduces the weighted energy sum (up to the mixture
/// normalization constants).
class FitProblem : public Objective {
 public:
  FitProblem(const SkinnedModel& model, FitLayout layout);

  /// Required when layout.beta_dim == 0 and the model has shape directions.
  void set_frozen_beta(const VecX& beta);

  /// Data: scan point against the free-vertex surface at frozen (face,
  /// barycentric); per-point IRLS weights.
  void add_scan_to_free(const PointMatrix& scan_points,
                        const std::vector<Correspondence>& corr, const VecX& weights,
                        double lambda, bool normal_projected = false,
                        const PointMatrix* face_normals = nullptr);

  /// Data: scan point against the posed-model surface.
  void add_scan_to_model(const PointMatrix& scan_points,
                         const std::vector<Correspondence>& corr, const VecX& weights,
                         double lambda);

  /// Reverse data: selected model vertices against frozen scan targets.
  void add_model_to_scan(const std::vector<int>& vertices, const PointMatrix& targets,
                         const VecX& weights, double lambda);

  /// Edge-difference coupling between free vertices and the posed model.
  void add_coupling(const EdgeMatrix& edges, double lambda);

  /// Quadratic pose prior on selected full-pose coordinates about a reference.
  void add_pose_prior(const std::vector<int>& coords, const VecX& reference, double lambda);

  /// Whitened Gaussian prior on selected full-pose coordinates.
  void add_gaussian_pose_prior(const GaussianPosePrior& prior, const std::vector<int>& coords,
                               double lambda);

  /// Mahalanobis shape prior (identity metric on the scaled coefficients).
  void add_beta_prior(double lambda);

  /// Max-approximated mixture prior; the active component is selected at
  /// `theta_at_freeze` and held fixed.
  void add_gmm_prior(const GmmPrior& prior, const std::vector<int>& coords, double lambda,
                     const VecX& theta_at_freeze);

  const FitLayout& layout() const { return layout_; }

  /// Initial vector assembled from model parameters (vertices defaulted to
  /// the posed model when the layout carries them).
  VecX make_initial(const VecX& beta, const VecX& theta, const Vec3& translation,
                    const PointMatrix* vertices = nullptr) const;

  /// Unpacked view of an optimizer vector.
  struct Unpacked {
    VecX beta;
    VecX theta;
    Vec3 translation;
    PointMatrix vertices;  // empty unless the layout has free vertices
  };
  Unpacked unpack(const VecX& x) const;

  // Objective interface.
  int parameter_count() const override { return layout_.total(); }
  int residual_count() const override { return rows_; }
  VecX residuals(const VecX& x) const override;
  SparseMat jacobian(const VecX& x) const override;
  void eval(const VecX& x, VecX* r, SparseMat* jac) const override;

 private:
  struct ScanFreeItem {
    Vec3 target;
    int verts[3];
    Vec3 bary;
    double scale;
    bool projected;
    Vec3 normal;
  };
  struct ScanModelItem {
    Vec3 target;
    int verts[3];
    Vec3 bary;
    double scale;
  };
  struct ModelScanItem {
    int vertex;
    Vec3 target;
    double scale;
  };
  struct AffineBlock {
    SparseMat matrix;  // rows x total
    VecX shift;        // r = matrix * x - shift
  };

  bool needs_model_jacobian() const {
    return !scan_model_.empty() || !model_scan_.empty() || coupling_edges_.rows() > 0;
  }

  const SkinnedModel& model_;
  FitLayout layout_;
  VecX frozen_beta_;
  int rows_ = 0;

  std::vector<ScanFreeItem> scan_free_;
  std::vector<ScanModelItem> scan_model_;
  std::vector<ModelScanItem> model_scan_;
  EdgeMatrix coupling_edges_;
  double coupling_scale_ = 0.0;
  std::vector<AffineBlock> affine_;
  // Row offsets per block group, assigned in add order.
  std::vector<std::pair<int, int>> block_rows_;
};

/// Driver settings shared by the fitting pipelines.
struct FitOptions {
  EnergyWeights weights;
  SolveOptions solver;
  int outer_loops = 20;
  int threads = 1;
  bool robust_data = true;  // Geman-McClure on data terms (kept in coupled stages)
  SurfaceDistanceMode distance_mode = SurfaceDistanceMode::point_to_surface;
  int embedding_k = 0;  // > 0 routes hand pose through stored embeddings
  const GmmPrior* hand_gmm = nullptr;
  const GaussianPosePrior* scan_prior = nullptr;  // optional per-scan pose prior
  int template_frames = 50;
  double curation_mad_factor = 3.0;
};

/// Single-scan coupled registration: minimizes the data + coupling + pose and
/// shape prior energy over (beta, pose, translation, free vertices), with a
/// model-only warmup. Reports s2m of the final free surface.
RegistrationResult fit_hand_scan(const SkinnedModel& model, const TriMesh& scan,
                                 const FitOptions& opts,
                                 const VecX* init_pose = nullptr,
                                 const VecX* init_beta = nullptr);

/// First-frame model-only fit under the annealing schedule: two-sided data
/// term, body/hand priors weakened as the anneal weight grows, shape prior
/// throughout (skipped when the model has no shape directions).
struct FirstFrameFit {
  VecX beta;
  VecX pose;
  Vec3 translation = Vec3::Zero();
  double final_cost = 0.0;
};
FirstFrameFit fit_first_frame(const SkinnedModel& model, const TriMesh& scan,
                              const FitOptions& opts);

/// One coupled tracking frame initialized from the previous pose; optimizes
/// (pose, translation, vertices) plus beta in stage one. The body prior is
/// dropped; the hand prior and the zero-velocity term stay.
FrameResult coupled_align_frame(const SkinnedModel& model, const TriMesh& scan,
                                const VecX& prev_pose, const Vec3& prev_translation,
                                const VecX& beta, bool optimize_beta, const FitOptions& opts);

/// Unpose the aligned frames, reject outliers against the vertex-median mesh
/// (deviation above median + factor * MAD), and average the survivors.
struct SubjectTemplate {
  PointMatrix vertices;
  std::vector<int> kept;
  std::vector<int> rejected;
};
SubjectTemplate build_subject_template(const SkinnedModel& model, const VecX& beta,
                                       const std::vector<FrameResult>& frames,
                                       double mad_factor = 3.0);

/// Copy of the model with a personalized template and no shape directions.
SkinnedModel personalized_model(const SkinnedModel& model, const PointMatrix& subject_template);

/// Two-stage sequence tracker: first-frame fit and subject-template
/// construction over the leading frames, then per-frame coupled alignment on
/// the personalized model with previous-frame initialization. Per-frame
/// failures are recorded and tracking continues from the last good pose.
RegistrationResult track_sequence(const SkinnedModel& model, const std::vector<TriMesh>& scans,
                                  const FitOptions& opts);

}  // namespace handforge

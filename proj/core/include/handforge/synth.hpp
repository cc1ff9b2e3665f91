#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "handforge/model.hpp"

namespace handforge {

/// Synthetic scan / sequence generation settings. Identical config and seed
/// produce identical output on every platform (counter-based generator, see
/// rng.hpp for the documented constants).
struct SynthConfig {
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;   // isotropic Gaussian jitter, model units
  double hole_fraction = 0.0; // fraction of vertices removed in clusters, [0, 1)
  double hole_radius = 0.02;  // Euclidean cluster radius, model units
  bool mesh_output = true;    // keep faces spanning surviving vertices
  int frames = 1;

  /// Per-joint sinusoid: pose of `joint` oscillates about zero along `axis`.
  struct JointWave {
    int joint = 0;
    Vec3 axis = Vec3::UnitX();
    double amplitude = 0.3;  // radians
    double frequency = 0.05; // cycles per frame
    double phase = 0.0;
  };
  std::vector<JointWave> script;

  /// Inclusive frame ranges whose hand region is deleted entirely.
  std::vector<std::pair<int, int>> dropout;
};

/// A generated scan with its ground truth.
struct SyntheticScan {
  TriMesh cloud;                     // jittered surviving vertices (+faces if meshed)
  std::vector<int> source_vertices;  // surviving model vertex ids
  VecX beta;
  VecX pose;
  Vec3 translation = Vec3::Zero();
};

/// Procedural watertight tube-and-branch hand: a voxel palm with finger rods,
/// extracted as a closed 2-manifold, mildly smoothed and jittered. `joints`
/// counts parts including the global root (16 gives the 15-joint default);
/// `vertex_budget` picks the grid resolution (approximate). Blend weights are
/// smooth and distance-based, the planted pose correctives are smooth random
/// fields localized around their joint, and the planted shape basis is
/// orthogonal with sqrt-variance scaling.
SkinnedModel make_toy_hand(int joints, int vertex_budget, std::uint64_t seed,
                           int shape_dims = 10);

/// Vertices whose dominant blend weight sits on an articulated part (the
/// "hand region" that dropout intervals delete). On composed models this is
/// the union of the hand sections instead.
std::vector<int> hand_region_vertices(const SkinnedModel& model);

/// Evaluate the model, jitter with isotropic noise, then delete clustered
/// holes until the requested fraction is reached.
SyntheticScan synthesize_scan(const SkinnedModel& model, const VecX& beta, const VecX& pose,
                              const Vec3& translation, const SynthConfig& config);

/// Frame-by-frame scans following the motion script; dropout intervals remove
/// the hand region entirely. Per-frame ground truth is carried on each scan.
std::vector<SyntheticScan> synthesize_sequence(const SkinnedModel& model, const VecX& beta,
                                               const SynthConfig& config);

/// Pose prescribed by the script at a frame index.
VecX script_pose(const SkinnedModel& model, const SynthConfig& config, int frame);

/// Toy body with two rigid hand regions plus matching standalone hand models
/// and their attachment maps; fixture for model composition.
struct BodyWithHands {
  SkinnedModel body;
  SkinnedModel right_hand;
  SkinnedModel left_hand;
  HandAttachment right_map;
  HandAttachment left_map;
};
BodyWithHands make_toy_body_with_hands(std::uint64_t seed, int hand_joints = 3,
                                       int hand_vertex_budget = 110);

}  // namespace handforge

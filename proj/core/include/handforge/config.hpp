#pragma once

#include <filesystem>

#include "handforge/registration.hpp"
#include "handforge/synth.hpp"
#include "handforge/training.hpp"

namespace handforge {

/// Resolved run configuration: every field explicit, written next to the
/// outputs of every run. Unknown keys in a config file are rejected.
struct RunConfig {
  EnergyWeights weights;
  SolveOptions solver;
  int outer_loops = 20;
  int threads = 1;
  int embedding_k = 0;  // 0: full pose space
  bool robust_data = true;
  std::string distance_mode = "point_to_surface";  // or "normal_projected"
  int template_frames = 50;
  double curation_mad_factor = 3.0;
  std::uint64_t seed = 0;
  int gmm_components = 10;
  SynthConfig synth;
  TrainConfig training;

  FitOptions fit_options() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace handforge

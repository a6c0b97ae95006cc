#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rayemb/geometry.hpp"
#include "rayemb/io.hpp"
#include "rayemb/registration.hpp"
#include "rayemb/subspace.hpp"
#include "rayemb/volume.hpp"

namespace rayemb::cli {

struct GridConfig {
  double lao_rao_range_deg = 45.0;
  double cra_cau_range_deg = 22.5;
  int steps = 18;
};

struct SamplingConfig {
  int points = 3000;
  int top_k = 600;
  int tta_rounds = 10;
  int n_subspace_templates = 4;
  double sv_rel_tol = 1e-4;
};

struct SynthConfig {
  int count = 10;
  std::array<double, 3> rot_bounds_deg{10.0, 10.0, 10.0};
  std::array<double, 3> trans_bounds_mm{10.0, 10.0, 10.0};
};

struct PatchConfig {
  int radius = 3;
  std::vector<int> scales{1, 2, 4};
};

/// Everything a pipeline run needs. Paths are relative to the workspace
/// unless absolute.
struct PipelineConfig {
  std::filesystem::path workspace = ".";
  CameraModel camera = CameraModel::flat_panel_1536(1020.0);
  int image_size = 224;
  std::filesystem::path volume = "volume/volume.json";
  std::filesystem::path mask = "volume/mask.json";
  VolumeUnit nifti_unit = VolumeUnit::kHounsfield;
  double source_to_center_mm = 600.0;
  std::optional<PoseSE3> center_pose;
  double render_step_mm = 0.0;
  GridConfig grid;
  std::string provider = "oracle";
  /// Length unit for oracle Plücker moments.
  double oracle_moment_scale_mm = 100.0;
  PatchConfig patch;
  SamplingConfig sampling;
  RobustConfig robust;
  RefineConfig refine;
  bool refine_enabled = true;
  SynthConfig synth;
  int eval_landmarks = 14;
  std::uint64_t seed = 0;
  int threads = 0;

  /// Throws InvalidArgument on any broken invariant.
  void validate() const;
  /// Detector grid the images are rendered and embedded on.
  CameraModel working_camera() const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const io::Json& json, PipelineConfig base = {});
io::Json config_to_json(const PipelineConfig& config);
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace rayemb::cli

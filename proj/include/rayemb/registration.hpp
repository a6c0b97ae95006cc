#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rayemb/drr.hpp"
#include "rayemb/geometry.hpp"
#include "rayemb/io.hpp"
#include "rayemb/subspace.hpp"
#include "rayemb/volume.hpp"

namespace rayemb {

// ---------------------------------------------------------------------------
// PnP

/// Reprojection residuals in pixels; points behind the camera get +inf.
std::vector<double> reprojection_errors(const PoseSE3& pose, std::span<const Correspondence> items,
                                        const CameraModel& camera);
double reprojection_rms(const PoseSE3& pose, std::span<const Correspondence> items, const CameraModel& camera);

/// Levenberg-Marquardt on the (optionally weighted) squared reprojection
/// error. Pose updates are left-multiplied camera-frame twists.
PoseSE3 polish_pose(const PoseSE3& pose, std::span<const Correspondence> items, const CameraModel& camera,
                    std::span<const double> weights = {}, int max_steps = 10);

/// Candidate poses, best reprojection RMS first. Six or more non-coplanar
/// points use a DLT on normalised image coordinates; fewer (or coplanar)
/// points use a three-point solve. Each candidate gets <= 10 polish steps.
std::vector<PoseSE3> pnp_minimal(std::span<const Correspondence> items, const CameraModel& camera);

// ---------------------------------------------------------------------------
// Robust initialisation

struct RobustConfig {
  int max_iterations = 2000;
  double sigma_max_px = 10.0;
  double confidence = 0.999;
  int min_sample = 4;
  std::uint64_t seed = 0;
  int quadrature_points = 10;

  void validate() const;
};

/// Inlier likelihood marginalised over sigma ~ U(0, sigma_max]: the mean
/// over quadrature nodes of exp(-r^2 / 2 sigma^2), each node truncated at
/// its 0.99 chi-square (2 dof) radius. 1 at r = 0, 0 beyond 3.03 sigma_max.
double marginal_inlier_weight(double residual_px, const RobustConfig& config);

/// Sum over correspondences of (1 - marginal weight).
double marginal_cost(const PoseSE3& pose, std::span<const Correspondence> items, const CameraModel& camera,
                     const RobustConfig& config);

struct IterationRecord {
  int iter = 0;
  double objective = 0.0;
};

struct RegistrationResult {
  PoseSE3 initial_pose;
  std::optional<PoseSE3> refined_pose;
  std::vector<bool> inlier_flags;
  double score = 0.0;
  std::vector<IterationRecord> trace;
  /// Marginal cost of the best raw hypothesis, before the final polish.
  double raw_cost = 0.0;
  double polished_cost = 0.0;
  int hypotheses = 0;
};

RegistrationResult magsac_pnp(const CorrespondenceSet& items, const CameraModel& camera, const RobustConfig& config);

// ---------------------------------------------------------------------------
// Intensity refinement

struct RefineConfig {
  int iterations = 100;
  std::vector<int> scales{8, 4, 2};
  /// Initial step length in mm; rotations are measured as arc length at
  /// rotation_scale_mm from the pivot.
  double step_size = 2.0;
  /// Central-difference steps: rotation vector (rad) then translation (mm).
  std::array<double, 6> fd_epsilon{0.004, 0.004, 0.004, 0.4, 0.4, 0.4};
  double render_step_mm = 0.0;  ///< <= 0 uses the renderer default
  double rotation_scale_mm = 100.0;
  double min_step = 1e-3;

  void validate() const;
};

/// Zero-normalised cross-correlation; 0 when either side is constant.
double zncc(std::span<const double> a, std::span<const double> b);

struct RefineOutcome {
  PoseSE3 pose;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  std::vector<IterationRecord> trace;
};

/// Query pyramid by box binning, one level per scale.
std::vector<DetectorImage> query_pyramid(const DetectorImage& query, std::span<const int> scales);

/// Mean ZNCC between DRRs at `pose` and the query pyramid.
double multiscale_ncc(const Volume& volume, const CameraModel& camera, const PoseSE3& pose,
                      std::span<const DetectorImage> pyramid, std::span<const int> scales, double render_step_mm);

/// Coarse-to-fine gradient ascent on ZNCC over a twist about `init`, one
/// stage per scale, with central-difference gradients. Rotations pivot on the
/// volume centre. Returns the best pose visited by the multi-scale objective,
/// or `init` if nothing beats it.
RefineOutcome refine_pose(const Volume& volume, const CameraModel& camera, const DetectorImage& query,
                          const PoseSE3& init, const RefineConfig& config);

io::Json result_to_json(const RegistrationResult& result);

}  // namespace rayemb

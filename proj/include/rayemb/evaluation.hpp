#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rayemb/geometry.hpp"
#include "rayemb/io.hpp"

namespace rayemb {

/// Mean camera-space distance between landmarks under the two poses.
double mtre(const PoseSE3& gt_pose, const PoseSE3& est_pose, std::span<const Eigen::Vector3d> landmarks);

/// Mean detector-plane distance between projections, in mm at the detector.
double mpd(const PoseSE3& gt_pose, const PoseSE3& est_pose, std::span<const Eigen::Vector3d> landmarks,
           const CameraModel& camera);

/// Geodesic angle of est^T gt, degrees.
double rotation_error_deg(const PoseSE3& gt_pose, const PoseSE3& est_pose);
double translation_error_mm(const PoseSE3& gt_pose, const PoseSE3& est_pose);

struct MetricRow {
  std::string id;
  double mtre_mm = 0.0;
  double mpd_mm = 0.0;
};

struct Percentiles {
  double p25 = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
};

enum class GfrMetric { kMtre, kMpd };

GfrMetric gfr_metric_from_string(const std::string& name);
std::string to_string(GfrMetric metric);

struct EvalReport {
  std::vector<MetricRow> per_image;
  Percentiles mtre;
  Percentiles mpd;
  GfrMetric gfr_metric = GfrMetric::kMtre;
  double threshold_hi_mm = 10.0;
  double threshold_lo_mm = 5.0;
  double gfr10 = 0.0;  ///< fraction above threshold_hi_mm
  double gfr5 = 0.0;   ///< fraction above threshold_lo_mm
};

/// Linear interpolation between closest ranks at p/100 * (n - 1).
double percentile(std::vector<double> values, double p);

/// Fraction of values strictly above `threshold`.
double gross_failure_rate(std::span<const double> values, double threshold);

EvalReport aggregate(std::span<const MetricRow> rows, GfrMetric metric, double threshold_hi_mm = 10.0,
                     double threshold_lo_mm = 5.0);

io::Json report_to_json(const EvalReport& report);
/// Header `id,mtre_mm,mpd_mm`, then one row per image.
std::string report_to_csv(const EvalReport& report);

}  // namespace rayemb

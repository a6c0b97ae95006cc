#include "rayemb/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rayemb/error.hpp"

namespace rayemb {

double mtre(const PoseSE3& gt_pose, const PoseSE3& est_pose, std::span<const Eigen::Vector3d> landmarks) {
  if (landmarks.empty()) fail(ErrorCode::kEmptyLandmarks, "mTRE needs at least one landmark");
  double sum = 0.0;
  for (const auto& x : landmarks) sum += (gt_pose.apply(x) - est_pose.apply(x)).norm();
  return sum / static_cast<double>(landmarks.size());
}

double mpd(const PoseSE3& gt_pose, const PoseSE3& est_pose, std::span<const Eigen::Vector3d> landmarks,
           const CameraModel& camera) {
  if (landmarks.empty()) fail(ErrorCode::kEmptyLandmarks, "mPD needs at least one landmark");
  double sum = 0.0;
  for (const auto& x : landmarks) {
    sum += (project(camera, gt_pose, x) - project(camera, est_pose, x)).norm();
  }
  return sum / static_cast<double>(landmarks.size()) * camera.pixel_mm;
}

double rotation_error_deg(const PoseSE3& gt_pose, const PoseSE3& est_pose) {
  return rotation_angle(est_pose.rotation().transpose() * gt_pose.rotation()) * 180.0 / M_PI;
}

double translation_error_mm(const PoseSE3& gt_pose, const PoseSE3& est_pose) {
  return (gt_pose.translation() - est_pose.translation()).norm();
}

GfrMetric gfr_metric_from_string(const std::string& name) {
  if (name == "mtre") return GfrMetric::kMtre;
  if (name == "mpd") return GfrMetric::kMpd;
  fail(ErrorCode::kInvalidArgument, "GFR metric must be 'mtre' or 'mpd', got '" + name + "'");
}

std::string to_string(GfrMetric metric) { return metric == GfrMetric::kMtre ? "mtre" : "mpd"; }

double percentile(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorCode::kEmptyResults, "percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) fail(ErrorCode::kInvalidArgument, "percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double gross_failure_rate(std::span<const double> values, double threshold) {
  if (values.empty()) fail(ErrorCode::kEmptyResults, "GFR of an empty set");
  const auto failures = std::count_if(values.begin(), values.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(failures) / static_cast<double>(values.size());
}

EvalReport aggregate(std::span<const MetricRow> rows, GfrMetric metric, double threshold_hi_mm,
                     double threshold_lo_mm) {
  if (rows.empty()) fail(ErrorCode::kEmptyResults, "no results to aggregate");
  if (!(threshold_lo_mm <= threshold_hi_mm)) {
    fail(ErrorCode::kInvalidArgument, "the strict GFR threshold must not exceed the loose one");
  }
  EvalReport report;
  report.per_image.assign(rows.begin(), rows.end());
  report.gfr_metric = metric;
  report.threshold_hi_mm = threshold_hi_mm;
  report.threshold_lo_mm = threshold_lo_mm;
  std::vector<double> t, d;
  for (const auto& r : rows) {
    t.push_back(r.mtre_mm);
    d.push_back(r.mpd_mm);
  }
  report.mtre = {percentile(t, 25.0), percentile(t, 50.0), percentile(t, 95.0)};
  report.mpd = {percentile(d, 25.0), percentile(d, 50.0), percentile(d, 95.0)};
  const auto& chosen = metric == GfrMetric::kMtre ? t : d;
  report.gfr10 = gross_failure_rate(chosen, threshold_hi_mm);
  report.gfr5 = gross_failure_rate(chosen, threshold_lo_mm);
  return report;
}

io::Json report_to_json(const EvalReport& report) {
  auto pct = [](const Percentiles& p) { return io::Json{{"p25", p.p25}, {"p50", p.p50}, {"p95", p.p95}}; };
  io::Json rows = io::Json::array();
  for (const auto& r : report.per_image) rows.push_back({{"id", r.id}, {"mtre_mm", r.mtre_mm}, {"mpd_mm", r.mpd_mm}});
  return io::Json{{"per_image", rows},
                  {"percentiles", {{"mtre_mm", pct(report.mtre)}, {"mpd_mm", pct(report.mpd)}}},
                  {"gfr_metric", to_string(report.gfr_metric)},
                  {"thresholds_mm", {report.threshold_hi_mm, report.threshold_lo_mm}},
                  {"gfr10", report.gfr10},
                  {"gfr5", report.gfr5}};
}

std::string report_to_csv(const EvalReport& report) {
  std::string out = "id,mtre_mm,mpd_mm\n";
  char buf[128];
  for (const auto& r : report.per_image) {
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", r.mtre_mm, r.mpd_mm);
    out += r.id + buf;
  }
  return out;
}

}  // namespace rayemb

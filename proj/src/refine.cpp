#include <cmath>

#include "rayemb/error.hpp"
#include "rayemb/registration.hpp"

namespace rayemb {

namespace {

PoseSE3 perturb(const PoseSE3& pose, const Vector6d& twist, const Eigen::Vector3d& pivot) {
  return rotate_about_pivot(pose, so3_exp(twist.head<3>()), pivot, twist.tail<3>()).reorthonormalized();
}

}  // namespace

void RefineConfig::validate() const {
  if (iterations < 0) fail(ErrorCode::kInvalidArgument, "iterations must be non-negative");
  if (scales.empty()) fail(ErrorCode::kInvalidArgument, "scales must be nonempty");
  for (int s : scales) {
    if (s < 1) fail(ErrorCode::kBadScale, "scales must be positive");
  }
  if (!(step_size > 0.0)) fail(ErrorCode::kInvalidArgument, "step_size must be positive");
  for (double e : fd_epsilon) {
    if (!(e > 0.0)) fail(ErrorCode::kInvalidArgument, "fd_epsilon entries must be positive");
  }
  if (!(rotation_scale_mm > 0.0)) fail(ErrorCode::kInvalidArgument, "rotation_scale_mm must be positive");
}

double zncc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::kSizeMismatch, "zncc operands differ in size");
  const auto n = static_cast<double>(a.size());
  if (a.empty()) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<DetectorImage> query_pyramid(const DetectorImage& query, std::span<const int> scales) {
  std::vector<DetectorImage> out;
  out.reserve(scales.size());
  for (int s : scales) out.push_back(downsample_box(query, s));
  return out;
}

double multiscale_ncc(const Volume& volume, const CameraModel& camera, const PoseSE3& pose,
                      std::span<const DetectorImage> pyramid, std::span<const int> scales, double render_step_mm) {
  double sum = 0.0;
  for (std::size_t k = 0; k < scales.size(); ++k) {
    RenderOptions opts;
    opts.step_mm = render_step_mm;
    opts.kind = pyramid[k].kind;
    const DetectorImage render = render_drr(volume, camera.downsampled(scales[k]), pose, opts);
    sum += zncc(render.values, pyramid[k].values);
  }
  return sum / static_cast<double>(scales.size());
}

RefineOutcome refine_pose(const Volume& volume, const CameraModel& camera, const DetectorImage& query,
                          const PoseSE3& init, const RefineConfig& config) {
  config.validate();
  camera.validate();
  if (query.width != camera.width || query.height != camera.height) {
    fail(ErrorCode::kSizeMismatch, "query image does not match the camera");
  }
  RefineOutcome out;
  out.pose = init;
  if (config.iterations == 0) return out;

  const auto pyramid = query_pyramid(query, config.scales);
  const Eigen::Vector3d pivot = volume.center();
  RenderOptions opts;
  opts.step_mm = config.render_step_mm;
  opts.kind = query.kind;

  out.initial_objective = multiscale_ncc(volume, camera, init, pyramid, config.scales, config.render_step_mm);
  out.final_objective = out.initial_objective;

  const int stages = static_cast<int>(config.scales.size());
  PoseSE3 current = init;
  std::vector<PoseSE3> stage_ends;
  int global_iter = 0;
  for (int k = 0; k < stages; ++k) {
    const int budget = config.iterations / stages + (k < config.iterations % stages ? 1 : 0);
    const CameraModel cam = camera.downsampled(config.scales[static_cast<std::size_t>(k)]);
    const auto& target = pyramid[static_cast<std::size_t>(k)].values;
    auto objective = [&](const PoseSE3& p) { return zncc(render_drr(volume, cam, p, opts).values, target); };

    double f = objective(current);
    double step = config.step_size;
    Vector6d direction = Vector6d::Zero();
    bool need_gradient = true;
    for (int it = 0; it < budget; ++it, ++global_iter) {
      if (need_gradient) {
        Vector6d g;
        for (int i = 0; i < 6; ++i) {
          Vector6d e = Vector6d::Zero();
          e[i] = config.fd_epsilon[static_cast<std::size_t>(i)];
          g[i] = (objective(perturb(current, e, pivot)) - objective(perturb(current, -e, pivot))) / (2.0 * e[i]);
        }
        // Ascent direction in coordinates where rotations read as millimetres.
        Vector6d scaled = g;
        scaled.head<3>() /= config.rotation_scale_mm;
        const double norm = scaled.norm();
        if (!(norm > 0.0)) {
          out.trace.push_back({global_iter, f});
          break;
        }
        direction = scaled / norm;
        need_gradient = false;
      }
      Vector6d twist = step * direction;
      twist.head<3>() /= config.rotation_scale_mm;
      const PoseSE3 candidate = perturb(current, twist, pivot);
      const double fc = objective(candidate);
      if (fc > f) {
        current = candidate;
        f = fc;
        step *= 1.5;
        need_gradient = true;
      } else {
        step *= 0.5;
      }
      out.trace.push_back({global_iter, f});
      if (step < config.min_step) {
        global_iter += budget - it;
        break;
      }
    }
    stage_ends.push_back(current);
  }

  for (const auto& p : stage_ends) {
    const double value = multiscale_ncc(volume, camera, p, pyramid, config.scales, config.render_step_mm);
    if (value > out.final_objective) {
      out.pose = p;
      out.final_objective = value;
    }
  }
  return out;
}

io::Json result_to_json(const RegistrationResult& result) {
  io::Json j;
  j["initial_pose"] = pose_to_json(result.initial_pose);
  j["refined_pose"] = result.refined_pose ? pose_to_json(*result.refined_pose) : io::Json(nullptr);
  io::Json inliers = io::Json::array();
  for (bool b : result.inlier_flags) inliers.push_back(b);
  j["inliers"] = inliers;
  j["score"] = result.score;
  io::Json trace = io::Json::array();
  for (const auto& r : result.trace) trace.push_back({{"iter", r.iter}, {"objective", r.objective}});
  j["trace"] = trace;
  return j;
}

}  // namespace rayemb

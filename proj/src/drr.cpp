#include "rayemb/drr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rayemb/error.hpp"

namespace rayemb {

double default_step_mm(const Volume& volume) { return 0.5 * volume.spacing().minCoeff(); }

bool clip_to_volume(const Volume& volume, const Ray& ray, double& t_enter, double& t_exit) {
  const Eigen::Vector3d lo = volume.bounds_min();
  const Eigen::Vector3d hi = volume.bounds_max();
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (o < lo[a] || o > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - o) / d;
    double tb = (hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  t0 = std::max(t0, 0.0);
  if (!(t1 > t0)) return false;
  t_enter = t0;
  t_exit = t1;
  return true;
}

double ray_integral(const Volume& volume, const Ray& ray, double step_mm) {
  double t0, t1;
  if (!clip_to_volume(volume, ray, t0, t1)) return 0.0;
  const double length = t1 - t0;
  const auto n = std::max<long>(1, static_cast<long>(std::ceil(length / step_mm - 1e-9)));
  const double h = length / static_cast<double>(n);

  const Eigen::Vector3d q0 = volume.index_from_world(ray.origin + (t0 + 0.5 * h) * ray.direction);
  const Eigen::Vector3d dq = (h * ray.direction).cwiseQuotient(volume.spacing());
  double sum = 0.0;
  for (long k = 0; k < n; ++k) {
    const double kk = static_cast<double>(k);
    sum += volume.sample_index(q0[0] + kk * dq[0], q0[1] + kk * dq[1], q0[2] + kk * dq[2]);
  }
  return sum * h;
}

double ray_integral_siddon(const Volume& volume, const Ray& ray) {
  double t0, t1;
  if (!clip_to_volume(volume, ray, t0, t1)) return 0.0;
  const Eigen::Vector3d lo = volume.bounds_min();
  std::vector<double> alphas{t0, t1};
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-15) continue;
    for (int i = 0; i <= volume.dims()[a]; ++i) {
      const double t = (lo[a] + i * volume.spacing()[a] - ray.origin[a]) / d;
      if (t > t0 && t < t1) alphas.push_back(t);
    }
  }
  std::sort(alphas.begin(), alphas.end());
  double sum = 0.0;
  for (std::size_t s = 0; s + 1 < alphas.size(); ++s) {
    const double len = alphas[s + 1] - alphas[s];
    if (len <= 0.0) continue;
    const Eigen::Vector3d mid = ray.origin + 0.5 * (alphas[s] + alphas[s + 1]) * ray.direction;
    const Eigen::Vector3d q = (mid - lo).cwiseQuotient(volume.spacing());
    const int i = std::clamp(static_cast<int>(std::floor(q[0])), 0, volume.dims()[0] - 1);
    const int j = std::clamp(static_cast<int>(std::floor(q[1])), 0, volume.dims()[1] - 1);
    const int k = std::clamp(static_cast<int>(std::floor(q[2])), 0, volume.dims()[2] - 1);
    sum += len * volume.at(i, j, k);
  }
  return sum;
}

DetectorImage render_drr(const Volume& volume, const CameraModel& camera, const PoseSE3& pose,
                         const RenderOptions& options) {
  camera.validate();
  if (volume.unit() != VolumeUnit::kAttenuation) {
    fail(ErrorCode::kInvalidArgument, "render_drr needs an attenuation volume; convert HU first");
  }
  if (!(options.i0 > 0.0)) fail(ErrorCode::kInvalidArgument, "i0 must be positive");
  const double step = options.step_mm > 0.0 ? options.step_mm : default_step_mm(volume);

  DetectorImage image;
  image.width = camera.width;
  image.height = camera.height;
  image.pixel_mm = camera.pixel_mm;
  image.kind = options.kind;
  image.values.assign(static_cast<std::size_t>(camera.width) * camera.height, 0.0);

  const int height = camera.height;
#pragma omp parallel for schedule(dynamic, 1)
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const Ray ray = backproject(camera, pose, Eigen::Vector2d(u, v));
      const double line = options.method == RenderMethod::kSiddon ? ray_integral_siddon(volume, ray)
                                                                  : ray_integral(volume, ray, step);
      image.at(u, v) = options.kind == ImageKind::kIntensity ? options.i0 * std::exp(-line) : line;
    }
  }
  return image;
}

std::vector<DetectorImage> render_multiscale(const Volume& volume, const CameraModel& camera, const PoseSE3& pose,
                                             std::span<const int> scales, const RenderOptions& options) {
  std::vector<CameraModel> cams;
  for (int s : scales) cams.push_back(camera.downsampled(s));
  std::vector<DetectorImage> out;
  out.reserve(cams.size());
  for (const auto& c : cams) out.push_back(render_drr(volume, c, pose, options));
  return out;
}

DetectorImage downsample_box(const DetectorImage& image, int factor) {
  if (factor < 1 || image.width % factor != 0 || image.height % factor != 0) {
    fail(ErrorCode::kBadScale, "scale " + std::to_string(factor) + " does not divide the image");
  }
  DetectorImage out;
  out.width = image.width / factor;
  out.height = image.height / factor;
  out.pixel_mm = image.pixel_mm * factor;
  out.kind = image.kind;
  out.values.assign(static_cast<std::size_t>(out.width) * out.height, 0.0);
  const double norm = 1.0 / (factor * factor);
  for (int v = 0; v < out.height; ++v) {
    for (int u = 0; u < out.width; ++u) {
      double sum = 0.0;
      for (int dv = 0; dv < factor; ++dv)
        for (int du = 0; du < factor; ++du) sum += image.at(u * factor + du, v * factor + dv);
      out.at(u, v) = sum * norm;
    }
  }
  return out;
}

DetectorImage min_max_normalized(const DetectorImage& image) {
  DetectorImage out = image;
  if (image.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(image.values.begin(), image.values.end());
  const double range = *hi - *lo;
  for (auto& v : out.values) v = range > 0.0 ? (v - *lo) / range : 0.0;
  return out;
}

}  // namespace rayemb

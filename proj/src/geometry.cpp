#include "rayemb/geometry.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "rayemb/error.hpp"

namespace rayemb {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

void CameraModel::validate() const {
  if (!(focal_mm > 0.0)) fail(ErrorCode::kInvalidArgument, "focal_mm must be positive");
  if (!(pixel_mm > 0.0)) fail(ErrorCode::kInvalidArgument, "pixel_mm must be positive");
  if (width < 1 || height < 1) fail(ErrorCode::kInvalidArgument, "detector dims must be at least 1");
}

CameraModel CameraModel::resized(int new_width, int new_height) const {
  if (new_width < 1 || new_height < 1) fail(ErrorCode::kBadScale, "resized detector must be at least 1 px");
  CameraModel out = *this;
  const double ratio = static_cast<double>(width) / new_width;
  out.width = new_width;
  out.height = new_height;
  out.pixel_mm = pixel_mm * ratio;
  out.principal_px = (principal_px.array() + 0.5) / ratio - 0.5;
  return out;
}

CameraModel CameraModel::downsampled(int factor) const {
  if (factor < 1 || width % factor != 0 || height % factor != 0) {
    fail(ErrorCode::kBadScale, "scale " + std::to_string(factor) + " does not divide the detector");
  }
  return resized(width / factor, height / factor);
}

CameraModel CameraModel::flat_panel_1536(double focal_mm) {
  CameraModel c;
  c.focal_mm = focal_mm;
  c.width = c.height = 1536;
  c.pixel_mm = 0.194;
  c.principal_px = {767.5, 767.5};
  return c;
}

PoseSE3::PoseSE3() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

PoseSE3::PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation_.allFinite() || !translation_.allFinite()) fail(ErrorCode::kInvalidArgument, "non-finite pose");
  if (orthonormality_error() > 1e-9) fail(ErrorCode::kInvalidArgument, "rotation is not orthonormal");
}

PoseSE3 PoseSE3::unchecked(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation) {
  PoseSE3 p;
  p.rotation_ = rotation;
  p.translation_ = translation;
  return p;
}

PoseSE3 PoseSE3::inverse() const {
  const Eigen::Matrix3d rt = rotation_.transpose();
  return unchecked(rt, -rt * translation_);
}

PoseSE3 PoseSE3::operator*(const PoseSE3& rhs) const {
  return unchecked(rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_);
}

double PoseSE3::orthonormality_error() const {
  const double ortho = (rotation_.transpose() * rotation_ - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(rotation_.determinant() - 1.0));
}

PoseSE3 PoseSE3::reorthonormalized() const {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return unchecked(r, translation_);
}

Eigen::Vector3d to_camera(const PoseSE3& pose, const Eigen::Vector3d& point) { return pose.apply(point); }

Eigen::Vector2d project_camera_point(const CameraModel& camera, const Eigen::Vector3d& p) {
  if (!(p.z() > 0.0)) fail(ErrorCode::kBehindCamera, "point has non-positive depth");
  const double f = camera.focal_px();
  return {f * p.x() / p.z() + camera.principal_px.x(), f * p.y() / p.z() + camera.principal_px.y()};
}

Eigen::Vector2d project(const CameraModel& camera, const PoseSE3& pose, const Eigen::Vector3d& point) {
  return project_camera_point(camera, pose.apply(point));
}

Ray backproject(const CameraModel& camera, const PoseSE3& pose, const Eigen::Vector2d& pixel) {
  const Eigen::Vector3d d_cam((pixel.x() - camera.principal_px.x()) * camera.pixel_mm,
                              (pixel.y() - camera.principal_px.y()) * camera.pixel_mm, camera.focal_mm);
  const Eigen::Matrix3d rt = pose.rotation().transpose();
  return {-rt * pose.translation(), (rt * d_cam).normalized()};
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d k = skew(w);
  if (theta < 1e-8) return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  return Eigen::Matrix3d::Identity() + (std::sin(theta) / theta) * k +
         ((1.0 - std::cos(theta)) / (theta * theta)) * k * k;
}

double rotation_angle(const Eigen::Matrix3d& r) {
  // atan2 form keeps precision near 0 and pi.
  const Eigen::Vector3d a(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * a.norm(), 0.5 * (r.trace() - 1.0));
}

Eigen::Vector3d so3_log(const Eigen::Matrix3d& r) {
  const double theta = rotation_angle(r);
  const Eigen::Vector3d a(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < 1e-8) return 0.5 * a;
  if (theta < 3.0) return (theta / (2.0 * std::sin(theta))) * a;
  // Near pi: axis from the symmetric part, sign from the antisymmetric part.
  const Eigen::Matrix3d s = 0.5 * (r + r.transpose()) - std::cos(theta) * Eigen::Matrix3d::Identity();
  int col;
  s.diagonal().maxCoeff(&col);
  Eigen::Vector3d axis = s.col(col).normalized();
  if (axis.dot(a) < 0.0) axis = -axis;
  return theta * axis;
}

namespace {

// Left Jacobian of SO(3), the V matrix of the SE(3) exponential.
Eigen::Matrix3d left_jacobian(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d k = skew(w);
  if (theta < 1e-6) return Eigen::Matrix3d::Identity() + 0.5 * k + (1.0 / 6.0) * k * k;
  const double t2 = theta * theta;
  return Eigen::Matrix3d::Identity() + ((1.0 - std::cos(theta)) / t2) * k + ((theta - std::sin(theta)) / (t2 * theta)) * k * k;
}

}  // namespace

PoseSE3 se3_exp(const Vector6d& twist) {
  const Eigen::Vector3d w = twist.head<3>();
  const Eigen::Vector3d v = twist.tail<3>();
  return PoseSE3::unchecked(so3_exp(w), left_jacobian(w) * v);
}

Vector6d se3_log(const PoseSE3& pose) {
  const double theta = rotation_angle(pose.rotation());
  if (theta > std::numbers::pi - 1e-6) fail(ErrorCode::kNearPiRotation, "rotation angle too close to pi");
  const Eigen::Vector3d w = so3_log(pose.rotation());
  Vector6d out;
  out.head<3>() = w;
  out.tail<3>() = left_jacobian(w).inverse() * pose.translation();
  return out;
}

PoseSE3 rotate_about_pivot(const PoseSE3& pose, const Eigen::Matrix3d& camera_rotation,
                           const Eigen::Vector3d& pivot_world, const Eigen::Vector3d& camera_offset) {
  const Eigen::Vector3d c = pose.apply(pivot_world);
  return PoseSE3::unchecked(camera_rotation * pose.rotation(),
                            camera_rotation * (pose.translation() - c) + c + camera_offset);
}

std::vector<std::pair<double, double>> template_grid_angles(double lao_rao_range_deg, double cra_cau_range_deg,
                                                            int steps) {
  if (steps < 2) fail(ErrorCode::kInvalidArgument, "template grid needs at least 2 steps");
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(steps) * steps);
  for (int i = 0; i < steps; ++i) {
    const double a = -lao_rao_range_deg + 2.0 * lao_rao_range_deg * i / (steps - 1);
    for (int j = 0; j < steps; ++j) {
      const double b = -cra_cau_range_deg + 2.0 * cra_cau_range_deg * j / (steps - 1);
      out.emplace_back(a, b);
    }
  }
  return out;
}

std::vector<PoseSE3> template_pose_grid(const PoseSE3& center, double lao_rao_range_deg, double cra_cau_range_deg,
                                        int steps, const Eigen::Vector3d& pivot_world) {
  std::vector<PoseSE3> out;
  for (const auto& [a, b] : template_grid_angles(lao_rao_range_deg, cra_cau_range_deg, steps)) {
    const Eigen::Matrix3d r = so3_exp(Eigen::Vector3d(0.0, a * kDeg, 0.0)) * so3_exp(Eigen::Vector3d(b * kDeg, 0.0, 0.0));
    out.push_back(rotate_about_pivot(center, r, pivot_world));
  }
  return out;
}

PoseSE3 random_pose(const PoseSE3& center, const std::array<double, 3>& rot_bounds_deg,
                    const std::array<double, 3>& trans_bounds_mm, std::uint64_t seed,
                    const Eigen::Vector3d& pivot_world) {
  for (int i = 0; i < 3; ++i) {
    if (rot_bounds_deg[i] < 0.0 || trans_bounds_mm[i] < 0.0) fail(ErrorCode::kInvalidArgument, "negative bound");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Eigen::Vector3d w, t;
  for (int i = 0; i < 3; ++i) w[i] = unit(rng) * rot_bounds_deg[i] * kDeg;
  for (int i = 0; i < 3; ++i) t[i] = unit(rng) * trans_bounds_mm[i];
  return rotate_about_pivot(center, so3_exp(w), pivot_world, t);
}

io::Json pose_to_json(const PoseSE3& pose) {
  io::Json rot = io::Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(pose.rotation()(r, c));
  const auto& t = pose.translation();
  return {{"rotation", rot}, {"translation", {t[0], t[1], t[2]}}};
}

PoseSE3 pose_from_json(const io::Json& json) {
  try {
    const auto rot = json.at("rotation").get<std::vector<double>>();
    const auto t = json.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || t.size() != 3) fail(ErrorCode::kBadHeader, "pose needs 9 rotation and 3 translation values");
    Eigen::Matrix3d r;
    for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = rot[i];
    return PoseSE3(r, Eigen::Vector3d(t[0], t[1], t[2]));
  } catch (const io::Json::exception& e) {
    fail(ErrorCode::kBadHeader, std::string("pose: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidArgument) fail(ErrorCode::kBadHeader, e.what());
    throw;
  }
}

io::Json camera_to_json(const CameraModel& c) {
  return {{"focal_mm", c.focal_mm},
          {"detector_px", {c.width, c.height}},
          {"pixel_mm", c.pixel_mm},
          {"principal_px", {c.principal_px.x(), c.principal_px.y()}}};
}

CameraModel camera_from_json(const io::Json& json) {
  CameraModel c;
  try {
    c.focal_mm = json.at("focal_mm").get<double>();
    const auto det = json.at("detector_px").get<std::vector<int>>();
    if (det.size() != 2) fail(ErrorCode::kBadHeader, "detector_px needs two entries");
    c.width = det[0];
    c.height = det[1];
    c.pixel_mm = json.at("pixel_mm").get<double>();
    if (json.contains("principal_px")) {
      const auto pp = json.at("principal_px").get<std::vector<double>>();
      if (pp.size() != 2) fail(ErrorCode::kBadHeader, "principal_px needs two entries");
      c.principal_px = {pp[0], pp[1]};
    } else {
      c.principal_px = {0.5 * (c.width - 1), 0.5 * (c.height - 1)};
    }
  } catch (const io::Json::exception& e) {
    fail(ErrorCode::kBadHeader, std::string("camera: ") + e.what());
  }
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kBadHeader, e.what());
  }
  return c;
}

PoseSE3 load_pose(const std::filesystem::path& path) { return pose_from_json(io::read_json(path)); }

void save_pose(const std::filesystem::path& path, const PoseSE3& pose) { io::write_json(path, pose_to_json(pose)); }

}  // namespace rayemb

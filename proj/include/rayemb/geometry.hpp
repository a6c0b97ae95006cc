#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rayemb/io.hpp"

namespace rayemb {

using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Pinhole X-ray camera: source at the camera origin, detector plane at
/// z = focal_mm, square pixels. Pixel centres sit at integer coordinates,
/// u along the detector width (camera +x), v along its height (camera +y).
struct CameraModel {
  double focal_mm = 1020.0;
  int width = 1536;
  int height = 1536;
  double pixel_mm = 0.194;
  Eigen::Vector2d principal_px{767.5, 767.5};

  void validate() const;
  double focal_px() const { return focal_mm / pixel_mm; }

  /// Same physical detector sampled on a coarser (or finer) pixel grid.
  CameraModel resized(int new_width, int new_height) const;
  /// Integer binning by `factor`; throws BadScale unless it divides both sides.
  CameraModel downsampled(int factor) const;

  /// 1536 x 1536 flat panel with 0.194 mm pixels, principal point centred.
  static CameraModel flat_panel_1536(double focal_mm);
};

/// Rigid transform taking volume/world coordinates to camera coordinates.
class PoseSE3 {
 public:
  PoseSE3();
  /// Throws InvalidArgument unless R is a rotation to within 1e-9.
  PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static PoseSE3 identity() { return {}; }
  static PoseSE3 unchecked(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return rotation_ * x + translation_; }
  PoseSE3 inverse() const;
  /// (a * b).apply(x) == a.apply(b.apply(x)).
  PoseSE3 operator*(const PoseSE3& rhs) const;

  /// max(|R^T R - I|, |det R - 1|).
  double orthonormality_error() const;
  PoseSE3 reorthonormalized() const;

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;
};

Eigen::Vector3d to_camera(const PoseSE3& pose, const Eigen::Vector3d& point);

/// Throws BehindCamera for non-positive camera depth.
Eigen::Vector2d project(const CameraModel& camera, const PoseSE3& pose, const Eigen::Vector3d& point);
Eigen::Vector2d project_camera_point(const CameraModel& camera, const Eigen::Vector3d& camera_point);

/// World-frame ray from the source through the pixel centre.
Ray backproject(const CameraModel& camera, const PoseSE3& pose, const Eigen::Vector2d& pixel);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& rotation_vector);
Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation);
/// Geodesic angle of R in radians, in [0, pi].
double rotation_angle(const Eigen::Matrix3d& rotation);

/// Twist layout: (rotation vector, translation vector).
PoseSE3 se3_exp(const Vector6d& twist);
/// Throws NearPiRotation when the rotation angle is within 1e-6 of pi.
Vector6d se3_log(const PoseSE3& pose);

/// Applies a camera-frame rotation about the camera-frame image of
/// `pivot_world`, followed by a camera-frame offset.
PoseSE3 rotate_about_pivot(const PoseSE3& pose, const Eigen::Matrix3d& camera_rotation,
                           const Eigen::Vector3d& pivot_world,
                           const Eigen::Vector3d& camera_offset = Eigen::Vector3d::Zero());

/// (lao_rao_deg, cra_cau_deg) for each grid node, row-major over lao/rao.
std::vector<std::pair<double, double>> template_grid_angles(double lao_rao_range_deg, double cra_cau_range_deg,
                                                            int steps);

/// steps x steps C-arm views around `center`. LAO/RAO turns about the
/// detector's vertical axis, CRA/CAU about its horizontal axis, both through
/// `pivot_world`.
std::vector<PoseSE3> template_pose_grid(const PoseSE3& center, double lao_rao_range_deg, double cra_cau_range_deg,
                                        int steps, const Eigen::Vector3d& pivot_world = Eigen::Vector3d::Zero());

/// Rotation-vector components and camera-frame offsets drawn uniformly in
/// their bounds and applied about `pivot_world`.
PoseSE3 random_pose(const PoseSE3& center, const std::array<double, 3>& rot_bounds_deg,
                    const std::array<double, 3>& trans_bounds_mm, std::uint64_t seed,
                    const Eigen::Vector3d& pivot_world = Eigen::Vector3d::Zero());

io::Json pose_to_json(const PoseSE3& pose);
PoseSE3 pose_from_json(const io::Json& json);
io::Json camera_to_json(const CameraModel& camera);
CameraModel camera_from_json(const io::Json& json);

PoseSE3 load_pose(const std::filesystem::path& path);
void save_pose(const std::filesystem::path& path, const PoseSE3& pose);

}  // namespace rayemb

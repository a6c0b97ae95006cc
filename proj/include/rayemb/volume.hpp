#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace rayemb {

enum class VolumeUnit { kHounsfield, kAttenuation };

/// Dense scalar grid in world millimetres. Voxel (0,0,0) is centred at
/// `origin`; axes are aligned with the world axes. The sampled extent of the
/// volume is the union of voxel boxes, i.e. half a voxel beyond the outermost
/// centres on every side.
class Volume {
 public:
  Volume(std::array<int, 3> dims, Eigen::Vector3d spacing, Eigen::Vector3d origin, std::vector<float> data,
         VolumeUnit unit);

  const std::array<int, 3>& dims() const { return dims_; }
  const Eigen::Vector3d& spacing() const { return spacing_; }
  const Eigen::Vector3d& origin() const { return origin_; }
  const std::vector<float>& data() const { return data_; }
  VolumeUnit unit() const { return unit_; }
  std::size_t voxel_count() const { return data_.size(); }

  std::size_t linear_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
  }
  float at(int i, int j, int k) const { return data_[linear_index(i, j, k)]; }

  Eigen::Vector3d world_from_index(const Eigen::Vector3d& ijk) const { return origin_ + ijk.cwiseProduct(spacing_); }
  Eigen::Vector3d index_from_world(const Eigen::Vector3d& xyz) const { return (xyz - origin_).cwiseQuotient(spacing_); }

  Eigen::Vector3d bounds_min() const { return origin_ - 0.5 * spacing_; }
  Eigen::Vector3d bounds_max() const;
  Eigen::Vector3d center() const { return 0.5 * (bounds_min() + bounds_max()); }

  /// Trilinear sample at continuous index coordinates. Zero outside the voxel
  /// boxes; clamped to the outermost centres inside the half-voxel rim.
  float sample_index(double qi, double qj, double qk) const {
    if (qi < -0.5 || qj < -0.5 || qk < -0.5 || qi > dims_[0] - 0.5 || qj > dims_[1] - 0.5 || qk > dims_[2] - 0.5) {
      return 0.0f;
    }
    return interpolate(axis_weight(qi, dims_[0]), axis_weight(qj, dims_[1]), axis_weight(qk, dims_[2]));
  }

 private:
  struct AxisWeight {
    int lo;
    int hi;
    double frac;
  };

  static AxisWeight axis_weight(double q, int n) {
    if (n == 1) return {0, 0, 0.0};
    q = std::clamp(q, 0.0, static_cast<double>(n - 1));
    int lo = static_cast<int>(q);
    if (lo >= n - 1) lo = n - 2;
    return {lo, lo + 1, q - lo};
  }

  float interpolate(const AxisWeight& a, const AxisWeight& b, const AxisWeight& c) const {
    const double c00 = at(a.lo, b.lo, c.lo) * (1.0 - a.frac) + at(a.hi, b.lo, c.lo) * a.frac;
    const double c10 = at(a.lo, b.hi, c.lo) * (1.0 - a.frac) + at(a.hi, b.hi, c.lo) * a.frac;
    const double c01 = at(a.lo, b.lo, c.hi) * (1.0 - a.frac) + at(a.hi, b.lo, c.hi) * a.frac;
    const double c11 = at(a.lo, b.hi, c.hi) * (1.0 - a.frac) + at(a.hi, b.hi, c.hi) * a.frac;
    const double c0 = c00 * (1.0 - b.frac) + c10 * b.frac;
    const double c1 = c01 * (1.0 - b.frac) + c11 * b.frac;
    return static_cast<float>(c0 * (1.0 - c.frac) + c1 * c.frac);
  }

  std::array<int, 3> dims_;
  Eigen::Vector3d spacing_;
  Eigen::Vector3d origin_;
  std::vector<float> data_;
  VolumeUnit unit_;
};

/// Boolean voxel mask on the grid of a parent volume.
class VolumeMask {
 public:
  VolumeMask(std::array<int, 3> dims, std::vector<std::uint8_t> bits);

  const std::array<int, 3>& dims() const { return dims_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  bool at(std::size_t linear) const { return bits_[linear] != 0; }
  std::size_t count() const;

 private:
  std::array<int, 3> dims_;
  std::vector<std::uint8_t> bits_;
};

struct LandmarkSample {
  std::vector<Eigen::Vector3d> points;
};

enum class VolumeFormat { kNifti1, kRawHeader };

/// Pick the format from the extension: `.nii` is NIfTI-1, anything else is
/// treated as a raw+header JSON sidecar.
VolumeFormat guess_format(const std::filesystem::path& path);

/// NIfTI carries no unit flag, so `nifti_unit` states what the voxels hold.
Volume load_volume(const std::filesystem::path& path, VolumeFormat format,
                   VolumeUnit nifti_unit = VolumeUnit::kHounsfield);
Volume load_volume(const std::filesystem::path& path);

/// Writes `<stem>.json` (the path given) and the data file next to it.
void save_volume(const std::filesystem::path& header_path, const Volume& volume);

VolumeMask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& header_path, const VolumeMask& mask, const Volume& parent);

inline constexpr double kDefaultMuWater = 0.02;
inline constexpr double kDefaultHuClipMin = -1000.0;

/// mu = mu_water * (HU + 1000) / 1000; HU below the clip maps to zero.
Volume hu_to_attenuation(const Volume& volume, double mu_water = kDefaultMuWater,
                         double hu_clip_min = kDefaultHuClipMin);

double sample_trilinear(const Volume& volume, const Eigen::Vector3d& point);

/// Uniform over mask-true voxels with uniform jitter inside the chosen voxel.
LandmarkSample sample_mask_points(const VolumeMask& mask, const Volume& volume, int count, std::uint64_t seed);

}  // namespace rayemb

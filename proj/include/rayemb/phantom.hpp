#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "rayemb/volume.hpp"

namespace rayemb {

struct Ellipsoid {
  Eigen::Vector3d center;      ///< world mm
  Eigen::Vector3d semi_axes;   ///< mm, along the rotated axes
  double yaw_deg = 0.0;        ///< rotation about world z
  double mu = 0.02;            ///< 1/mm
  bool in_mask = true;
};

struct PhantomSpec {
  std::array<int, 3> dims{128, 128, 128};
  double spacing_mm = 1.0;
  std::vector<Ellipsoid> ellipsoids;  ///< later entries overwrite earlier ones
};

/// Three overlapping ellipsoids of distinct attenuation in a 128^3, 1 mm
/// grid centred on the world origin. The two denser ones form the mask.
PhantomSpec three_ellipsoid_phantom_spec();

struct Phantom {
  Volume volume;
  VolumeMask mask;
};

Phantom make_phantom(const PhantomSpec& spec);

}  // namespace rayemb

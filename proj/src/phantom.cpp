#include "rayemb/phantom.hpp"

#include <cmath>
#include <numbers>

#include "rayemb/geometry.hpp"

namespace rayemb {

PhantomSpec three_ellipsoid_phantom_spec() {
  PhantomSpec spec;
  spec.ellipsoids = {
      {{0.0, 0.0, 0.0}, {50.0, 38.0, 46.0}, 0.0, 0.018, false},
      {{-17.0, 9.0, 6.0}, {22.0, 11.0, 27.0}, 30.0, 0.040, true},
      {{21.0, -13.0, -11.0}, {10.0, 17.0, 14.0}, -15.0, 0.060, true},
  };
  return spec;
}

Phantom make_phantom(const PhantomSpec& spec) {
  const auto [nx, ny, nz] = spec.dims;
  const Eigen::Vector3d spacing = Eigen::Vector3d::Constant(spec.spacing_mm);
  const Eigen::Vector3d origin = -0.5 * spec.spacing_mm * Eigen::Vector3d(nx - 1, ny - 1, nz - 1);
  const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
  std::vector<float> data(n, 0.0f);
  std::vector<std::uint8_t> bits(n, 0);

  std::vector<Eigen::Matrix3d> to_local;
  for (const auto& e : spec.ellipsoids) {
    to_local.push_back(so3_exp(Eigen::Vector3d(0.0, 0.0, e.yaw_deg * std::numbers::pi / 180.0)).transpose());
  }
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Eigen::Vector3d p = origin + spec.spacing_mm * Eigen::Vector3d(i, j, k);
        const std::size_t idx = i + static_cast<std::size_t>(nx) * (j + static_cast<std::size_t>(ny) * k);
        for (std::size_t e = 0; e < spec.ellipsoids.size(); ++e) {
          const auto& el = spec.ellipsoids[e];
          const Eigen::Vector3d q = (to_local[e] * (p - el.center)).cwiseQuotient(el.semi_axes);
          if (q.squaredNorm() <= 1.0) {
            data[idx] = static_cast<float>(el.mu);
            bits[idx] = el.in_mask ? 1 : 0;
          }
        }
      }
    }
  }
  return {Volume(spec.dims, spacing, origin, std::move(data), VolumeUnit::kAttenuation),
          VolumeMask(spec.dims, std::move(bits))};
}

}  // namespace rayemb

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "rayemb/geometry.hpp"
#include "rayemb/volume.hpp"

namespace rayemb {

enum class ImageKind { kIntensity, kLogAttenuation };

/// Row-major detector image; values[v * width + u].
struct DetectorImage {
  int width = 0;
  int height = 0;
  double pixel_mm = 1.0;
  ImageKind kind = ImageKind::kIntensity;
  std::vector<double> values;

  double at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }
  double& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
};

enum class RenderMethod {
  kMidpoint,  ///< ray marching over trilinear samples
  kSiddon,    ///< exact path lengths through piecewise-constant voxels
};

struct RenderOptions {
  double step_mm = 0.0;  ///< <= 0 selects half the smallest voxel spacing
  double i0 = 1.0;
  ImageKind kind = ImageKind::kIntensity;
  RenderMethod method = RenderMethod::kMidpoint;
};

double default_step_mm(const Volume& volume);

/// Parametric entry/exit of the ray through the volume's bounding box.
/// Returns false when the ray misses it.
bool clip_to_volume(const Volume& volume, const Ray& ray, double& t_enter, double& t_exit);

/// Line integral of attenuation along the ray (1/mm * mm). Zero on a miss.
double ray_integral(const Volume& volume, const Ray& ray, double step_mm);
double ray_integral_siddon(const Volume& volume, const Ray& ray);

/// Beer-Lambert DRR. The volume must hold attenuation, not HU.
DetectorImage render_drr(const Volume& volume, const CameraModel& camera, const PoseSE3& pose,
                         const RenderOptions& options = {});

/// One image per scale, each ray-cast on the binned detector grid.
std::vector<DetectorImage> render_multiscale(const Volume& volume, const CameraModel& camera, const PoseSE3& pose,
                                             std::span<const int> scales, const RenderOptions& options = {});

/// Mean over factor x factor pixel blocks. Throws BadScale unless it divides.
DetectorImage downsample_box(const DetectorImage& image, int factor);

/// Rescale into [0, 1]; constant images map to all zeros.
DetectorImage min_max_normalized(const DetectorImage& image);

// File formats. Raw: JSON header {"width","height","pixel_mm","kind",
// "data_file"} plus little-endian f32 row-major data. PGM: 16-bit binary
// PGM linearly mapped from [min, max], recorded in a JSON sidecar.
void save_image_raw(const std::filesystem::path& header_path, const DetectorImage& image);
DetectorImage load_image_raw(const std::filesystem::path& header_path);
void save_image_pgm(const std::filesystem::path& pgm_path, const DetectorImage& image);
DetectorImage load_image_pgm(const std::filesystem::path& pgm_path);

struct Rgb {
  unsigned char r, g, b;
};
/// Binary PPM, row-major.
void save_ppm(const std::filesystem::path& path, int width, int height, std::span<const Rgb> pixels);

}  // namespace rayemb

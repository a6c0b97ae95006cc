#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rayemb/drr.hpp"
#include "rayemb/geometry.hpp"

namespace rayemb {

/// Per-cell D-vectors on a grid that may be coarser than the image. Cell
/// (u, v) covers image pixels [u*s, u*s+s) x [v*s, v*s+s) for stride s.
struct EmbeddingMap {
  int width = 0;
  int height = 0;
  int dim = 0;
  int grid_stride_px = 1;
  std::vector<float> vectors;  ///< ((v * width + u) * dim + c)

  std::size_t cell_count() const { return static_cast<std::size_t>(width) * height; }
  std::span<const float> at(int u, int v) const {
    return {vectors.data() + (static_cast<std::size_t>(v) * width + u) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<float> at(int u, int v) {
    return {vectors.data() + (static_cast<std::size_t>(v) * width + u) * dim, static_cast<std::size_t>(dim)};
  }

  /// Image-pixel coordinate of a cell centre, and its inverse.
  Eigen::Vector2d cell_center_px(double u, double v) const;
  Eigen::Vector2d grid_from_pixel(const Eigen::Vector2d& pixel) const;

  /// Bilinear read at continuous grid coordinates, clamped to the grid.
  Eigen::VectorXd sample_bilinear(const Eigen::Vector2d& grid) const;

  /// Dense D x cells matrix in double precision.
  Eigen::MatrixXd as_matrix() const;

  /// Throws InvalidArgument on non-finite vectors, or on non-unit vectors
  /// when `normalized` is set.
  void validate(bool normalized) const;
};

/// Encoder contract shared by query and template images.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string name() const = 0;
  /// Zero when the provider accepts any dimensionality (file-backed).
  virtual int dim() const = 0;
  virtual bool normalized() const = 0;
  virtual bool needs_pose() const { return false; }

  /// `key` identifies the image for providers backed by external files.
  virtual EmbeddingMap embed(const DetectorImage& image, const CameraModel& camera,
                             const std::optional<PoseSE3>& pose, const std::string& key) const = 0;
};

/// Checks the image against the camera and the pose requirement, then
/// delegates to the provider.
EmbeddingMap embed_image(const EmbeddingProvider& provider, const DetectorImage& image, const CameraModel& camera,
                         const std::optional<PoseSE3>& pose, const std::string& key = {});

/// Unnormalised Plücker coordinates (d, o x d) of a ray.
Vector6d plucker(const Ray& ray);

/// Analytic ray embedding: unit Plücker 6-vectors of each cell's ray.
/// Rays through a common point X satisfy m = X x d, so their embeddings
/// span exactly a 3-dimensional subspace. Moments are expressed in units of
/// `moment_scale_mm`, which balances them against the unit direction.
std::unique_ptr<EmbeddingProvider> oracle_plucker_provider(int grid_stride_px = 1, double moment_scale_mm = 1.0);

/// Multi-scale local statistics on the min-max normalised image: for each
/// scale, window mean, window variance and a magnitude-weighted gradient
/// orientation histogram. L2-normalised; dim = scales * (2 + bins).
std::unique_ptr<EmbeddingProvider> patch_descriptor_provider(int radius_px, std::vector<int> scales,
                                                             int histogram_bins = 8);

/// Reads `<directory>/<key>.remb`, produced by an external encoder.
std::unique_ptr<EmbeddingProvider> file_embedding_provider(std::filesystem::path directory, int dim = 0,
                                                           bool normalized = false);

/// Parses "oracle", "oracle:<moment_scale_mm>", "patch" or "file:<dir>".
std::unique_ptr<EmbeddingProvider> make_provider(const std::string& spec, int patch_radius = 3,
                                                 std::vector<int> patch_scales = {1, 2, 4});

// Embedding file: "REMB", u32 version = 1, u32 width, height, dim,
// grid_stride_px, then width*height*dim little-endian f32, dim fastest.
void save_embeddings(const std::filesystem::path& path, const EmbeddingMap& map);
EmbeddingMap load_embeddings(const std::filesystem::path& path);
/// Also throws DimMismatch unless the stored dim equals `expected_dim`.
EmbeddingMap load_embeddings(const std::filesystem::path& path, int expected_dim);

}  // namespace rayemb

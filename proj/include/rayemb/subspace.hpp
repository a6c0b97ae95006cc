#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rayemb/drr.hpp"
#include "rayemb/embedding.hpp"
#include "rayemb/geometry.hpp"
#include "rayemb/volume.hpp"

namespace rayemb {

struct Template {
  DetectorImage image;
  PoseSE3 pose;
  EmbeddingMap embedding;
};

/// Pre-rendered views with known poses, all embedded by one provider.
struct TemplateSet {
  CameraModel camera;
  std::string provider_name;
  std::vector<Template> templates;

  int dim() const { return templates.empty() ? 0 : templates.front().embedding.dim; }
  /// Throws DimMismatch when template maps disagree on dim.
  void validate() const;
};

/// Orthonormal basis of the span of template embeddings for one 3D point.
/// The projector is basis * basis^T; it is never formed in the hot path.
struct LandmarkSubspace {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::MatrixXd basis;             ///< D x rank
  Eigen::VectorXd singular_values;   ///< all of them, descending

  int rank() const { return static_cast<int>(basis.cols()); }
  int ambient_dim() const { return static_cast<int>(basis.rows()); }
  Eigen::MatrixXd projector() const { return basis * basis.transpose(); }
};

inline constexpr double kDefaultSvRelTol = 1e-6;

/// Left singular vectors of `columns` with sigma_i >= tol * sigma_1.
LandmarkSubspace subspace_from_columns(const Eigen::MatrixXd& columns, double sv_rel_tol = kDefaultSvRelTol);

/// Stacks the bilinearly-sampled template embeddings at the projections of
/// `point`. Templates that cannot see the point are skipped; fewer than two
/// usable views throws TooFewVisibleTemplates.
LandmarkSubspace build_subspace(const TemplateSet& templates, const Eigen::Vector3d& point,
                                std::span<const int> chosen, double sv_rel_tol = kDefaultSvRelTol);

/// |P e| / |e|, zero for vanishing |e| or |P e|.
double subspace_similarity(const Eigen::MatrixXd& basis, const Eigen::Ref<const Eigen::VectorXd>& e);

struct SimilarityHeatmap {
  int width = 0;
  int height = 0;
  int grid_stride_px = 1;
  std::vector<double> values;  ///< row-major
  Eigen::Vector3d point = Eigen::Vector3d::Zero();

  double at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }
};

SimilarityHeatmap similarity_heatmap(const LandmarkSubspace& subspace, const EmbeddingMap& query);

enum class PeakMode { kNearest, kBilinearRefined };

struct Peak {
  Eigen::Vector2d pixel;  ///< full-image pixel coordinates
  double score = 0.0;
  int cell_u = 0;
  int cell_v = 0;
};

/// Argmax with ties broken by smallest row, then column. The refined mode
/// fits a parabola through the peak and its neighbours along each axis.
Peak best_correspondence(const SimilarityHeatmap& heatmap, PeakMode mode = PeakMode::kBilinearRefined);

struct Correspondence {
  Eigen::Vector3d point;
  Eigen::Vector2d pixel;
  double score = 0.0;
};
using CorrespondenceSet = std::vector<Correspondence>;

struct CorrespondenceOptions {
  int n_subspace_templates = 4;
  int top_k = 600;
  /// Template subsets drawn per retained point, counting the first pass.
  int tta_rounds = 10;
  std::uint64_t seed = 0;
  double sv_rel_tol = kDefaultSvRelTol;
  PeakMode peak = PeakMode::kBilinearRefined;
};

/// Scores every point with one random template subset, keeps the top_k, then
/// re-draws subsets for the survivors and keeps each one's best response.
/// Output is ordered by point index.
CorrespondenceSet estimate_correspondences(const TemplateSet& templates, const EmbeddingMap& query,
                                           const LandmarkSample& points, const CorrespondenceOptions& options);

struct InfoNceResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  ///< D x cells, d loss / d e(cell)
};

/// -log softmax(sim / temperature) at the positive cell, over every cell of
/// the query. The subspace basis is held constant.
InfoNceResult info_nce_loss(const LandmarkSubspace& subspace, const Eigen::MatrixXd& query_vectors,
                            Eigen::Index positive, double temperature);
InfoNceResult info_nce_loss(const LandmarkSubspace& subspace, const EmbeddingMap& query, int positive_u,
                            int positive_v, double temperature);

/// JSON Lines, one {"X":[x,y,z],"x2d":[u,v],"score":s} per item.
void save_correspondences(const std::filesystem::path& path, const CorrespondenceSet& set);
CorrespondenceSet load_correspondences(const std::filesystem::path& path);

}  // namespace rayemb

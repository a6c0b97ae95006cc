#pragma once

#include <filesystem>
#include <string>

#include "rayemb/cli/config.hpp"
#include "rayemb/embedding.hpp"
#include "rayemb/subspace.hpp"
#include "rayemb/volume.hpp"

namespace rayemb::cli {

/// Raised for command-line and workspace misuse; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Workspace {
  std::filesystem::path root;

  std::filesystem::path volume_dir() const { return root / "volume"; }
  std::filesystem::path templates_dir() const { return root / "templates"; }
  std::filesystem::path queries_dir() const { return root / "queries"; }
  std::filesystem::path results_dir() const { return root / "results"; }
};

/// Attenuation volume named by the config (HU inputs are converted).
Volume load_pipeline_volume(const PipelineConfig& config);
std::string volume_hash(const PipelineConfig& config);

/// The configured centre pose, or identity rotation with the volume centre
/// on the principal axis at source_to_center_mm.
PoseSE3 center_pose(const PipelineConfig& config, const Volume& volume);

/// Stable name for a template bundle: a hash over everything that shapes it.
std::string grid_id(const PipelineConfig& config, const std::string& volume_hash);

std::unique_ptr<EmbeddingProvider> make_pipeline_provider(const PipelineConfig& config);

/// Writes images, poses, embeddings and manifest.json into `dir`.
void write_template_bundle(const std::filesystem::path& dir, const TemplateSet& set, const PipelineConfig& config,
                           const std::string& volume_hash);

/// Loads a bundle and checks it against the config, the provider and the
/// recorded content hashes. Throws UsageError on a missing or stale bundle.
TemplateSet load_template_bundle(const std::filesystem::path& dir, const std::string& volume_hash,
                                 const std::string& provider_name);

}  // namespace rayemb::cli

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rayemb/cli/config.hpp"
#include "rayemb/evaluation.hpp"
#include "rayemb/registration.hpp"

namespace rayemb::cli {

enum ExitCode : int { kExitOk = 0, kExitRegistrationFailure = 1, kExitUsage = 2, kExitIo = 3 };

/// Writes the three-ellipsoid demo volume and its mask under <ws>/volume/.
void cmd_phantom(const PipelineConfig& config);

/// Renders, embeds and stores the template grid. Returns the bundle directory.
std::filesystem::path cmd_templates(const PipelineConfig& config);

/// Writes config.synth.count query DRRs with ground-truth poses under
/// <ws>/queries/. Returns the image header paths.
std::vector<std::filesystem::path> cmd_synth(const PipelineConfig& config);

/// DRR at `pose_path`, written as a raw image plus a PGM preview.
void cmd_render(const PipelineConfig& config, const std::filesystem::path& pose_path,
                const std::filesystem::path& out_path);

/// Correspondences for one query; written to <ws>/results/<query>/.
CorrespondenceSet cmd_correspond(const PipelineConfig& config, const std::filesystem::path& query_path,
                                 const std::optional<std::filesystem::path>& pose_path);

struct RegisterOutput {
  RegistrationResult result;
  CorrespondenceSet correspondences;
  std::filesystem::path result_path;
  std::optional<PoseSE3> gt_pose;
};

/// Full pipeline for one query; writes result.json, correspondences.jsonl,
/// heatmap.pgm and overlay.ppm under <ws>/results/<query>/.
RegisterOutput cmd_register(const PipelineConfig& config, const std::filesystem::path& query_path,
                            const std::optional<std::filesystem::path>& gt_path);

/// Aggregates every result with a ground-truth pose under `results_dir`.
EvalReport cmd_eval(const PipelineConfig& config, const std::filesystem::path& results_dir,
                    const std::optional<std::filesystem::path>& landmarks_path, GfrMetric metric,
                    double threshold_hi_mm, double threshold_lo_mm);

/// Landmarks for evaluation: from a JSON file {"points": [[x,y,z], ...]} or
/// sampled from the mask with the pipeline seed.
std::vector<Eigen::Vector3d> evaluation_landmarks(const PipelineConfig& config, const Volume& volume,
                                                  const std::optional<std::filesystem::path>& landmarks_path);

/// Parses arguments, runs one command and maps failures onto exit codes.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace rayemb::cli

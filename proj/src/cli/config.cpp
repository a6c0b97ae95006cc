#include "rayemb/cli/config.hpp"

#include <set>

#include "rayemb/error.hpp"

namespace rayemb::cli {

namespace {

void check_keys(const io::Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) fail(ErrorCode::kInvalidArgument, "unknown config key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const io::Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

VolumeUnit unit_from(const std::string& s) {
  if (s == "hu") return VolumeUnit::kHounsfield;
  if (s == "mu") return VolumeUnit::kAttenuation;
  fail(ErrorCode::kInvalidArgument, "unit must be 'hu' or 'mu'");
}

}  // namespace

void PipelineConfig::validate() const {
  camera.validate();
  if (image_size < 1) fail(ErrorCode::kInvalidArgument, "image_size must be positive");
  if (!(source_to_center_mm > 0.0)) fail(ErrorCode::kInvalidArgument, "source_to_center_mm must be positive");
  if (grid.steps < 2) fail(ErrorCode::kInvalidArgument, "grid.steps must be at least 2");
  if (grid.lao_rao_range_deg < 0.0 || grid.cra_cau_range_deg < 0.0) {
    fail(ErrorCode::kInvalidArgument, "grid ranges must be non-negative");
  }
  if (sampling.points < 1 || sampling.top_k < 1 || sampling.tta_rounds < 1 || sampling.n_subspace_templates < 1) {
    fail(ErrorCode::kInvalidArgument, "sampling counts must be positive");
  }
  if (sampling.top_k > sampling.points) fail(ErrorCode::kInvalidArgument, "sampling.top_k exceeds sampling.points");
  if (synth.count < 0) fail(ErrorCode::kInvalidArgument, "synth.count must be non-negative");
  for (int i = 0; i < 3; ++i) {
    if (synth.rot_bounds_deg[i] < 0.0 || synth.trans_bounds_mm[i] < 0.0) {
      fail(ErrorCode::kInvalidArgument, "synth bounds must be non-negative");
    }
  }
  if (!(oracle_moment_scale_mm > 0.0)) fail(ErrorCode::kInvalidArgument, "oracle_moment_scale_mm must be positive");
  if (eval_landmarks < 1) fail(ErrorCode::kInvalidArgument, "eval_landmarks must be positive");
  if (threads < 0) fail(ErrorCode::kInvalidArgument, "threads must be non-negative");
  robust.validate();
  refine.validate();
  for (int s : refine.scales) {
    if (image_size % s != 0) fail(ErrorCode::kBadScale, "refine scale does not divide image_size");
  }
}

CameraModel PipelineConfig::working_camera() const { return camera.resized(image_size, image_size); }

std::filesystem::path PipelineConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : workspace / p;
}

PipelineConfig config_from_json(const io::Json& j, PipelineConfig c) {
  check_keys(j,
             {"workspace", "camera", "image_size", "volume", "mask", "nifti_unit", "source_to_center_mm",
              "center_pose", "render_step_mm", "grid", "provider", "oracle_moment_scale_mm", "patch", "sampling", "robust", "refine", "synth",
              "eval_landmarks", "seed", "threads"},
             "config");
  try {
    if (j.contains("workspace")) c.workspace = j.at("workspace").get<std::string>();
    if (j.contains("camera")) c.camera = camera_from_json(j.at("camera"));
    read(j, "image_size", c.image_size);
    if (j.contains("volume")) c.volume = j.at("volume").get<std::string>();
    if (j.contains("mask")) c.mask = j.at("mask").get<std::string>();
    if (j.contains("nifti_unit")) c.nifti_unit = unit_from(j.at("nifti_unit").get<std::string>());
    read(j, "source_to_center_mm", c.source_to_center_mm);
    if (j.contains("center_pose") && !j.at("center_pose").is_null()) c.center_pose = pose_from_json(j.at("center_pose"));
    read(j, "render_step_mm", c.render_step_mm);
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      check_keys(g, {"lao_rao_range_deg", "cra_cau_range_deg", "steps"}, "grid");
      read(g, "lao_rao_range_deg", c.grid.lao_rao_range_deg);
      read(g, "cra_cau_range_deg", c.grid.cra_cau_range_deg);
      read(g, "steps", c.grid.steps);
    }
    read(j, "provider", c.provider);
    read(j, "oracle_moment_scale_mm", c.oracle_moment_scale_mm);
    if (j.contains("patch")) {
      const auto& p = j.at("patch");
      check_keys(p, {"radius", "scales"}, "patch");
      read(p, "radius", c.patch.radius);
      read(p, "scales", c.patch.scales);
    }
    if (j.contains("sampling")) {
      const auto& s = j.at("sampling");
      check_keys(s, {"points", "top_k", "tta_rounds", "n_subspace_templates", "sv_rel_tol"}, "sampling");
      read(s, "points", c.sampling.points);
      read(s, "top_k", c.sampling.top_k);
      read(s, "tta_rounds", c.sampling.tta_rounds);
      read(s, "n_subspace_templates", c.sampling.n_subspace_templates);
      read(s, "sv_rel_tol", c.sampling.sv_rel_tol);
    }
    if (j.contains("robust")) {
      const auto& r = j.at("robust");
      check_keys(r, {"max_iterations", "sigma_max_px", "confidence", "min_sample", "quadrature_points"}, "robust");
      read(r, "max_iterations", c.robust.max_iterations);
      read(r, "sigma_max_px", c.robust.sigma_max_px);
      read(r, "confidence", c.robust.confidence);
      read(r, "min_sample", c.robust.min_sample);
      read(r, "quadrature_points", c.robust.quadrature_points);
    }
    if (j.contains("refine")) {
      const auto& r = j.at("refine");
      check_keys(r,
                 {"enabled", "iterations", "scales", "step_size", "fd_epsilon", "render_step_mm", "rotation_scale_mm",
                  "min_step"},
                 "refine");
      read(r, "enabled", c.refine_enabled);
      read(r, "iterations", c.refine.iterations);
      read(r, "scales", c.refine.scales);
      read(r, "step_size", c.refine.step_size);
      read(r, "fd_epsilon", c.refine.fd_epsilon);
      read(r, "render_step_mm", c.refine.render_step_mm);
      read(r, "rotation_scale_mm", c.refine.rotation_scale_mm);
      read(r, "min_step", c.refine.min_step);
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      check_keys(s, {"count", "rot_bounds_deg", "trans_bounds_mm"}, "synth");
      read(s, "count", c.synth.count);
      read(s, "rot_bounds_deg", c.synth.rot_bounds_deg);
      read(s, "trans_bounds_mm", c.synth.trans_bounds_mm);
    }
    read(j, "eval_landmarks", c.eval_landmarks);
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
  } catch (const io::Json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad config value: ") + e.what());
  }
  return c;
}

io::Json config_to_json(const PipelineConfig& c) {
  return io::Json{
      {"workspace", c.workspace.string()},
      {"camera", camera_to_json(c.camera)},
      {"image_size", c.image_size},
      {"volume", c.volume.string()},
      {"mask", c.mask.string()},
      {"nifti_unit", c.nifti_unit == VolumeUnit::kHounsfield ? "hu" : "mu"},
      {"source_to_center_mm", c.source_to_center_mm},
      {"center_pose", c.center_pose ? pose_to_json(*c.center_pose) : io::Json(nullptr)},
      {"render_step_mm", c.render_step_mm},
      {"grid",
       {{"lao_rao_range_deg", c.grid.lao_rao_range_deg},
        {"cra_cau_range_deg", c.grid.cra_cau_range_deg},
        {"steps", c.grid.steps}}},
      {"provider", c.provider},
      {"oracle_moment_scale_mm", c.oracle_moment_scale_mm},
      {"patch", {{"radius", c.patch.radius}, {"scales", c.patch.scales}}},
      {"sampling",
       {{"points", c.sampling.points},
        {"top_k", c.sampling.top_k},
        {"tta_rounds", c.sampling.tta_rounds},
        {"n_subspace_templates", c.sampling.n_subspace_templates},
        {"sv_rel_tol", c.sampling.sv_rel_tol}}},
      {"robust",
       {{"max_iterations", c.robust.max_iterations},
        {"sigma_max_px", c.robust.sigma_max_px},
        {"confidence", c.robust.confidence},
        {"min_sample", c.robust.min_sample},
        {"quadrature_points", c.robust.quadrature_points}}},
      {"refine",
       {{"enabled", c.refine_enabled},
        {"iterations", c.refine.iterations},
        {"scales", c.refine.scales},
        {"step_size", c.refine.step_size},
        {"fd_epsilon", c.refine.fd_epsilon},
        {"render_step_mm", c.refine.render_step_mm},
        {"rotation_scale_mm", c.refine.rotation_scale_mm},
        {"min_step", c.refine.min_step}}},
      {"synth",
       {{"count", c.synth.count},
        {"rot_bounds_deg", c.synth.rot_bounds_deg},
        {"trans_bounds_mm", c.synth.trans_bounds_mm}}},
      {"eval_landmarks", c.eval_landmarks},
      {"seed", c.seed},
      {"threads", c.threads},
  };
}

PipelineConfig load_config(const std::filesystem::path& path) { return config_from_json(io::read_json(path)); }

}  // namespace rayemb::cli

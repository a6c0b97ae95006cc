#include "rayemb/cli/workspace.hpp"

#include <cstdio>

#include "rayemb/error.hpp"

namespace rayemb::cli {

namespace {

std::string entry_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%04zu", i);
  return buf;
}

}  // namespace

Volume load_pipeline_volume(const PipelineConfig& config) {
  const auto path = config.resolve(config.volume);
  if (!std::filesystem::exists(path)) throw UsageError("volume not found: " + path.string());
  Volume v = load_volume(path, guess_format(path), config.nifti_unit);
  return v.unit() == VolumeUnit::kHounsfield ? hu_to_attenuation(v) : v;
}

std::string volume_hash(const PipelineConfig& config) { return io::file_hash(config.resolve(config.volume)); }

PoseSE3 center_pose(const PipelineConfig& config, const Volume& volume) {
  if (config.center_pose) return *config.center_pose;
  return PoseSE3(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.0, 0.0, config.source_to_center_mm) - volume.center());
}

std::string grid_id(const PipelineConfig& config, const std::string& vhash) {
  const io::Json key{{"grid",
                      {config.grid.lao_rao_range_deg, config.grid.cra_cau_range_deg, config.grid.steps}},
                     {"camera", camera_to_json(config.working_camera())},
                     {"provider", make_pipeline_provider(config)->name()},
                     {"render_step_mm", config.render_step_mm},
                     {"source_to_center_mm", config.source_to_center_mm},
                     {"center_pose", config.center_pose ? pose_to_json(*config.center_pose) : io::Json(nullptr)},
                     {"volume", vhash}};
  return "grid-" + io::hex64(io::fnv1a(key.dump())).substr(0, 12);
}

std::unique_ptr<EmbeddingProvider> make_pipeline_provider(const PipelineConfig& config) {
  std::string spec = config.provider;
  if (spec == "oracle") return oracle_plucker_provider(1, config.oracle_moment_scale_mm);
  if (spec.rfind("file:", 0) == 0) {
    const std::filesystem::path dir = spec.substr(5);
    spec = "file:" + config.resolve(dir).string();
  }
  return make_provider(spec, config.patch.radius, config.patch.scales);
}

void write_template_bundle(const std::filesystem::path& dir, const TemplateSet& set, const PipelineConfig& config,
                           const std::string& vhash) {
  std::filesystem::create_directories(dir);
  io::Json entries = io::Json::array();
  for (std::size_t i = 0; i < set.templates.size(); ++i) {
    const auto& t = set.templates[i];
    const std::string stem = entry_stem(i);
    save_image_raw(dir / (stem + ".json"), t.image);
    save_pose(dir / (stem + ".pose.json"), t.pose);
    save_embeddings(dir / (stem + ".remb"), t.embedding);
    entries.push_back({{"image", stem + ".json"},
                       {"pose", stem + ".pose.json"},
                       {"embedding", stem + ".remb"},
                       {"image_hash", io::file_hash(dir / (stem + ".f32"))},
                       {"embedding_hash", io::file_hash(dir / (stem + ".remb"))}});
  }
  const io::Json manifest{{"grid_id", grid_id(config, vhash)},
                          {"grid",
                           {{"lao_rao_range_deg", config.grid.lao_rao_range_deg},
                            {"cra_cau_range_deg", config.grid.cra_cau_range_deg},
                            {"steps", config.grid.steps}}},
                          {"camera", camera_to_json(set.camera)},
                          {"provider", set.provider_name},
                          {"dim", set.dim()},
                          {"volume_hash", vhash},
                          {"count", set.templates.size()},
                          {"templates", entries}};
  io::write_json(dir / "manifest.json", manifest);
}

TemplateSet load_template_bundle(const std::filesystem::path& dir, const std::string& vhash,
                                 const std::string& provider_name) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw UsageError("template bundle not found: " + dir.string() + " (run 'templates' first)");
  }
  const io::Json m = io::read_json(manifest_path);
  if (m.at("volume_hash").get<std::string>() != vhash) {
    throw UsageError("template bundle is stale: volume changed since it was built");
  }
  if (m.at("provider").get<std::string>() != provider_name) {
    throw UsageError("template bundle was embedded with '" + m.at("provider").get<std::string>() +
                     "', not '" + provider_name + "'");
  }
  TemplateSet set;
  set.camera = camera_from_json(m.at("camera"));
  set.provider_name = provider_name;
  const int dim = m.at("dim").get<int>();
  for (const auto& e : m.at("templates")) {
    const auto emb_path = dir / e.at("embedding").get<std::string>();
    if (io::file_hash(emb_path) != e.at("embedding_hash").get<std::string>()) {
      throw UsageError("template bundle is stale: hash mismatch for " + emb_path.string());
    }
    Template t{load_image_raw(dir / e.at("image").get<std::string>()),
               load_pose(dir / e.at("pose").get<std::string>()), load_embeddings(emb_path, dim)};
    set.templates.push_back(std::move(t));
  }
  set.validate();
  return set;
}

}  // namespace rayemb::cli

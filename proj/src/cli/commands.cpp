#include "rayemb/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <limits>
#include <random>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "rayemb/cli/workspace.hpp"
#include "rayemb/drr.hpp"
#include "rayemb/error.hpp"
#include "rayemb/phantom.hpp"

namespace rayemb::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kLandmarkSeedSalt = 0x9e3779b97f4a7c15ULL;

RenderOptions render_options(const PipelineConfig& config) {
  RenderOptions opts;
  opts.step_mm = config.render_step_mm;
  return opts;
}

std::uint64_t derived_seed(std::uint64_t seed, std::size_t index) {
  return io::fnv1a(std::to_string(seed) + ":" + std::to_string(index));
}

std::string query_name(const fs::path& query_path) {
  std::string stem = query_path.stem().string();
  return stem.empty() ? "query" : stem;
}

// Ground truth given explicitly, or the <stem>.pose.json written by synth.
std::optional<PoseSE3> query_pose(const fs::path& query_path, const std::optional<fs::path>& pose_path) {
  if (pose_path) {
    if (!fs::exists(*pose_path)) throw UsageError("pose file not found: " + pose_path->string());
    return load_pose(*pose_path);
  }
  fs::path sibling = query_path;
  sibling.replace_extension(".pose.json");
  if (fs::exists(sibling)) return load_pose(sibling);
  return std::nullopt;
}

DetectorImage load_query(const fs::path& path, const CameraModel& camera) {
  if (!fs::exists(path)) throw UsageError("query image not found: " + path.string());
  DetectorImage img = load_image_raw(path);
  if (img.width != camera.width || img.height != camera.height) {
    fail(ErrorCode::kSizeMismatch, "query is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                       ", pipeline expects " + std::to_string(camera.width) + "x" +
                                       std::to_string(camera.height));
  }
  return img;
}

struct Context {
  Volume volume;
  std::string vhash;
  std::unique_ptr<EmbeddingProvider> provider;
  CameraModel camera;
};

Context open_context(const PipelineConfig& config) {
  config.validate();
  Volume volume = load_pipeline_volume(config);
  return Context{std::move(volume), volume_hash(config), make_pipeline_provider(config), config.working_camera()};
}

CorrespondenceOptions correspondence_options(const PipelineConfig& config) {
  CorrespondenceOptions o;
  o.n_subspace_templates = config.sampling.n_subspace_templates;
  o.top_k = config.sampling.top_k;
  o.tta_rounds = config.sampling.tta_rounds;
  o.seed = config.seed;
  o.sv_rel_tol = config.sampling.sv_rel_tol;
  return o;
}

struct Matching {
  TemplateSet templates;
  EmbeddingMap query_embedding;
  CorrespondenceSet correspondences;
};

Matching match_query(const PipelineConfig& config, const Context& ctx, const DetectorImage& query,
                     const std::optional<PoseSE3>& pose, const std::string& key) {
  const fs::path bundle = Workspace{config.workspace}.templates_dir() / grid_id(config, ctx.vhash);
  Matching m;
  m.templates = load_template_bundle(bundle, ctx.vhash, ctx.provider->name());
  if (ctx.provider->needs_pose() && !pose) {
    throw UsageError("provider '" + ctx.provider->name() + "' needs the query pose (--gt or <query>.pose.json)");
  }
  m.query_embedding = embed_image(*ctx.provider, query, ctx.camera, pose, key);
  const auto mask_path = config.resolve(config.mask);
  if (!fs::exists(mask_path)) throw UsageError("mask not found: " + mask_path.string());
  const VolumeMask mask = load_mask(mask_path);
  const LandmarkSample points = sample_mask_points(mask, ctx.volume, config.sampling.points, config.seed);
  m.correspondences = estimate_correspondences(m.templates, m.query_embedding, points, correspondence_options(config));
  return m;
}

// Heatmap of the strongest correspondence over evenly spaced templates.
std::optional<SimilarityHeatmap> top_heatmap(const PipelineConfig& config, const Matching& m) {
  if (m.correspondences.empty()) return std::nullopt;
  const auto top = std::max_element(m.correspondences.begin(), m.correspondences.end(),
                                    [](const auto& a, const auto& b) { return a.score < b.score; });
  const int n = static_cast<int>(m.templates.templates.size());
  const int k = std::min(config.sampling.n_subspace_templates, n);
  std::vector<int> chosen;
  for (int i = 0; i < k; ++i) chosen.push_back(static_cast<int>(static_cast<long>(i) * n / k));
  try {
    const auto sub = build_subspace(m.templates, top->point, chosen, config.sampling.sv_rel_tol);
    return similarity_heatmap(sub, m.query_embedding);
  } catch (const Error&) {
    return std::nullopt;
  }
}

void write_heatmap(const fs::path& path, const SimilarityHeatmap& h) {
  DetectorImage img;
  img.width = h.width;
  img.height = h.height;
  img.values = h.values;
  save_image_pgm(path, img);
}

void draw_cross(std::vector<Rgb>& px, int w, int h, const Eigen::Vector2d& at, int channel) {
  const int cu = static_cast<int>(std::lround(at.x()));
  const int cv = static_cast<int>(std::lround(at.y()));
  for (int d = -3; d <= 3; ++d) {
    for (auto [u, v] : {std::pair{cu + d, cv}, std::pair{cu, cv + d}}) {
      if (u < 0 || v < 0 || u >= w || v >= h) continue;
      Rgb& p = px[static_cast<std::size_t>(v) * w + u];
      (channel == 0 ? p.r : channel == 1 ? p.g : p.b) = 255;
    }
  }
}

// Query in grey; ground-truth landmark projections in green, estimates in red.
void write_overlay(const fs::path& path, const DetectorImage& query, const CameraModel& camera,
                   std::span<const Eigen::Vector3d> landmarks, const std::optional<PoseSE3>& gt, const PoseSE3& est) {
  const DetectorImage norm = min_max_normalized(query);
  std::vector<Rgb> px(norm.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const auto g = static_cast<unsigned char>(std::lround(norm.values[i] * 200.0));
    px[i] = {g, g, g};
  }
  for (const auto& x : landmarks) {
    if (gt && to_camera(*gt, x).z() > 0.0) draw_cross(px, norm.width, norm.height, project(camera, *gt, x), 1);
    if (to_camera(est, x).z() > 0.0) draw_cross(px, norm.width, norm.height, project(camera, est, x), 0);
  }
  save_ppm(path, norm.width, norm.height, px);
}

io::Json metrics_json(const PoseSE3& gt, const PoseSE3& est, std::span<const Eigen::Vector3d> landmarks,
                      const CameraModel& camera) {
  io::Json j{{"mtre_mm", mtre(gt, est, landmarks)},
             {"rotation_error_deg", rotation_error_deg(gt, est)},
             {"translation_error_mm", translation_error_mm(gt, est)}};
  try {
    j["mpd_mm"] = mpd(gt, est, landmarks, camera);
  } catch (const Error&) {
    j["mpd_mm"] = nullptr;
  }
  return j;
}

}  // namespace

std::vector<Eigen::Vector3d> evaluation_landmarks(const PipelineConfig& config, const Volume& volume,
                                                  const std::optional<fs::path>& landmarks_path) {
  std::vector<Eigen::Vector3d> out;
  if (landmarks_path) {
    if (!fs::exists(*landmarks_path)) throw UsageError("landmarks file not found: " + landmarks_path->string());
    const io::Json j = io::read_json(*landmarks_path);
    for (const auto& p : j.at("points")) out.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    if (out.empty()) fail(ErrorCode::kEmptyLandmarks, "landmarks file holds no points");
    return out;
  }
  const auto mask_path = config.resolve(config.mask);
  if (!fs::exists(mask_path)) throw UsageError("mask not found: " + mask_path.string());
  return sample_mask_points(load_mask(mask_path), volume, config.eval_landmarks, config.seed ^ kLandmarkSeedSalt)
      .points;
}

void cmd_phantom(const PipelineConfig& config) {
  const Phantom ph = make_phantom(three_ellipsoid_phantom_spec());
  const fs::path vol = config.resolve(config.volume);
  save_volume(vol, ph.volume);
  save_mask(config.resolve(config.mask), ph.mask, ph.volume);
}

fs::path cmd_templates(const PipelineConfig& config) {
  const Context ctx = open_context(config);
  const PoseSE3 center = center_pose(config, ctx.volume);
  const auto poses = template_pose_grid(center, config.grid.lao_rao_range_deg, config.grid.cra_cau_range_deg,
                                        config.grid.steps, ctx.volume.center());
  TemplateSet set;
  set.camera = ctx.camera;
  set.provider_name = ctx.provider->name();
  set.templates.reserve(poses.size());
  char key[16];
  for (std::size_t i = 0; i < poses.size(); ++i) {
    std::snprintf(key, sizeof key, "t%04zu", i);
    DetectorImage img = render_drr(ctx.volume, ctx.camera, poses[i], render_options(config));
    EmbeddingMap emb = embed_image(*ctx.provider, img, ctx.camera, poses[i], key);
    set.templates.push_back(Template{std::move(img), poses[i], std::move(emb)});
  }
  const fs::path dir = Workspace{config.workspace}.templates_dir() / grid_id(config, ctx.vhash);
  write_template_bundle(dir, set, config, ctx.vhash);
  return dir;
}

std::vector<fs::path> cmd_synth(const PipelineConfig& config) {
  const Context ctx = open_context(config);
  const PoseSE3 center = center_pose(config, ctx.volume);
  const fs::path dir = Workspace{config.workspace}.queries_dir();
  std::vector<fs::path> out;
  io::Json entries = io::Json::array();
  char stem[16];
  for (int i = 0; i < config.synth.count; ++i) {
    std::snprintf(stem, sizeof stem, "q%04d", i);
    const PoseSE3 pose = random_pose(center, config.synth.rot_bounds_deg, config.synth.trans_bounds_mm,
                                     derived_seed(config.seed, static_cast<std::size_t>(i)), ctx.volume.center());
    const DetectorImage img = render_drr(ctx.volume, ctx.camera, pose, render_options(config));
    const fs::path header = dir / (std::string(stem) + ".json");
    save_image_raw(header, img);
    save_pose(dir / (std::string(stem) + ".pose.json"), pose);
    entries.push_back({{"image", std::string(stem) + ".json"},
                       {"pose", std::string(stem) + ".pose.json"},
                       {"image_hash", io::file_hash(dir / (std::string(stem) + ".f32"))}});
    out.push_back(header);
  }
  io::write_json(dir / "manifest.json", io::Json{{"camera", camera_to_json(ctx.camera)},
                                                  {"volume_hash", ctx.vhash},
                                                  {"seed", config.seed},
                                                  {"rot_bounds_deg", config.synth.rot_bounds_deg},
                                                  {"trans_bounds_mm", config.synth.trans_bounds_mm},
                                                  {"queries", entries}});
  return out;
}

void cmd_render(const PipelineConfig& config, const fs::path& pose_path, const fs::path& out_path) {
  const Context ctx = open_context(config);
  if (!fs::exists(pose_path)) throw UsageError("pose file not found: " + pose_path.string());
  const DetectorImage img = render_drr(ctx.volume, ctx.camera, load_pose(pose_path), render_options(config));
  save_image_raw(out_path, img);
  fs::path pgm = out_path;
  pgm.replace_extension(".pgm");
  save_image_pgm(pgm, img);
}

CorrespondenceSet cmd_correspond(const PipelineConfig& config, const fs::path& query_path,
                                 const std::optional<fs::path>& pose_path) {
  const Context ctx = open_context(config);
  const DetectorImage query = load_query(query_path, ctx.camera);
  const auto pose = query_pose(query_path, pose_path);
  const Matching m = match_query(config, ctx, query, pose, query_name(query_path));
  const fs::path dir = Workspace{config.workspace}.results_dir() / query_name(query_path);
  save_correspondences(dir / "correspondences.jsonl", m.correspondences);
  if (auto h = top_heatmap(config, m)) write_heatmap(dir / "heatmap.pgm", *h);
  return m.correspondences;
}

RegisterOutput cmd_register(const PipelineConfig& config, const fs::path& query_path,
                            const std::optional<fs::path>& gt_path) {
  const Context ctx = open_context(config);
  const DetectorImage query = load_query(query_path, ctx.camera);
  RegisterOutput out;
  out.gt_pose = query_pose(query_path, gt_path);
  const Matching m = match_query(config, ctx, query, out.gt_pose, query_name(query_path));
  out.correspondences = m.correspondences;

  const fs::path dir = Workspace{config.workspace}.results_dir() / query_name(query_path);
  save_correspondences(dir / "correspondences.jsonl", m.correspondences);
  if (auto h = top_heatmap(config, m)) write_heatmap(dir / "heatmap.pgm", *h);

  RobustConfig robust = config.robust;
  robust.seed = config.seed;
  out.result = magsac_pnp(m.correspondences, ctx.camera, robust);
  if (config.refine_enabled) {
    RefineConfig refine = config.refine;
    if (refine.render_step_mm <= 0.0) refine.render_step_mm = config.render_step_mm;
    const RefineOutcome r = refine_pose(ctx.volume, ctx.camera, query, out.result.initial_pose, refine);
    out.result.refined_pose = r.pose;
    out.result.trace = r.trace;
  }
  const PoseSE3 final_pose = out.result.refined_pose.value_or(out.result.initial_pose);

  io::Json j = result_to_json(out.result);
  j["query"] = query_path.filename().string();
  j["grid_id"] = grid_id(config, ctx.vhash);
  j["provider"] = ctx.provider->name();
  j["correspondences"] = m.correspondences.size();
  const auto landmarks = evaluation_landmarks(config, ctx.volume, std::nullopt);
  if (out.gt_pose) {
    j["gt_pose"] = pose_to_json(*out.gt_pose);
    io::Json metrics{{"initial", metrics_json(*out.gt_pose, out.result.initial_pose, landmarks, ctx.camera)}};
    if (out.result.refined_pose) {
      metrics["refined"] = metrics_json(*out.gt_pose, *out.result.refined_pose, landmarks, ctx.camera);
    }
    j["metrics"] = metrics;
  }
  out.result_path = dir / "result.json";
  io::write_json(out.result_path, j);
  write_overlay(dir / "overlay.ppm", query, ctx.camera, landmarks, out.gt_pose, final_pose);
  return out;
}

EvalReport cmd_eval(const PipelineConfig& config, const fs::path& results_dir,
                    const std::optional<fs::path>& landmarks_path, GfrMetric metric, double threshold_hi_mm,
                    double threshold_lo_mm) {
  config.validate();
  if (!fs::is_directory(results_dir)) throw UsageError("results directory not found: " + results_dir.string());
  const Volume volume = load_pipeline_volume(config);
  const auto landmarks = evaluation_landmarks(config, volume, landmarks_path);
  const CameraModel camera = config.working_camera();

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(results_dir)) {
    const fs::path p = entry.path() / "result.json";
    if (entry.is_directory() && fs::exists(p)) files.push_back(p);
  }
  std::sort(files.begin(), files.end());

  std::vector<MetricRow> rows;
  for (const auto& f : files) {
    const io::Json j = io::read_json(f);
    if (!j.contains("gt_pose")) continue;
    const PoseSE3 gt = pose_from_json(j.at("gt_pose"));
    const PoseSE3 est = pose_from_json(j.at("refined_pose").is_null() ? j.at("initial_pose") : j.at("refined_pose"));
    MetricRow row;
    row.id = f.parent_path().filename().string();
    row.mtre_mm = mtre(gt, est, landmarks);
    try {
      row.mpd_mm = mpd(gt, est, landmarks, camera);
    } catch (const Error&) {
      row.mpd_mm = std::numeric_limits<double>::infinity();
    }
    rows.push_back(row);
  }
  if (rows.empty()) fail(ErrorCode::kEmptyResults, "no results with ground truth under " + results_dir.string());
  const EvalReport report = aggregate(rows, metric, threshold_hi_mm, threshold_lo_mm);
  io::write_json(results_dir / "eval.json", report_to_json(report));
  io::write_text(results_dir / "eval.csv", report_to_csv(report));
  return report;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Ray-embedding 2D/3D registration pipeline"};
  app.require_subcommand(1);
  std::string config_path, workspace, provider;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", config_path, "Pipeline config (JSON)");
  auto* ws_opt = app.add_option("--workspace", workspace, "Workspace directory");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads (0 = runtime default)");
  auto* provider_opt = app.add_option("--provider", provider, "oracle | patch | file:<dir>");
  int steps = 0;
  auto* steps_opt = app.add_option("--grid-steps", steps, "Template grid steps per axis");

  auto* phantom = app.add_subcommand("phantom", "Write the demo phantom volume and mask");
  auto* templates = app.add_subcommand("templates", "Render and embed the template grid");

  auto* synth = app.add_subcommand("synth", "Render synthetic queries at random poses");
  int count = 0;
  std::vector<double> rot_bounds, trans_bounds;
  auto* count_opt = synth->add_option("--count", count, "Number of queries");
  auto* rot_opt = synth->add_option("--rot-bounds", rot_bounds, "Rotation bounds, degrees (3 values)")->expected(3);
  auto* trans_opt = synth->add_option("--trans-bounds", trans_bounds, "Offset bounds, mm (3 values)")->expected(3);

  auto* render = app.add_subcommand("render", "Render a DRR at a pose");
  std::string pose_path, out_path;
  render->add_option("--pose", pose_path, "Pose JSON")->required();
  render->add_option("--out", out_path, "Output image header (.json)")->required();

  auto* correspond = app.add_subcommand("correspond", "Estimate 2D-3D correspondences for a query");
  std::string query_path, gt_path;
  correspond->add_option("--query", query_path, "Query image header (.json)")->required();
  auto* cpose_opt = correspond->add_option("--pose", gt_path, "Query pose (needed by the oracle provider)");

  auto* reg = app.add_subcommand("register", "Register a query image");
  reg->add_option("--query", query_path, "Query image header (.json)")->required();
  auto* gt_opt = reg->add_option("--gt", gt_path, "Ground-truth pose");
  bool no_refine = false;
  reg->add_flag("--no-refine", no_refine, "Skip intensity refinement");

  auto* eval = app.add_subcommand("eval", "Aggregate registration results");
  std::string results_dir, landmarks_path, metric;
  double thr_hi = 10.0, thr_lo = 5.0;
  auto* results_opt = eval->add_option("--results", results_dir, "Results directory (default <ws>/results)");
  auto* lm_opt = eval->add_option("--landmarks", landmarks_path, "Landmarks JSON");
  eval->add_option("--metric", metric, "Metric for GFR: mtre | mpd")->required()->check(CLI::IsMember({"mtre", "mpd"}));
  eval->add_option("--gfr-thresholds", thr_hi, "Loose GFR threshold, mm");
  eval->add_option("--gfr-strict", thr_lo, "Strict GFR threshold, mm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    PipelineConfig config;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw UsageError("config file not found: " + config_path);
      config = load_config(config_path);
    }
    if (*ws_opt) config.workspace = workspace;
    if (*seed_opt) config.seed = seed;
    if (*threads_opt) config.threads = threads;
    if (*provider_opt) config.provider = provider;
    if (*steps_opt) config.grid.steps = steps;
    if (*count_opt) config.synth.count = count;
    if (*rot_opt) std::copy_n(rot_bounds.begin(), 3, config.synth.rot_bounds_deg.begin());
    if (*trans_opt) std::copy_n(trans_bounds.begin(), 3, config.synth.trans_bounds_mm.begin());
    if (no_refine) config.refine_enabled = false;
#ifdef _OPENMP
    if (config.threads > 0) omp_set_num_threads(config.threads);
#endif

    if (*phantom) {
      cmd_phantom(config);
    } else if (*templates) {
      std::cout << cmd_templates(config).string() << "\n";
    } else if (*synth) {
      for (const auto& p : cmd_synth(config)) std::cout << p.string() << "\n";
    } else if (*render) {
      cmd_render(config, pose_path, out_path);
    } else if (*correspond) {
      const auto set = cmd_correspond(config, query_path,
                                      *cpose_opt ? std::optional<fs::path>(gt_path) : std::nullopt);
      std::cout << set.size() << " correspondences\n";
    } else if (*reg) {
      const auto out = cmd_register(config, query_path, *gt_opt ? std::optional<fs::path>(gt_path) : std::nullopt);
      std::cout << out.result_path.string() << "\n";
    } else if (*eval) {
      const fs::path dir = *results_opt ? fs::path(results_dir) : Workspace{config.workspace}.results_dir();
      const auto report = cmd_eval(config, dir, *lm_opt ? std::optional<fs::path>(landmarks_path) : std::nullopt,
                                   gfr_metric_from_string(metric), thr_hi, thr_lo);
      std::cout << "median mTRE " << report.mtre.p50 << " mm, median mPD " << report.mpd.p50 << " mm, GFR "
                << report.gfr10 << " / " << report.gfr5 << "\n";
    }
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::kNoValidHypothesis:
      case ErrorCode::kDegenerateConfiguration:
      case ErrorCode::kTooFewVisibleTemplates:
        return kExitRegistrationFailure;
      case ErrorCode::kUnreadableFile:
      case ErrorCode::kIoError:
      case ErrorCode::kBadHeader:
      case ErrorCode::kUnsupportedDatatype:
      case ErrorCode::kBadMagic:
        return kExitIo;
      default:
        return kExitUsage;
    }
  } catch (const io::Json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"rayemb"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace rayemb::cli

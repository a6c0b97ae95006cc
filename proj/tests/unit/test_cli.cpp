#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "rayemb/cli/commands.hpp"
#include "rayemb/cli/config.hpp"
#include "rayemb/cli/workspace.hpp"
#include "rayemb/error.hpp"
#include "test_util.hpp"

using namespace rayemb;
using rayemb::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Small, fast pipeline: 48 px detector, 3x3 grid, few points.
io::Json small_config() {
  return io::Json{{"image_size", 48},
                  {"render_step_mm", 1.0},
                  {"grid", {{"steps", 3}}},
                  {"sampling", {{"points", 200}, {"top_k", 100}, {"tta_rounds", 3}}},
                  {"refine", {{"enabled", false}, {"iterations", 6}, {"scales", {4, 2}}, {"render_step_mm", 1.0}}},
                  {"synth", {{"count", 2}, {"rot_bounds_deg", {5, 5, 5}}, {"trans_bounds_mm", {5, 5, 5}}}},
                  {"seed", 5}};
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    config_path_ = dir_->path() / "config.json";
    io::Json c = small_config();
    c["workspace"] = (dir_->path() / "ws").string();
    io::write_json(config_path_, c);
    ASSERT_EQ(run({"phantom"}), 0);
    ASSERT_EQ(run({"templates"}), 0);
    ASSERT_EQ(run({"synth"}), 0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static int run(std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", config_path_.string()});
    return cli::run(args);
  }
  static fs::path ws() { return dir_->path() / "ws"; }

  static TempDir* dir_;
  static fs::path config_path_;
};
TempDir* CliTest::dir_ = nullptr;
fs::path CliTest::config_path_;

}  // namespace

TEST(CliConfig, RejectsUnknownKeysAndRoundTrips) {
  EXPECT_THROW(cli::config_from_json(io::Json{{"imagesize", 3}}), Error);
  EXPECT_THROW(cli::config_from_json(io::Json{{"grid", {{"step", 3}}}}), Error);
  const auto c = cli::config_from_json(small_config());
  EXPECT_EQ(c.image_size, 48);
  EXPECT_EQ(c.grid.steps, 3);
  EXPECT_FALSE(c.refine_enabled);
  const auto again = cli::config_from_json(cli::config_to_json(c));
  EXPECT_EQ(cli::config_to_json(again), cli::config_to_json(c));
}

TEST(CliConfig, Validation) {
  cli::PipelineConfig c;
  c.validate();
  c.sampling.top_k = c.sampling.points + 1;
  EXPECT_THROW(c.validate(), Error);
  c = cli::PipelineConfig{};
  c.grid.steps = 1;
  EXPECT_THROW(c.validate(), Error);
  c = cli::PipelineConfig{};
  c.refine.scales = {5};
  EXPECT_THROW(c.validate(), Error);
}

TEST(CliConfig, WorkingCameraKeepsPhysicalDetector) {
  cli::PipelineConfig c;
  const CameraModel w = c.working_camera();
  EXPECT_EQ(w.width, 224);
  EXPECT_NEAR(w.width * w.pixel_mm, 1536 * 0.194, 1e-9);
  EXPECT_NEAR(w.principal_px.x(), 111.5, 1e-12);
}

TEST_F(CliTest, TemplateBundleIsReproducible) {
  const fs::path templates = ws() / "templates";
  ASSERT_TRUE(fs::is_directory(templates));
  const auto bundle = fs::directory_iterator(templates)->path();
  const std::string first = slurp(bundle / "manifest.json");
  ASSERT_EQ(run({"templates"}), 0);
  EXPECT_EQ(slurp(bundle / "manifest.json"), first);
  const auto m = io::Json::parse(first);
  EXPECT_EQ(m["count"], 9);
  EXPECT_EQ(m["dim"], 6);
}

TEST_F(CliTest, ZeroRangeGridGivesIdenticalTemplates) {
  TempDir tmp("cli_zero");
  io::Json c = small_config();
  c["workspace"] = ws().string();
  c["grid"] = {{"steps", 2}, {"lao_rao_range_deg", 0.0}, {"cra_cau_range_deg", 0.0}};
  const fs::path cfg = tmp.path() / "zero.json";
  io::write_json(cfg, c);
  ASSERT_EQ(cli::run({"--config", cfg.string(), "templates"}), 0);
  const cli::PipelineConfig pc = cli::load_config(cfg);
  const fs::path bundle = ws() / "templates" / cli::grid_id(pc, cli::volume_hash(pc));
  const std::string ref = slurp(bundle / "t0000.f32");
  ASSERT_FALSE(ref.empty());
  for (const char* t : {"t0001.f32", "t0002.f32", "t0003.f32"}) EXPECT_EQ(slurp(bundle / t), ref) << t;
}

TEST_F(CliTest, SynthWritesQueriesAndPoses) {
  for (const char* q : {"q0000", "q0001"}) {
    EXPECT_TRUE(fs::exists(ws() / "queries" / (std::string(q) + ".json")));
    EXPECT_TRUE(fs::exists(ws() / "queries" / (std::string(q) + ".pose.json")));
  }
  EXPECT_FALSE(fs::exists(ws() / "queries" / "q0002.json"));
  EXPECT_TRUE(fs::exists(ws() / "queries" / "manifest.json"));
}

TEST_F(CliTest, SynthZeroBoundsGivesCentrePose) {
  TempDir tmp("cli_synth");
  io::Json c = small_config();
  c["workspace"] = (tmp.path() / "ws").string();
  c["volume"] = (ws() / "volume" / "volume.json").string();
  c["mask"] = (ws() / "volume" / "mask.json").string();
  c["synth"] = {{"count", 2}, {"rot_bounds_deg", {0, 0, 0}}, {"trans_bounds_mm", {0, 0, 0}}};
  const fs::path cfg = tmp.path() / "c.json";
  io::write_json(cfg, c);
  ASSERT_EQ(cli::run({"--config", cfg.string(), "synth"}), 0);
  const fs::path q = tmp.path() / "ws" / "queries";
  EXPECT_EQ(slurp(q / "q0000.f32"), slurp(q / "q0001.f32"));
  EXPECT_EQ(slurp(q / "q0000.pose.json"), slurp(q / "q0001.pose.json"));
}

TEST_F(CliTest, RegisterWritesMetricsAndIsDeterministic) {
  const std::string query = (ws() / "queries" / "q0000.json").string();
  ASSERT_EQ(run({"register", "--query", query}), 0);
  const fs::path result = ws() / "results" / "q0000" / "result.json";
  const std::string first = slurp(result);
  const auto j = io::Json::parse(first);
  for (const char* k : {"initial_pose", "refined_pose", "inliers", "score", "trace", "gt_pose", "metrics"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  for (const char* k : {"mtre_mm", "rotation_error_deg", "translation_error_mm", "mpd_mm"}) {
    EXPECT_TRUE(j["metrics"]["initial"].contains(k)) << k;
  }
  EXPECT_LT(j["metrics"]["initial"]["mtre_mm"].get<double>(), 2.0);
  EXPECT_TRUE(fs::exists(ws() / "results" / "q0000" / "correspondences.jsonl"));
  EXPECT_TRUE(fs::exists(ws() / "results" / "q0000" / "overlay.ppm"));
  EXPECT_TRUE(fs::exists(ws() / "results" / "q0000" / "heatmap.pgm"));

  ASSERT_EQ(run({"register", "--query", query}), 0);
  EXPECT_EQ(slurp(result), first);
}

TEST_F(CliTest, RegisterWithRefinementAddsRefinedPose) {
  const std::string query = (ws() / "queries" / "q0001.json").string();
  TempDir tmp("cli_refine");
  io::Json c = small_config();
  c["workspace"] = ws().string();
  c["refine"]["enabled"] = true;
  const fs::path cfg = tmp.path() / "c.json";
  io::write_json(cfg, c);
  ASSERT_EQ(cli::run({"--config", cfg.string(), "register", "--query", query}), 0);
  const auto j = io::Json::parse(slurp(ws() / "results" / "q0001" / "result.json"));
  EXPECT_FALSE(j["refined_pose"].is_null());
  EXPECT_TRUE(j["metrics"].contains("refined"));
}

TEST_F(CliTest, CorrespondWritesJsonLines) {
  const std::string query = (ws() / "queries" / "q0001.json").string();
  ASSERT_EQ(run({"correspond", "--query", query}), 0);
  const auto set = load_correspondences(ws() / "results" / "q0001" / "correspondences.jsonl");
  EXPECT_EQ(set.size(), 100u);
}

TEST_F(CliTest, MissingBundleIsUsageError) {
  const std::string query = (ws() / "queries" / "q0000.json").string();
  EXPECT_EQ(run({"--grid-steps", "4", "register", "--query", query}), cli::kExitUsage);
}

TEST_F(CliTest, MissingQueryIsUsageErrorAndCorruptQueryIsIoError) {
  EXPECT_EQ(run({"register", "--query", (ws() / "queries" / "nope.json").string()}), cli::kExitUsage);
  TempDir tmp("cli_corrupt");
  const fs::path bad = tmp.path() / "bad.json";
  {
    std::ofstream(bad) << "{\"width\": 48, \"height\"";
  }
  EXPECT_EQ(run({"register", "--query", bad.string(), "--gt", (ws() / "queries" / "q0000.pose.json").string()}),
            cli::kExitIo);
}

TEST_F(CliTest, BadArgumentsAreUsageErrors) {
  EXPECT_EQ(run({"eval", "--metric", "rmse"}), cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"--config", "/nonexistent/cfg.json", "phantom"}), cli::kExitUsage);
}

TEST_F(CliTest, EvalOnCraftedResults) {
  TempDir tmp("cli_eval");
  const PoseSE3 gt(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 600));
  const double offsets[] = {2.0, 6.0, 12.0};
  for (int i = 0; i < 3; ++i) {
    const PoseSE3 est(gt.rotation(), gt.translation() + Eigen::Vector3d(0, 0, offsets[i]));
    const fs::path d = tmp.path() / ("r" + std::to_string(i));
    fs::create_directories(d);
    io::write_json(d / "result.json", io::Json{{"initial_pose", pose_to_json(est)},
                                               {"refined_pose", nullptr},
                                               {"gt_pose", pose_to_json(gt)}});
  }
  io::write_json(tmp.path() / "lm.json", io::Json{{"points", {{0, 0, 0}, {10, 5, -3}}}});
  ASSERT_EQ(run({"eval", "--results", tmp.path().string(), "--landmarks", (tmp.path() / "lm.json").string(),
                 "--metric", "mtre"}),
            0);
  const auto j = io::Json::parse(slurp(tmp.path() / "eval.json"));
  EXPECT_NEAR(j["gfr10"].get<double>(), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(j["gfr5"].get<double>(), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(j["percentiles"]["mtre_mm"]["p50"].get<double>(), 6.0, 1e-9);
  EXPECT_EQ(slurp(tmp.path() / "eval.csv").substr(0, 17), "id,mtre_mm,mpd_mm");
}

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rayemb/drr.hpp"
#include "rayemb/error.hpp"
#include "rayemb/evaluation.hpp"
#include "rayemb/phantom.hpp"
#include "rayemb/registration.hpp"
#include "test_util.hpp"

using namespace rayemb;

namespace {

const CameraModel kCamera = CameraModel::flat_panel_1536(1020.0);

PoseSE3 near_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(-0.3, 0.3), t(-20.0, 20.0);
  return PoseSE3(so3_exp(Eigen::Vector3d(a(rng), a(rng), a(rng))), Eigen::Vector3d(t(rng), t(rng), 600 + t(rng)));
}

CorrespondenceSet make_items(const PoseSE3& pose, int n, std::mt19937_64& rng, double noise_px = 0.0,
                             double outlier_fraction = 0.0) {
  std::uniform_real_distribution<double> p(-60.0, 60.0), px(0.0, 1535.0), coin(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, noise_px > 0 ? noise_px : 1.0);
  CorrespondenceSet out;
  const int outliers = static_cast<int>(std::lround(outlier_fraction * n));
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d x(p(rng), p(rng), p(rng));
    Eigen::Vector2d uv = project(kCamera, pose, x);
    if (i < outliers) {
      uv = {px(rng), px(rng)};
    } else if (noise_px > 0) {
      uv += Eigen::Vector2d(noise(rng), noise(rng));
    }
    out.push_back({x, uv, 1.0});
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace

TEST(Reprojection, ErrorsAndBehindCamera) {
  const PoseSE3 pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 500));
  CorrespondenceSet items{{{0, 0, 0}, {767.5, 770.5}, 1.0}, {{0, 0, -600}, {0, 0}, 1.0}};
  const auto e = reprojection_errors(pose, items, kCamera);
  EXPECT_NEAR(e[0], 3.0, 1e-12);
  EXPECT_TRUE(std::isinf(e[1]));
}

TEST(Pnp, SixPointsRecoverPoseExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const PoseSE3 gt = near_pose(rng);
    const CorrespondenceSet items = make_items(gt, 6, rng);
    const auto candidates = pnp_minimal(items, kCamera);
    ASSERT_FALSE(candidates.empty());
    const PoseSE3& best = candidates.front();
    EXPECT_LT(rotation_error_deg(gt, best) * M_PI / 180.0, 1e-6);
    EXPECT_LT(translation_error_mm(gt, best), 1e-4);
    EXPECT_LT(reprojection_rms(best, items, kCamera), 1e-8);
  }
}

TEST(Pnp, FourPointsRecoverPose) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const PoseSE3 gt = near_pose(rng);
    const CorrespondenceSet items = make_items(gt, 4, rng);
    const auto candidates = pnp_minimal(items, kCamera);
    ASSERT_FALSE(candidates.empty());
    EXPECT_LT(translation_error_mm(gt, candidates.front()), 1e-4);
  }
}

TEST(Pnp, CoplanarPointsUseThreePointSolve) {
  std::mt19937_64 rng(3);
  const PoseSE3 gt = near_pose(rng);
  std::uniform_real_distribution<double> p(-60.0, 60.0);
  CorrespondenceSet items;
  for (int i = 0; i < 10; ++i) {
    const Eigen::Vector3d x(p(rng), p(rng), 5.0);
    items.push_back({x, project(kCamera, gt, x), 1.0});
  }
  const auto candidates = pnp_minimal(items, kCamera);
  ASSERT_FALSE(candidates.empty());
  EXPECT_LT(reprojection_rms(candidates.front(), items, kCamera), 1e-6);
}

TEST(Pnp, CollinearPointsAreDegenerate) {
  const PoseSE3 gt(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 600));
  CorrespondenceSet items;
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3d x = Eigen::Vector3d(1, 2, 3) * (i - 4.0);
    items.push_back({x, project(kCamera, gt, x), 1.0});
  }
  try {
    pnp_minimal(items, kCamera);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateConfiguration);
  }
}

TEST(Pnp, PolishReducesNoisyResidual) {
  std::mt19937_64 rng(4);
  const PoseSE3 gt = near_pose(rng);
  const CorrespondenceSet items = make_items(gt, 40, rng, 0.5);
  const PoseSE3 start = se3_exp((Vector6d() << 0.01, -0.01, 0.005, 2.0, -1.0, 3.0).finished()) * gt;
  const PoseSE3 polished = polish_pose(start, items, kCamera);
  EXPECT_LT(reprojection_rms(polished, items, kCamera), reprojection_rms(start, items, kCamera));
  EXPECT_LE(reprojection_rms(polished, items, kCamera), reprojection_rms(gt, items, kCamera) + 1e-9);
}

TEST(MarginalWeight, ShapeAndSupport) {
  RobustConfig c;
  EXPECT_DOUBLE_EQ(marginal_inlier_weight(0.0, c), 1.0);
  EXPECT_EQ(marginal_inlier_weight(3.04 * c.sigma_max_px, c), 0.0);
  EXPECT_EQ(marginal_inlier_weight(std::numeric_limits<double>::infinity(), c), 0.0);
  double prev = 1.0;
  for (double r = 0.1; r < 35.0; r += 0.1) {
    const double w = marginal_inlier_weight(r, c);
    EXPECT_LE(w, prev);
    EXPECT_GE(w, 0.0);
    prev = w;
  }
  // Direct evaluation of the quadrature mean at r = 5.
  double expected = 0.0;
  for (int j = 0; j < 10; ++j) {
    const double s = 10.0 * (j + 0.5) / 10.0;
    if (5.0 <= std::sqrt(-2.0 * std::log(0.01)) * s) expected += std::exp(-25.0 / (2 * s * s));
  }
  EXPECT_NEAR(marginal_inlier_weight(5.0, c), expected / 10.0, 1e-12);
}

TEST(Magsac, HandlesFortyPercentOutliers) {
  std::mt19937_64 rng(5);
  std::vector<double> rot, trans;
  for (int seed = 0; seed < 10; ++seed) {
    const PoseSE3 gt = near_pose(rng);
    const CorrespondenceSet items = make_items(gt, 100, rng, 1.0, 0.4);
    RobustConfig c;
    c.seed = seed;
    const auto r = magsac_pnp(items, kCamera, c);
    rot.push_back(rotation_error_deg(gt, r.initial_pose));
    trans.push_back(translation_error_mm(gt, r.initial_pose));
    EXPECT_LE(r.polished_cost, r.raw_cost + 1e-12);
    EXPECT_EQ(r.inlier_flags.size(), items.size());
    EXPECT_GT(r.hypotheses, 0);
  }
  EXPECT_LT(percentile(rot, 50), 0.5);
  EXPECT_LT(percentile(trans, 50), 1.0);
}

TEST(Magsac, CleanDataMatchesPnp) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const PoseSE3 gt = near_pose(rng);
    const CorrespondenceSet items = make_items(gt, 30, rng);
    const PoseSE3 plain = pnp_minimal(items, kCamera).front();
    const auto robust = magsac_pnp(items, kCamera, RobustConfig{});
    EXPECT_LT((robust.initial_pose.rotation() - plain.rotation()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((robust.initial_pose.translation() - plain.translation()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_TRUE(std::all_of(robust.inlier_flags.begin(), robust.inlier_flags.end(), [](bool b) { return b; }));
  }
}

TEST(Magsac, SeedDeterminism) {
  std::mt19937_64 rng(7);
  const PoseSE3 gt = near_pose(rng);
  const CorrespondenceSet items = make_items(gt, 80, rng, 1.0, 0.3);
  RobustConfig c;
  c.seed = 99;
  const auto a = magsac_pnp(items, kCamera, c);
  const auto b = magsac_pnp(items, kCamera, c);
  EXPECT_EQ(a.initial_pose.rotation(), b.initial_pose.rotation());
  EXPECT_EQ(a.initial_pose.translation(), b.initial_pose.translation());
  EXPECT_EQ(a.inlier_flags, b.inlier_flags);
  EXPECT_EQ(a.hypotheses, b.hypotheses);
}

TEST(Magsac, TooFewCorrespondences) {
  std::mt19937_64 rng(8);
  const CorrespondenceSet items = make_items(near_pose(rng), 3, rng);
  EXPECT_THROW(magsac_pnp(items, kCamera, RobustConfig{}), Error);
}

TEST(Magsac, ErrorGrowsWithOutlierFraction) {
  std::mt19937_64 rng(9);
  const PoseSE3 gt = near_pose(rng);
  const CorrespondenceSet clean = make_items(gt, 100, rng, 1.0);
  std::vector<double> err;
  for (double frac : {0.0, 0.9}) {
    CorrespondenceSet items = clean;
    std::mt19937_64 local(10);
    std::uniform_real_distribution<double> px(0.0, 1535.0);
    for (int i = 0; i < static_cast<int>(frac * 100); ++i) items[i].pixel = {px(local), px(local)};
    RobustConfig c;
    c.seed = 1;
    err.push_back(translation_error_mm(gt, magsac_pnp(items, kCamera, c).initial_pose));
  }
  EXPECT_LT(err[0], 1.0);
  EXPECT_GE(err[1], err[0]);
}

TEST(RobustConfig, Validation) {
  RobustConfig c;
  c.validate();
  c.sigma_max_px = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = RobustConfig{};
  c.confidence = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = RobustConfig{};
  c.min_sample = 2;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Zncc, AffineInvariance) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(200), b(200), c(200);
    for (int i = 0; i < 200; ++i) {
      a[i] = n(rng);
      b[i] = 0.7 * a[i] + n(rng);
    }
    const double scale = std::exp(n(rng)), offset = 10.0 * n(rng);
    for (int i = 0; i < 200; ++i) c[i] = scale * b[i] + offset;
    EXPECT_NEAR(zncc(a, b), zncc(a, c), 1e-9);
    EXPECT_NEAR(zncc(a, a), 1.0, 1e-12);
  }
  const std::vector<double> flat(10, 3.0), ramp{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(zncc(flat, ramp), 0.0);
  std::vector<double> neg(ramp);
  for (auto& x : neg) x = -x;
  EXPECT_NEAR(zncc(ramp, neg), -1.0, 1e-12);
}

class RefineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    phantom_ = new Phantom(make_phantom(three_ellipsoid_phantom_spec()));
  }
  static void TearDownTestSuite() {
    delete phantom_;
    phantom_ = nullptr;
  }
  static Phantom* phantom_;
  const CameraModel camera_ = kCamera.resized(128, 128);
  const PoseSE3 gt_{Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 600)};

  DetectorImage query() const {
    RenderOptions o;
    o.step_mm = 1.0;
    return render_drr(phantom_->volume, camera_, gt_, o);
  }
  RefineConfig config() const {
    RefineConfig c;
    c.render_step_mm = 1.0;
    c.scales = {4, 2};
    c.iterations = 20;
    return c;
  }
};
Phantom* RefineTest::phantom_ = nullptr;

TEST_F(RefineTest, ZeroIterationsReturnsInit) {
  RefineConfig c = config();
  c.iterations = 0;
  const PoseSE3 init = se3_exp((Vector6d() << 0.01, 0, 0, 1, 2, 3).finished()) * gt_;
  const auto out = refine_pose(phantom_->volume, camera_, query(), init, c);
  EXPECT_EQ(out.pose.rotation(), init.rotation());
  EXPECT_EQ(out.pose.translation(), init.translation());
}

TEST_F(RefineTest, GroundTruthIsStationary) {
  const auto out = refine_pose(phantom_->volume, camera_, query(), gt_, config());
  EXPECT_GE(out.final_objective, out.initial_objective);
  EXPECT_LT(translation_error_mm(gt_, out.pose), 0.5);
  EXPECT_LT(rotation_error_deg(gt_, out.pose), 0.1);
}

TEST_F(RefineTest, ImprovesPerturbedPose) {
  const PoseSE3 init = rotate_about_pivot(gt_, so3_exp(Eigen::Vector3d(0.02, -0.02, 0.0)),
                                          phantom_->volume.center(), Eigen::Vector3d(3, -2, 0));
  const auto landmarks = std::vector<Eigen::Vector3d>{{-30, -30, -30}, {30, 30, 30}, {0, 20, -20}, {10, -5, 0}};
  const auto out = refine_pose(phantom_->volume, camera_, query(), init, config());
  EXPECT_GT(out.final_objective, out.initial_objective);
  EXPECT_LT(mtre(gt_, out.pose, landmarks), mtre(gt_, init, landmarks));
  EXPECT_FALSE(out.trace.empty());
}

TEST_F(RefineTest, ObjectiveInvariantToAffineIntensity) {
  const DetectorImage q = query();
  DetectorImage scaled = q;
  for (auto& x : scaled.values) x = 3.7 * x - 0.25;
  const std::vector<int> scales{4, 2};
  const PoseSE3 pose = se3_exp((Vector6d() << 0.01, 0.02, 0, 1, 0, 2).finished()) * gt_;
  const auto a = query_pyramid(q, scales);
  const auto b = query_pyramid(scaled, scales);
  EXPECT_NEAR(multiscale_ncc(phantom_->volume, camera_, pose, a, scales, 1.0),
              multiscale_ncc(phantom_->volume, camera_, pose, b, scales, 1.0), 1e-9);
}

TEST(RefineConfig, Validation) {
  RefineConfig c;
  c.validate();
  c.scales = {};
  EXPECT_THROW(c.validate(), Error);
  c = RefineConfig{};
  c.iterations = -1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(ResultJson, Keys) {
  RegistrationResult r;
  r.inlier_flags = {true, false};
  r.trace = {{0, 0.5}, {1, 0.6}};
  const auto j = result_to_json(r);
  for (const char* k : {"initial_pose", "refined_pose", "inliers", "score", "trace"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_TRUE(j["refined_pose"].is_null());
  EXPECT_EQ(j["trace"].size(), 2u);
}
